"""Pointwise constitutive laws: co-energy density, flux b(h), and (where it
exists) the 2x2 permeability Jacobian.

Three laws are provided:

* ``LinearMaterial``     b = mu0 h
* ``ArctanMaterial``     b = mu0 h + (2 Js / pi) arctan(|h|/A) h/|h|
* ``HysteresisMaterial`` b = mu0 h + sum_k w_k J_k(h), where each pinned cell
  polarization J_k maximizes <h, J> - U(|J|) - chi_k |J - J_p| over the open
  disc |J| < Js, with U(s) = -(2 A Js / pi) log(cos(pi s / (2 Js))).

All evaluations accept a single field vector of shape (2,) or a batch of
shape (n, 2) and are pure given (h, state). The hysteresis law is only once
differentiable: requesting its Jacobian raises ``CapabilityError``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MU0 = 4e-7 * np.pi

# below this |h| the saturation term uses its first-order Taylor form
H_EPS = 1e-10
# polarizations are kept strictly inside the saturation disc
J_MARGIN = 1e-9


class CapabilityError(TypeError):
    """Operation not supported by this material law."""


class InnerSolveError(RuntimeError):
    """The cell maximization did not converge; carries the last residual."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"cell maximization stalled after {iterations} iterations "
            f"(residual {residual:.3e} A/m)")
        self.residual = residual
        self.iterations = iterations


def _norm(h: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(h * h, axis=-1))


def _sat_factor(s: np.ndarray, A: float, Js: float) -> np.ndarray:
    """(2 Js / pi) arctan(s/A) / s, with the s -> 0 limit 2 Js / (pi A)."""
    s_safe = np.where(s < H_EPS, 1.0, s)
    return np.where(s < H_EPS, 2.0 * Js / (np.pi * A),
                    (2.0 * Js / np.pi) * np.arctan(s_safe / A) / s_safe)


def _sat_energy(s: np.ndarray, A: float, Js: float) -> np.ndarray:
    """Integral of the saturation curve: (2 Js/pi)(s atan(s/A) - A/2 log(1+s^2/A^2)).

    Normalized to vanish at s = 0; equals the Legendre transform of the
    internal energy U, so the chi=0 hysteresis cell reduces to it exactly.
    """
    return (2.0 * Js / np.pi) * (s * np.arctan(s / A)
                                 - 0.5 * A * np.log1p((s / A) ** 2))


@dataclass(frozen=True)
class LinearMaterial:
    """b = mu0 h (used for air and copper, and as a degenerate iron law)."""

    mu0: float = MU0
    has_jacobian = True

    def slope_bounds(self) -> tuple[float, float]:
        return self.mu0, self.mu0

    def coenergy(self, h, state=None):
        h = np.asarray(h, dtype=float)
        return 0.5 * self.mu0 * np.sum(h * h, axis=-1)

    def flux(self, h, state=None):
        return self.mu0 * np.asarray(h, dtype=float)

    def jacobian(self, h):
        h = np.asarray(h, dtype=float)
        out = np.zeros(h.shape[:-1] + (2, 2))
        out[..., 0, 0] = self.mu0
        out[..., 1, 1] = self.mu0
        return out


@dataclass(frozen=True)
class ArctanParams:
    mu0: float = MU0
    A: float = 90.302
    Js: float = 1.5733

    def __post_init__(self):
        if not (self.mu0 > 0 and self.A > 0 and self.Js > 0):
            raise ValueError("arctan law parameters must be strictly positive")


@dataclass(frozen=True)
class ArctanMaterial:
    """Smooth saturating law b = mu0 h + (2 Js/pi) arctan(|h|/A) h/|h|."""

    params: ArctanParams = ArctanParams()
    has_jacobian = True

    @property
    def mu0(self):
        return self.params.mu0

    def slope_bounds(self) -> tuple[float, float]:
        p = self.params
        return p.mu0, p.mu0 + 2.0 * p.Js / (np.pi * p.A)

    def coenergy(self, h, state=None):
        p = self.params
        h = np.asarray(h, dtype=float)
        s = _norm(h)
        return 0.5 * p.mu0 * s * s + _sat_energy(s, p.A, p.Js)

    def flux(self, h, state=None):
        p = self.params
        h = np.asarray(h, dtype=float)
        s = _norm(h)[..., None]
        return p.mu0 * h + _sat_factor(s[..., 0], p.A, p.Js)[..., None] * h

    def jacobian(self, h):
        """mu0 I + (2Js/pi)[ (atan(|h|/A)/|h|)(I - hh^T/|h|^2)
        + (1/(A(1+|h|^2/A^2))) hh^T/|h|^2 ]; at h -> 0 the isotropic limit."""
        p = self.params
        h = np.asarray(h, dtype=float)
        s = _norm(h)
        tang = _sat_factor(s, p.A, p.Js)
        radial = (2.0 * p.Js / np.pi) / (p.A * (1.0 + (s / p.A) ** 2))
        s_safe = np.where(s < H_EPS, 1.0, s)
        hn = h / s_safe[..., None]
        dyad = hn[..., :, None] * hn[..., None, :]
        eye = np.eye(2)
        out = (p.mu0 + tang)[..., None, None] * eye \
            + (radial - tang)[..., None, None] * dyad
        limit = (p.mu0 + 2.0 * p.Js / (np.pi * p.A)) * eye
        small = s < H_EPS
        if np.any(small):
            out = np.where(small[..., None, None], limit, out)
        return out


@dataclass(frozen=True)
class HysteresisParams:
    mu0: float = MU0
    A: float = 90.302
    Js: float = 1.5733
    # (weight, pinning strength chi [A/m]) per cell; defaults cover one
    # reversible cell plus three pinned ones
    cells: tuple[tuple[float, float], ...] = (
        (0.4, 0.0), (0.3, 20.0), (0.2, 60.0), (0.1, 120.0))

    def __post_init__(self):
        if not (self.mu0 > 0 and self.A > 0 and self.Js > 0):
            raise ValueError("hysteresis law parameters must be strictly positive")
        if len(self.cells) < 1:
            raise ValueError("at least one cell is required")
        for w, chi in self.cells:
            if w < 0 or chi < 0:
                raise ValueError("cell weights and pinning strengths must be >= 0")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.cells])

    @property
    def chis(self) -> np.ndarray:
        return np.array([chi for _, chi in self.cells])


@dataclass
class HysteresisState:
    """Pinned cell polarizations at a set of evaluation points.

    j_p has shape (n_points, n_cells, 2); every |J_p| stays strictly below Js.
    """

    j_p: np.ndarray

    @classmethod
    def zeros(cls, n_points: int, n_cells: int) -> "HysteresisState":
        return cls(np.zeros((n_points, n_cells, 2)))

    @property
    def n_points(self) -> int:
        return self.j_p.shape[0]

    def copy(self) -> "HysteresisState":
        return HysteresisState(self.j_p.copy())


def _u_prime(s, A, Js):
    """U'(s) = A tan(pi s / (2 Js))."""
    return A * np.tan(0.5 * np.pi * s / Js)


def _u_value(s, A, Js):
    """U(s) = -(2 A Js / pi) log(cos(pi s / (2 Js)))."""
    return -(2.0 * A * Js / np.pi) * np.log(np.cos(0.5 * np.pi * s / Js))


def _u_prime_over_s(s, A, Js):
    """U'(s)/s with its limit pi A / (2 Js) at s = 0."""
    tiny = s < 1e-12 * Js
    s_safe = np.where(tiny, 1.0, s)
    return np.where(tiny, 0.5 * np.pi * A / Js,
                    A * np.tan(0.5 * np.pi * s_safe / Js) / s_safe)


def _u_second(s, A, Js):
    """U''(s) = (pi A / (2 Js)) (1 + tan^2(pi s / (2 Js)))."""
    t = np.tan(0.5 * np.pi * s / Js)
    return 0.5 * np.pi * A / Js * (1.0 + t * t)


def _anhysteretic_j(h, A, Js):
    """chi = 0 maximizer: J = (2 Js / pi) arctan(|h|/A) h/|h|."""
    s = _norm(h)
    return _sat_factor(s, A, Js)[..., None] * h


def maximize_cell(params: HysteresisParams, chi: float,
                  h: np.ndarray, j_p: np.ndarray,
                  tol: float = 1e-12, maxit: int = 200) -> np.ndarray:
    """Maximize <h, J> - U(|J|) - chi |J - J_p| over the disc |J| < Js.

    Vectorized over leading axes of h / j_p. Two phases: the subgradient
    sticking test at J = J_p, then a damped Newton iteration on the smooth
    stationarity system for the slipping points, started from the chi = 0
    solution. Steps are clamped so |J| <= (1 - 1e-9) Js and iterates never
    coincide with J_p.
    """
    A, Js = params.A, params.Js
    h = np.asarray(h, dtype=float)
    j_p = np.broadcast_to(np.asarray(j_p, dtype=float), h.shape)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    j_p = np.atleast_2d(j_p)
    if np.any(_norm(j_p) >= Js):
        raise ValueError("pinned polarization must satisfy |J_p| < Js")

    if chi == 0.0:
        out = _anhysteretic_j(h, A, Js)
        return out[0] if single else out

    # sticking test: 0 in the subdifferential at J = J_p
    sp = _norm(j_p)
    grad_u = _u_prime_over_s(sp, A, Js)[..., None] * j_p
    stick = _norm(h - grad_u) <= chi

    j = np.where(stick[..., None], j_p, _anhysteretic_j(h, A, Js))
    active = ~stick
    if not np.any(active):
        out = j
        return out[0] if single else out

    jmax = (1.0 - J_MARGIN) * Js
    rmin = 1e-14

    def separate(jj, mask):
        """Push iterates in `mask` away from J_p if they collapsed onto it."""
        d = jj - j_p
        r = _norm(d)
        hit = mask & (r < rmin)
        if np.any(hit):
            ref = h - grad_u
            rn = _norm(ref)
            direction = np.where((rn > 0)[..., None], ref / np.where(rn == 0, 1.0, rn)[..., None],
                                 np.broadcast_to([1.0, 0.0], jj.shape))
            jj = np.where(hit[..., None], j_p + rmin * direction, jj)
        return jj

    def clamp_disc(jj):
        s = _norm(jj)
        over = s > jmax
        if np.any(over):
            scale = np.where(over, jmax / np.where(s == 0, 1.0, s), 1.0)
            jj = jj * scale[..., None]
        return jj

    j = clamp_disc(separate(j, active))

    def residual(jj):
        s = _norm(jj)
        d = jj - j_p
        r = _norm(d)
        r_safe = np.where(r < rmin, rmin, r)
        return _u_prime_over_s(s, A, Js)[..., None] * jj \
            + chi * d / r_safe[..., None] - h

    g = residual(j)
    gn = _norm(g)
    tol_pt = tol * np.maximum.reduce([np.ones_like(gn), _norm(h),
                                      np.full_like(gn, chi)])
    for it in range(maxit):
        work = active & (gn > tol_pt)
        if not np.any(work):
            break
        s = _norm(j)
        d = j - j_p
        r = np.maximum(_norm(d), rmin)
        q = _u_prime_over_s(s, A, Js)
        upp = _u_second(s, A, Js)
        s_safe = np.where(s < 1e-300, 1.0, s)
        jn = j / s_safe[..., None]
        dn = d / r[..., None]
        # Dg = q I + (U'' - q) jn jn^T + (chi/r)(I - dn dn^T)
        a11 = q + (upp - q) * jn[..., 0] ** 2 + chi / r * (1 - dn[..., 0] ** 2)
        a22 = q + (upp - q) * jn[..., 1] ** 2 + chi / r * (1 - dn[..., 1] ** 2)
        a12 = (upp - q) * jn[..., 0] * jn[..., 1] - chi / r * dn[..., 0] * dn[..., 1]
        det = a11 * a22 - a12 * a12
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        dx = -(a22 * g[..., 0] - a12 * g[..., 1]) / det
        dy = -(a11 * g[..., 1] - a12 * g[..., 0]) / det
        step = np.stack([dx, dy], axis=-1)

        t = np.where(work, 1.0, 0.0)
        for _ in range(60):  # backtrack points whose residual would grow
            j_new = clamp_disc(separate(j + t[..., None] * step, work))
            g_new = residual(j_new)
            gn_new = _norm(g_new)
            worse = work & (gn_new > gn) & (t > 1e-12)
            if not np.any(worse):
                break
            t = np.where(worse, 0.5 * t, t)
        j = np.where(work[..., None], j_new, j)
        g = np.where(work[..., None], g_new, g)
        gn = np.where(work, gn_new, gn)
    else:
        bad = active & (gn > tol_pt)
        if np.any(bad):
            raise InnerSolveError(float(np.max(gn[bad])), maxit)

    out = j
    return out[0] if single else out


def _cell_value(params: HysteresisParams, chi: float,
                h: np.ndarray, j_p: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Objective value <h, J> - U(|J|) - chi |J - J_p| at the maximizer."""
    A, Js = params.A, params.Js
    if chi == 0.0:
        return _sat_energy(_norm(h), A, Js)
    return np.sum(h * j, axis=-1) - _u_value(_norm(j), A, Js) \
        - chi * _norm(j - j_p)


@dataclass(frozen=True)
class HysteresisMaterial:
    """Energy-based vector hysteresis law (weighted pinned cells).

    Evaluations need a ``HysteresisState`` whose points match the h samples;
    the state is only mutated via :meth:`update_state` between load steps.
    """

    params: HysteresisParams = HysteresisParams()
    has_jacobian = False

    @property
    def mu0(self):
        return self.params.mu0

    @property
    def n_cells(self) -> int:
        return self.params.n_cells

    def slope_bounds(self) -> tuple[float, float]:
        p = self.params
        wsum = float(p.weights.sum())
        return p.mu0, p.mu0 + wsum * 2.0 * p.Js / (np.pi * p.A)

    def new_state(self, n_points: int) -> HysteresisState:
        return HysteresisState.zeros(n_points, self.n_cells)

    def _check(self, h: np.ndarray, state: HysteresisState):
        if state is None:
            raise ValueError("hysteresis evaluation requires a state")
        if h.shape[0] != state.n_points:
            raise ValueError(
                f"state has {state.n_points} points, h has {h.shape[0]}")

    def cell_polarizations(self, h, state: HysteresisState) -> np.ndarray:
        """Maximizers J_k for all cells, shape (n_points, n_cells, 2)."""
        h = np.atleast_2d(np.asarray(h, dtype=float))
        self._check(h, state)
        out = np.empty((h.shape[0], self.n_cells, 2))
        for k, (_, chi) in enumerate(self.params.cells):
            out[:, k] = maximize_cell(self.params, chi, h, state.j_p[:, k])
        return out

    def coenergy(self, h, state: HysteresisState = None):
        p = self.params
        h = np.asarray(h, dtype=float)
        single = h.ndim == 1
        hb = np.atleast_2d(h)
        self._check(hb, state)
        total = 0.5 * p.mu0 * np.sum(hb * hb, axis=-1)
        for k, (w, chi) in enumerate(p.cells):
            jk = maximize_cell(p, chi, hb, state.j_p[:, k])
            total = total + w * _cell_value(p, chi, hb, state.j_p[:, k], jk)
        return total[0] if single else total

    def flux(self, h, state: HysteresisState = None):
        p = self.params
        h = np.asarray(h, dtype=float)
        single = h.ndim == 1
        hb = np.atleast_2d(h)
        self._check(hb, state)
        b = p.mu0 * hb
        for k, (w, chi) in enumerate(p.cells):
            b = b + w * maximize_cell(p, chi, hb, state.j_p[:, k])
        return b[0] if single else b

    def jacobian(self, h):
        raise CapabilityError(
            "the hysteresis co-energy is not twice differentiable; "
            "no permeability Jacobian is available")

    def update_state(self, h, state: HysteresisState) -> HysteresisState:
        """New pinned polarizations from the converged field of a load step."""
        h = np.atleast_2d(np.asarray(h, dtype=float))
        self._check(h, state)
        return HysteresisState(self.cell_polarizations(h, state))
