"""Outer nonlinear iteration with pluggable per-element permeability
strategies.

Each step solves A(mu) du = F(u) with A the stiffness matrix assembled from
the current per-element tensors mu_T and F the residual (F = -grad f for the
discrete co-energy f), then updates u <- u + tau du with tau from Armijo
backtracking or a constant rule. Strategies differ only in how mu_T evolves:

* fixpoint: mu_T frozen at mu_bar I,
* newton:   mu_T = material Jacobian at the current field (iron only),
* bfgs/dfp: low-rank quasi-Newton update of mu_T from the per-element
  increments (dh, db), followed by symmetrization and eigenvalue projection
  onto [mu1, mu2].

Iron elements carry the nonlinear law; air/copper tensors stay exactly mu0 I.
The iteration stops when the co-energy decrease falls below
tol_rel * |f(u0)|, or when the residual norm collapses relative to its
initial value (stationary starts and exactly linear problems).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .linsolve import CgConfig, CgReport, LinearSolveError, solve_cg
from .materials import MU0, HysteresisState
from .mesh import Mesh, Region

STRATEGY_KINDS = ("fixpoint", "newton", "bfgs", "dfp")


class LineSearchError(RuntimeError):
    """Armijo backtracking exhausted its trial budget."""


@dataclass(frozen=True)
class PermeabilityStrategy:
    """How the per-element tensors mu_T are chosen each iteration.

    mu_bar is the isotropic initial (and, for fixpoint, permanent) tensor
    value; None means mu0. With reset_on_violation the projection step is
    replaced by a reset to mu_bar I whenever the spectral bounds are violated.
    """

    kind: str
    mu_bar: float | None = None
    reset_on_violation: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; "
                             f"expected one of {STRATEGY_KINDS}")

    @property
    def is_qn(self) -> bool:
        return self.kind in ("bfgs", "dfp")


def fixpoint(mu_bar: float | None = None) -> PermeabilityStrategy:
    return PermeabilityStrategy("fixpoint", mu_bar)


def newton() -> PermeabilityStrategy:
    return PermeabilityStrategy("newton")


def bfgs(mu_bar: float | None = None, reset_on_violation=False) -> PermeabilityStrategy:
    return PermeabilityStrategy("bfgs", mu_bar, reset_on_violation)


def dfp(mu_bar: float | None = None, reset_on_violation=False) -> PermeabilityStrategy:
    return PermeabilityStrategy("dfp", mu_bar, reset_on_violation)


@dataclass(frozen=True)
class Armijo:
    """Backtracking rule: largest tau = tau_max rho^m with
    f(u + tau du) <= f(u) + tau sigma <grad f, du>."""

    tau_max: float = 1.0
    sigma: float = 0.1
    rho: float = 0.5
    m_max: int = 60

    def __post_init__(self):
        if not (self.tau_max > 0 and 0 < self.sigma < 1 and 0 < self.rho < 1):
            raise ValueError("require tau_max > 0 and sigma, rho in (0, 1)")


@dataclass(frozen=True)
class ConstantStep:
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("constant step must be positive")


@dataclass(frozen=True)
class SolverConfig:
    strategy: PermeabilityStrategy
    step: Armijo | ConstantStep = Armijo()
    tol_rel: float = 1e-8
    max_outer: int = 500
    mu1: float | None = None  # spectral bounds for the projection;
    mu2: float | None = None  # None derives them from the material law
    cg: CgConfig = CgConfig()

    def __post_init__(self):
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")

    def bounds_for(self, model) -> tuple[float, float]:
        lo, hi = model.slope_bounds()
        mu1 = self.mu1 if self.mu1 is not None else lo
        mu2 = self.mu2 if self.mu2 is not None else hi
        if not 0 < mu1 <= mu2:
            raise ValueError("require 0 < mu1 <= mu2")
        return mu1, mu2


@dataclass
class IterationRecord:
    n: int
    energy: float
    residual_norm: float
    tau: float
    ls_trials: int
    truncations: int
    mu_eig_min: float
    mu_eig_max: float


@dataclass
class IterationReport:
    energy0: float
    residual0: float
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def energies(self) -> np.ndarray:
        return np.array([self.energy0] + [r.energy for r in self.records])

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.records])

    @property
    def total_truncations(self) -> int:
        return sum(r.truncations for r in self.records)

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("n,f,residual_norm,tau,ls_trials,truncations\n")
            for r in self.records:
                f.write(f"{r.n},{r.energy:.17g},{r.residual_norm:.17g},"
                        f"{r.tau:.17g},{r.ls_trials},{r.truncations}\n")


def qn_update_bfgs(h: np.ndarray, d: np.ndarray, y: np.ndarray,
                   d_floor: float | np.ndarray = 0.0) -> np.ndarray:
    """BFGS update H + y y^T / (y^T d) - H d d^T H^T / (d^T H d).

    Broadcasts over leading axes. The update is skipped (H returned) where
    |d| <= d_floor, where the curvature y^T d is numerically degenerate, or
    where y = H d already holds (the tangent condition is then exact).
    """
    h = np.asarray(h, dtype=float)
    d = np.asarray(d, dtype=float)
    y = np.asarray(y, dtype=float)
    hd = np.einsum("...ij,...j->...i", h, d)
    yd = np.sum(y * d, axis=-1)
    dhd = np.sum(d * hd, axis=-1)
    dn = np.linalg.norm(d, axis=-1)
    yn = np.linalg.norm(y, axis=-1)
    skip = (dn <= d_floor) | (np.abs(yd) <= 1e-14 * yn * dn) \
        | (np.abs(dhd) == 0.0) | np.all(y == hd, axis=-1)
    safe_yd = np.where(skip, 1.0, yd)
    safe_dhd = np.where(skip, 1.0, dhd)
    upd = h + _outer(y, y) / safe_yd[..., None, None] \
        - _outer(hd, hd) / safe_dhd[..., None, None]
    return np.where(skip[..., None, None], h, upd)


def qn_update_dfp(h: np.ndarray, d: np.ndarray, y: np.ndarray,
                  d_floor: float | np.ndarray = 0.0) -> np.ndarray:
    """DFP update H + ((y-Hd) y^T + y (y-Hd)^T)/(y^T d)
    - ((y-Hd)^T d)/(y^T d)^2 y y^T; same skip rules as BFGS."""
    h = np.asarray(h, dtype=float)
    d = np.asarray(d, dtype=float)
    y = np.asarray(y, dtype=float)
    hd = np.einsum("...ij,...j->...i", h, d)
    w = y - hd
    yd = np.sum(y * d, axis=-1)
    dn = np.linalg.norm(d, axis=-1)
    yn = np.linalg.norm(y, axis=-1)
    skip = (dn <= d_floor) | (np.abs(yd) <= 1e-14 * yn * dn) \
        | np.all(w == 0.0, axis=-1)
    safe_yd = np.where(skip, 1.0, yd)
    upd = h + (_outer(w, y) + _outer(y, w)) / safe_yd[..., None, None] \
        - (np.sum(w * d, axis=-1) / safe_yd ** 2)[..., None, None] * _outer(y, y)
    return np.where(skip[..., None, None], h, upd)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


def symmetrize(m: np.ndarray) -> np.ndarray:
    """(M + M^T) / 2, broadcast over leading axes."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def project_spd(m: np.ndarray, mu1: float, mu2: float) -> tuple[np.ndarray, np.ndarray]:
    """Clamp the eigenvalues of symmetric 2x2 tensors into [mu1, mu2].

    Returns (projected, clamped_mask). Tensors whose eigenvalues already lie
    in the interval are passed through bit-identically.
    """
    m = np.asarray(m, dtype=float)
    single = m.ndim == 2
    m = m.reshape((-1, 2, 2)) if single else m
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    mean = 0.5 * (a + c)
    r = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    lo, hi = mean - r, mean + r
    clamped = (lo < mu1) | (hi > mu2)
    if not np.any(clamped):
        out = m
    else:
        lo_c = np.clip(lo, mu1, mu2)
        hi_c = np.clip(hi, mu1, mu2)
        # unit eigenvector for the larger eigenvalue; of the two closed
        # forms, the one with norm >= r (always nonzero when r > 0)
        v1 = np.stack([b, hi - a], axis=-1)
        v2 = np.stack([hi - c, b], axis=-1)
        v = np.where((c >= a)[..., None], v1, v2)
        vn = np.linalg.norm(v, axis=-1)
        iso = vn < 1e-300
        v = np.where(iso[..., None], np.broadcast_to([1.0, 0.0], v.shape),
                     v / np.where(iso, 1.0, vn)[..., None])
        eye = np.eye(2)
        proj = lo_c[..., None, None] * eye \
            + (hi_c - lo_c)[..., None, None] * _outer(v, v)
        out = np.where(clamped[..., None, None], proj, m)
    if single:
        return out[0], clamped[0]
    return out, clamped


def compute_direction(mesh: Mesh, assembler: fem.StiffnessAssembler,
                      mu: np.ndarray, f_res: np.ndarray,
                      cg: CgConfig) -> tuple[np.ndarray, CgReport]:
    """Increment du solving A(mu) du = F(u); a descent direction for the
    co-energy since <grad f, du> = -du^T A du < 0 whenever F != 0."""
    a = assembler.assemble(mu)
    du, report = solve_cg(a, f_res, cg)
    if not report.converged:
        raise LinearSolveError(report)
    return du, report


def armijo_step(phi, phi0: float, slope: float, rule: Armijo) -> tuple[float, int]:
    """Largest tau = tau_max rho^m with phi(tau) <= phi(0) + tau sigma slope.

    phi is the energy along the step, slope = <grad f, du> (must be <= 0).
    Returns (tau, number of trials). Raises LineSearchError when no trial
    m <= m_max satisfies the condition, which signals an inconsistent
    energy/gradient pair rather than a small step.
    """
    if slope > 0.0:
        raise LineSearchError(f"not a descent direction (slope {slope:.3e})")
    tau = rule.tau_max
    for m in range(rule.m_max + 1):
        if phi(tau) <= phi0 + tau * rule.sigma * slope:
            return tau, m + 1
        tau *= rule.rho
    raise LineSearchError(
        f"no Armijo step after {rule.m_max + 1} trials; "
        "energy and gradient are inconsistent")


class _DirectionalEnergy:
    """Energy along a fixed step direction, phi(tau) = f(u + tau du).

    The linear (air/copper) part of the co-energy is an exact quadratic in
    tau whose coefficients are computed once per direction; only the iron
    elements are re-evaluated per trial. This makes Armijo backtracking
    cheap even when many trial steps are rejected.
    """

    def __init__(self, mesh: Mesh, model, source: np.ndarray, u: np.ndarray,
                 du: np.ndarray, iron: np.ndarray,
                 state: HysteresisState | None):
        self.model = model
        self.state = state
        self.h0 = fem.field_at_elements(mesh, source, u)
        self.gd = fem.grad_field(mesh, du)
        self.iron = iron
        lin = np.ones(mesh.n_elements, dtype=bool)
        lin[iron] = False
        w = mesh.areas[lin]
        h0l, gdl = self.h0[lin], self.gd[lin]
        mu0 = getattr(model, "mu0", MU0)
        self.a0 = 0.5 * mu0 * float(np.sum(w * np.sum(h0l * h0l, axis=1)))
        self.a1 = -mu0 * float(np.sum(w * np.sum(h0l * gdl, axis=1)))
        self.a2 = 0.5 * mu0 * float(np.sum(w * np.sum(gdl * gdl, axis=1)))
        self.w_iron = mesh.areas[iron]
        self.h0_iron = self.h0[iron]
        self.gd_iron = self.gd[iron]

    def __call__(self, tau: float) -> float:
        total = self.a0 + tau * (self.a1 + tau * self.a2)
        if len(self.iron):
            h_iron = self.h0_iron - tau * self.gd_iron
            total += float(np.sum(
                self.w_iron * self.model.coenergy(h_iron, self.state)))
        return total

    def field(self, tau: float) -> np.ndarray:
        """h = h_s - grad psi at u + tau du, for all elements."""
        return self.h0 - tau * self.gd


def _initial_mu(mesh: Mesh, model, strategy: PermeabilityStrategy,
                h: np.ndarray, iron: np.ndarray) -> np.ndarray:
    mu0 = getattr(model, "mu0", MU0)
    mu = fem.isotropic_field(mesh, mu0)
    if strategy.kind == "newton":
        if len(iron):
            mu[iron] = model.jacobian(h[iron])
    elif strategy.mu_bar is not None:
        if strategy.kind == "fixpoint":
            mu = fem.isotropic_field(mesh, strategy.mu_bar)
        else:  # QN: custom initial tensor on iron only
            mu[iron] = strategy.mu_bar * np.eye(2)
    return mu


def _eig_range(mu: np.ndarray) -> tuple[float, float]:
    a, b, c = mu[:, 0, 0], mu[:, 0, 1], mu[:, 1, 1]
    mean = 0.5 * (a + c)
    r = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    return float(np.min(mean - r)), float(np.max(mean + r))


def solve_nonlinear(mesh: Mesh, model, source: np.ndarray, u0: np.ndarray,
                    config: SolverConfig,
                    state: HysteresisState | None = None
                    ) -> tuple[np.ndarray, IterationReport]:
    """Run the outer iteration from u0 until the energy decrease falls below
    tol_rel * |f(u0)| (or the residual collapses). Returns the final dof
    vector and the per-iteration report."""
    strategy = config.strategy
    if strategy.kind == "newton" and not model.has_jacobian:
        raise ValueError(
            "the Newton strategy needs a twice differentiable material law; "
            "this model provides none")
    if mesh.n_elements == 0:
        raise ValueError("mesh has no elements")
    mu1, mu2 = config.bounds_for(model)
    assembler = fem.StiffnessAssembler(mesh)
    iron = mesh.region_elements(Region.IRON)

    u = np.asarray(u0, dtype=float).copy()
    f_val = fem.energy(mesh, model, source, u, state)
    f_ref = abs(f_val)
    res = fem.residual(mesh, model, source, u, state)
    res0_norm = float(np.linalg.norm(res))
    report = IterationReport(energy0=f_val, residual0=res0_norm)
    # residual-based stop: stationary starts, and exactly linear problems
    # where one CG-accurate step solves the system
    res_stop = max(1e-14, 10.0 * config.cg.rtol) * res0_norm
    if res0_norm == 0.0:
        report.converged = True
        return u, report

    h = fem.field_at_elements(mesh, source, u)
    mu = _initial_mu(mesh, model, strategy, h, iron)
    if strategy.is_qn and len(iron):
        h_prev = h[iron].copy()
        b_prev = fem.flux_at_elements(mesh, model, h, state)[iron]

    a_mat = None
    mu_dirty = True
    du = None
    for n in range(1, config.max_outer + 1):
        if mu_dirty:
            a_mat = assembler.assemble(mu)
            mu_dirty = strategy.kind != "fixpoint"
        du, cg_rep = solve_cg(a_mat, res, config.cg, x0=du)
        if not cg_rep.converged:
            raise LinearSolveError(cg_rep)
        slope = -float(res @ du)  # <grad f, du>
        line = _DirectionalEnergy(mesh, model, source, u, du, iron, state)
        if isinstance(config.step, Armijo):
            tau, trials = armijo_step(line, f_val, slope, config.step)
        else:
            tau, trials = config.step.tau, 0

        u = u + tau * du
        f_new = line(tau)
        h = line.field(tau)
        res, b_field = fem.residual_from_field(mesh, model, h, state)
        res_norm = float(np.linalg.norm(res))

        truncations = 0
        if strategy.kind == "newton":
            if len(iron):
                mu[iron] = model.jacobian(h[iron])
        elif strategy.is_qn and len(iron):
            h_cur = h[iron]
            b_cur = b_field[iron]
            d = h_cur - h_prev
            y = b_cur - b_prev
            d_floor = 1e-10 * (1.0 + np.linalg.norm(h_cur, axis=-1))
            update = qn_update_bfgs if strategy.kind == "bfgs" else qn_update_dfp
            cand = symmetrize(update(mu[iron], d, y, d_floor))
            if strategy.reset_on_violation:
                _, clamped = project_spd(cand, mu1, mu2)
                mu_bar = strategy.mu_bar if strategy.mu_bar is not None \
                    else getattr(model, "mu0", MU0)
                cand[clamped] = mu_bar * np.eye(2)
            else:
                cand, clamped = project_spd(cand, mu1, mu2)
            truncations = int(np.count_nonzero(clamped))
            mu[iron] = cand
            h_prev, b_prev = h_cur, b_cur

        eig_lo, eig_hi = _eig_range(mu)
        report.records.append(IterationRecord(
            n=n, energy=f_new, residual_norm=res_norm, tau=tau,
            ls_trials=trials, truncations=truncations,
            mu_eig_min=eig_lo, mu_eig_max=eig_hi))

        if abs(f_new - f_val) <= config.tol_rel * f_ref or res_norm <= res_stop:
            report.converged = True
            f_val = f_new
            break
        f_val = f_new

    return u, report
