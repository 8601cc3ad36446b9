"""Discrete operators for the reduced scalar potential formulation.

Everything is built on the one-point barycenter quadrature
``<a, b>_h = sum_T |T| a(x_T) . b(x_T)``, which is exact for the products of
piecewise-constant fields that occur here. Per-element fields are plain
(ne, 2) arrays sampled at barycenters; permeability fields are (ne, 2, 2)
arrays of symmetric tensors. The gauge vertex is eliminated from all dof
vectors, so assembled matrices are symmetric positive definite.

The nonlinear iron law applies on ``Region.IRON`` elements; air and copper
elements always carry the exact linear law b = mu0 h.
"""
from __future__ import annotations

import csv

import numpy as np
import scipy.sparse as sp

from .materials import MU0, HysteresisState
from .mesh import Mesh, Region, REGION_NAMES


def quad_inner(mesh: Mesh, a: np.ndarray, b: np.ndarray) -> float:
    """Barycenter-rule inner product of two per-element vector fields."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (mesh.n_elements, 2) or b.shape != (mesh.n_elements, 2):
        raise ValueError("fields must be sampled at all element barycenters")
    return float(np.sum(mesh.areas * np.sum(a * b, axis=1)))


def build_source_field(mesh: Mesh, j_amplitude: float) -> np.ndarray:
    """Source field h_s with curl h_s = j_s, sampled at barycenters.

    h_s = (0, H(x,y)) with H the running x-integral of the current density
    (+j on CoilPlus, -j on CoilMinus, 0 elsewhere). Piecewise linear in x;
    its tangential component vanishes across horizontal coil edges, so the
    distributional curl is exactly the piecewise-constant current density.
    """
    hs = np.zeros((mesh.n_elements, 2))
    if j_amplitude == 0.0:
        return hs
    bx = mesh.barycenters[:, 0]
    by = mesh.barycenters[:, 1]
    for region, sign in ((Region.COIL_PLUS, 1.0), (Region.COIL_MINUS, -1.0)):
        idx = mesh.region_elements(region)
        if len(idx) == 0:
            continue
        verts = mesh.vertices[mesh.elements[idx].ravel()]
        x0, x1 = verts[:, 0].min(), verts[:, 0].max()
        y0, y1 = verts[:, 1].min(), verts[:, 1].max()
        in_band = (by >= y0) & (by <= y1)
        depth = np.clip(bx, x0, x1) - x0
        hs[:, 1] += np.where(in_band, sign * j_amplitude * depth, 0.0)
    return hs


def grad_field(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Per-element gradient of the P1 function with dof vector u."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_dofs,):
        raise ValueError(f"expected dof vector of length {mesh.n_dofs}")
    dof = mesh.dof_index()[mesh.elements]  # (ne, 3)
    nodal = np.where(dof >= 0, u[np.where(dof >= 0, dof, 0)], 0.0)
    return np.einsum("ei,eik->ek", nodal, mesh.grad_basis)


def field_at_elements(mesh: Mesh, source: np.ndarray, u: np.ndarray) -> np.ndarray:
    """h = h_s - grad(psi) at all barycenters."""
    return np.asarray(source, dtype=float) - grad_field(mesh, u)


def flux_at_elements(mesh: Mesh, model, h: np.ndarray,
                     state: HysteresisState | None = None) -> np.ndarray:
    """Flux at all barycenters: iron follows `model`, the rest is mu0 h."""
    mu0 = getattr(model, "mu0", MU0)
    b = mu0 * h
    iron = mesh.region_elements(Region.IRON)
    if len(iron):
        b[iron] = model.flux(h[iron], state)
    return b


def residual_from_field(mesh: Mesh, model, h: np.ndarray,
                        state: HysteresisState | None = None
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Residual and flux from precomputed element fields h; returns (F, b)."""
    b = flux_at_elements(mesh, model, h, state)
    cell = mesh.areas[:, None] * np.einsum("ek,eik->ei", b, mesh.grad_basis)
    dof = mesh.dof_index()[mesh.elements]
    out = np.zeros(mesh.n_dofs)
    mask = dof >= 0
    np.add.at(out, dof[mask], cell[mask])
    return out, b


def residual(mesh: Mesh, model, source: np.ndarray, u: np.ndarray,
             state: HysteresisState | None = None) -> np.ndarray:
    """Nonlinear residual F(u), F_i = <b(h_s - grad psi), grad N_i>_h.

    Note F(u) = -grad f(u) for the energy functional of :func:`energy`.
    """
    h = field_at_elements(mesh, source, u)
    return residual_from_field(mesh, model, h, state)[0]


def energy(mesh: Mesh, model, source: np.ndarray, u: np.ndarray,
           state: HysteresisState | None = None) -> float:
    """Discrete co-energy f(u) = <w*(h_s - grad psi), 1>_h."""
    h = field_at_elements(mesh, source, u)
    mu0 = getattr(model, "mu0", MU0)
    density = 0.5 * mu0 * np.sum(h * h, axis=1)
    iron = mesh.region_elements(Region.IRON)
    if len(iron):
        density[iron] = model.coenergy(h[iron], state)
    return float(np.sum(mesh.areas * density))


def grad_norm(mesh: Mesh, u: np.ndarray) -> float:
    """|u|_h = ||grad psi_h||_h; a norm because the gauge value is pinned."""
    g = grad_field(mesh, u)
    return float(np.sqrt(np.sum(mesh.areas * np.sum(g * g, axis=1))))


class StiffnessAssembler:
    """Reusable two-pass assembler: the sparsity pattern (COO index arrays
    over non-gauge dofs) is built once per mesh, values are scattered per
    call. Output is CSR with sorted, deduplicated indices."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        dof = mesh.dof_index()[mesh.elements]  # (ne, 3)
        rows = np.repeat(dof, 3, axis=1).ravel()
        cols = np.tile(dof, (1, 3)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        self._rows = rows[keep]
        self._cols = cols[keep]
        self._keep = keep
        self.n = mesh.n_dofs

    def assemble(self, mu: np.ndarray) -> sp.csr_matrix:
        mesh = self.mesh
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (mesh.n_elements, 2, 2):
            raise ValueError("permeability field must have shape (ne, 2, 2)")
        if not np.allclose(mu[:, 0, 1], mu[:, 1, 0], rtol=1e-12, atol=0.0):
            raise ValueError("permeability tensors must be symmetric; "
                             "run the modification pass first")
        g = mesh.grad_basis
        ke = np.einsum("e,eia,eab,ejb->eij", mesh.areas, g, mu, g)
        data = ke.reshape(-1, 9).ravel()[self._keep]
        a = sp.coo_matrix((data, (self._rows, self._cols)),
                          shape=(self.n, self.n)).tocsr()
        a.sum_duplicates()
        a.sort_indices()
        return a


def assemble_stiffness(mesh: Mesh, mu: np.ndarray) -> sp.csr_matrix:
    """A_ij = <mu grad N_j, grad N_i>_h over non-gauge dofs."""
    return StiffnessAssembler(mesh).assemble(mu)


def isotropic_field(mesh: Mesh, value: float) -> np.ndarray:
    """Constant isotropic permeability field value * I on every element."""
    mu = np.zeros((mesh.n_elements, 2, 2))
    mu[:, 0, 0] = value
    mu[:, 1, 1] = value
    return mu


def export_fields(mesh: Mesh, model, source: np.ndarray, u: np.ndarray, path,
                  state: HysteresisState | None = None) -> None:
    """Per-element snapshot CSV:
    element_id, bary_x, bary_y, region, hx, hy, bx, by, |b|."""
    h = field_at_elements(mesh, source, u)
    b = flux_at_elements(mesh, model, h, state)
    bmag = np.sqrt(np.sum(b * b, axis=1))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["element_id", "bary_x", "bary_y", "region",
                    "hx", "hy", "bx", "by", "|b|"])
        for e in range(mesh.n_elements):
            w.writerow([e,
                        f"{mesh.barycenters[e, 0]:.17g}",
                        f"{mesh.barycenters[e, 1]:.17g}",
                        REGION_NAMES[Region(mesh.regions[e])],
                        f"{h[e, 0]:.17g}", f"{h[e, 1]:.17g}",
                        f"{b[e, 0]:.17g}", f"{b[e, 1]:.17g}",
                        f"{bmag[e]:.17g}"])
