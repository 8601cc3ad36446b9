"""Triangular meshes of the benchmark geometry.

Meshes are structured: a tensor grid whose lines are snapped to all region
boundaries (air box, iron frame, coil rectangles), each cell split into two
counter-clockwise triangles. This keeps refinement deterministic and
guarantees that no element straddles a region boundary.

A mesh is immutable after construction. One vertex (the "gauge" node, chosen
as the vertex with minimal x, then minimal y) is pinned to zero potential by
the solver; all per-element geometry (areas, barycenters, P1 basis gradients)
is precomputed and cached on the mesh.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Region(IntEnum):
    AIR = 0
    COIL_PLUS = 1
    COIL_MINUS = 2
    IRON = 3


REGION_NAMES = {
    Region.AIR: "Air",
    Region.COIL_PLUS: "CoilPlus",
    Region.COIL_MINUS: "CoilMinus",
    Region.IRON: "Iron",
}
REGION_FROM_NAME = {name: tag for tag, name in REGION_NAMES.items()}


class MeshError(ValueError):
    """Invalid mesh data (degenerate element, bad connectivity, ...)."""


class MeshFormatError(MeshError):
    """Malformed mesh file; message names the offending line."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1] in meters."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise MeshError(f"degenerate rectangle {self}: zero or negative extent")

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def contains_rect(self, other: "Rect") -> bool:
        return (self.x0 <= other.x0 and other.x1 <= self.x1
                and self.y0 <= other.y0 and other.y1 <= self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def _rects_overlap(a: Rect, b: Rect) -> bool:
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1


@dataclass(frozen=True)
class GeometryParams:
    """Benchmark geometry: iron window-frame core inside an air box, excited
    by a balanced pair of coil bars (+j / -j) straddling the left core limb,
    the cross-section of a winding around that limb. This gives the winding a
    net magnetomotive force around the closed core, so the iron carries the
    circulating flux.

    Any of the optional rectangles may be None; with all None the air box is
    meshed as a single Air region (useful for tests).
    """

    air_box: Rect = Rect(0.0, 0.0, 0.30, 0.30)
    core_outer: Rect | None = Rect(0.06, 0.06, 0.24, 0.24)
    core_inner: Rect | None = Rect(0.10, 0.10, 0.20, 0.20)
    coil_plus: Rect | None = Rect(0.025, 0.105, 0.055, 0.195)
    coil_minus: Rect | None = Rect(0.105, 0.105, 0.135, 0.195)
    h: float = 0.008

    def __post_init__(self):
        if not self.h > 0.0:
            raise MeshError("target element size h must be positive")
        if (self.core_outer is None) != (self.core_inner is None):
            raise MeshError("core_outer and core_inner must be given together")
        if self.core_outer is not None:
            if not self.air_box.contains_rect(self.core_outer):
                raise MeshError("core_outer must lie inside the air box")
            if not self.core_outer.contains_rect(self.core_inner):
                raise MeshError("core_inner must lie inside core_outer")
        for coil in (self.coil_plus, self.coil_minus):
            if coil is None:
                continue
            if not self.air_box.contains_rect(coil):
                raise MeshError("coil rectangle must lie inside the air box")
            if self.core_outer is not None and _rects_overlap(coil, self.core_outer) \
                    and not self.core_inner.contains_rect(coil):
                raise MeshError("coil rectangle must not overlap the iron frame")
        if self.coil_plus is not None and self.coil_minus is not None \
                and _rects_overlap(self.coil_plus, self.coil_minus):
            raise MeshError("coil rectangles must not overlap")

    def rects(self) -> list[Rect]:
        out = [self.air_box]
        for r in (self.core_outer, self.core_inner, self.coil_plus, self.coil_minus):
            if r is not None:
                out.append(r)
        return out

    def region_at(self, x: float, y: float) -> Region:
        """Region tag of an interior point (used on cell barycenters)."""
        if self.coil_plus is not None and self.coil_plus.contains(x, y):
            return Region.COIL_PLUS
        if self.coil_minus is not None and self.coil_minus.contains(x, y):
            return Region.COIL_MINUS
        if self.core_outer is not None and self.core_outer.contains(x, y):
            if not self.core_inner.contains(x, y):
                return Region.IRON
        return Region.AIR

    def region_rect(self, region: Region) -> Rect:
        """Bounding rectangle of a region (frame regions use the outer rect)."""
        if region == Region.COIL_PLUS and self.coil_plus is not None:
            return self.coil_plus
        if region == Region.COIL_MINUS and self.coil_minus is not None:
            return self.coil_minus
        if region == Region.IRON and self.core_outer is not None:
            return self.core_outer
        return self.air_box

    def analytic_area(self) -> float:
        return self.air_box.area


class Mesh:
    """Conforming triangular mesh with per-element region tags.

    vertices: (nv, 2) float64, elements: (ne, 3) int32 (CCW), regions: (ne,)
    int8. The gauge node is the vertex with minimal x, ties broken by minimal
    y. All arrays are frozen (read-only) after construction.
    """

    def __init__(self, vertices: np.ndarray, elements: np.ndarray, regions: np.ndarray):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        elements = np.ascontiguousarray(elements, dtype=np.int32)
        regions = np.ascontiguousarray(regions, dtype=np.int8)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 1:
            raise MeshError("vertices must be a non-empty (nv, 2) array")
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertex coordinates must be finite")
        if elements.shape != (len(regions), 3):
            raise MeshError("elements must be (ne, 3) with one region per element")
        ne = elements.shape[0]
        if ne:
            if elements.min() < 0 or elements.max() >= len(vertices):
                raise MeshError("element vertex index out of range")
            for k in range(3):
                if np.any(elements[:, k] == elements[:, (k + 1) % 3]):
                    raise MeshError("element with repeated vertex")
        self.vertices = vertices
        self.elements = elements
        self.regions = regions
        self.gauge_node = self._pick_gauge_node(vertices)
        self._compute_geometry()
        idx = np.empty(self.n_vertices, dtype=np.int64)
        idx[: self.gauge_node] = np.arange(self.gauge_node)
        idx[self.gauge_node] = -1
        idx[self.gauge_node + 1:] = np.arange(self.gauge_node, self.n_vertices - 1)
        self._dof_index = idx
        for arr in (self.vertices, self.elements, self.regions, self.areas,
                    self.barycenters, self.grad_basis, self._dof_index):
            arr.flags.writeable = False

    @staticmethod
    def _pick_gauge_node(vertices: np.ndarray) -> int:
        order = np.lexsort((vertices[:, 1], vertices[:, 0]))
        return int(order[0])

    def _compute_geometry(self):
        p = self.vertices[self.elements]  # (ne, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if self.n_elements and det.min() <= 0.0:
            bad = int(np.argmin(det))
            raise MeshError(f"element {bad} is degenerate or not counter-clockwise")
        self.areas = 0.5 * det
        self.barycenters = p.mean(axis=1)
        # grad N_i = rot90(x_k - x_j) / (2|T|) for (i, j, k) cyclic
        grads = np.empty((self.n_elements, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = p[:, j, 1] - p[:, k, 1]
            grads[:, i, 1] = p[:, k, 0] - p[:, j, 0]
        grads /= (2.0 * self.areas)[:, None, None]
        self.grad_basis = grads

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_vertices - 1

    def dof_index(self) -> np.ndarray:
        """Vertex id -> dof index, -1 for the gauge node."""
        return self._dof_index

    def region_elements(self, region: Region) -> np.ndarray:
        return np.flatnonzero(self.regions == int(region))

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique sorted edges (nE, 2) and per-edge element counts."""
        e = self.elements
        pairs = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]], axis=0)
        pairs = np.sort(pairs, axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        return uniq, counts

    def total_area(self) -> float:
        return float(self.areas.sum())


@dataclass(frozen=True)
class ElementGeometry:
    area: float
    barycenter: tuple[float, float]
    grad_basis: np.ndarray  # (3, 2), rows sum to zero


def element_geometry(mesh: Mesh, element_id: int) -> ElementGeometry:
    """Geometric quantities of one element (area, barycenter, P1 gradients)."""
    if not 0 <= element_id < mesh.n_elements:
        raise IndexError(f"element id {element_id} out of range")
    bx, by = mesh.barycenters[element_id]
    return ElementGeometry(
        area=float(mesh.areas[element_id]),
        barycenter=(float(bx), float(by)),
        grad_basis=mesh.grad_basis[element_id].copy(),
    )


def _axis_breaks(lo: float, hi: float, interior: list[float], h: float) -> np.ndarray:
    """Grid coordinates covering [lo, hi], containing all interior breakpoints,
    with each stretch subdivided into intervals no longer than h."""
    pts = sorted({lo, hi, *interior})
    coords = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-12))
        for k in range(1, n):
            coords.append(a + (b - a) * k / n)
        coords.append(b)
    return np.asarray(coords)


def generate_benchmark_mesh(params: GeometryParams) -> Mesh:
    """Structured triangulation of the benchmark geometry.

    Grid lines are placed on every rectangle boundary, so region edges are
    resolved exactly; cells are split along the (lower-left, upper-right)
    diagonal into two CCW triangles tagged by their barycenter's region.
    """
    box = params.air_box
    xin = [r.x0 for r in params.rects()[1:]] + [r.x1 for r in params.rects()[1:]]
    yin = [r.y0 for r in params.rects()[1:]] + [r.y1 for r in params.rects()[1:]]
    xs = _axis_breaks(box.x0, box.x1, xin, params.h)
    ys = _axis_breaks(box.y0, box.y1, yin, params.h)
    nx, ny = len(xs), len(ys)

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * ny + j

    elements = []
    regions = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            for tri in ([v00, v10, v11], [v00, v11, v01]):
                p = vertices[tri]
                bx, by = p.mean(axis=0)
                elements.append(tri)
                regions.append(int(params.region_at(bx, by)))
    return Mesh(vertices, np.asarray(elements), np.asarray(regions))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into 4 congruent children via edge midpoints."""
    nv = mesh.n_vertices
    e = mesh.elements
    pairs = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]], axis=0)
    pairs = np.sort(pairs, axis=1)
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    mid_ids = nv + np.arange(len(uniq))
    midpoints = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    ne = mesh.n_elements
    m01 = mid_ids[inverse[:ne]]
    m12 = mid_ids[inverse[ne:2 * ne]]
    m20 = mid_ids[inverse[2 * ne:]]
    v0, v1, v2 = e[:, 0], e[:, 1], e[:, 2]
    children = np.empty((4 * ne, 3), dtype=np.int64)
    children[0::4] = np.column_stack([v0, m01, m20])
    children[1::4] = np.column_stack([v1, m12, m01])
    children[2::4] = np.column_stack([v2, m20, m12])
    children[3::4] = np.column_stack([m01, m12, m20])
    regions = np.repeat(mesh.regions, 4)
    return Mesh(vertices, children, regions)


def probe_element(mesh: Mesh, params: GeometryParams) -> int:
    """Iron element whose barycenter is closest to the mid-height of the left
    core limb; falls back to the domain center if there is no iron."""
    iron = mesh.region_elements(Region.IRON)
    if len(iron) == 0:
        target = np.array([(params.air_box.x0 + params.air_box.x1) / 2,
                           (params.air_box.y0 + params.air_box.y1) / 2])
        d = np.linalg.norm(mesh.barycenters - target, axis=1)
        return int(np.argmin(d))
    target = np.array([(params.core_outer.x0 + params.core_inner.x0) / 2,
                       (params.core_outer.y0 + params.core_outer.y1) / 2])
    d = np.linalg.norm(mesh.barycenters[iron] - target, axis=1)
    return int(iron[np.argmin(d)])


def rect_mesh(width: float, height: float, h: float,
              region: Region = Region.AIR) -> Mesh:
    """Single-region structured mesh of [0, width] x [0, height] (test helper)."""
    params = GeometryParams(air_box=Rect(0.0, 0.0, width, height),
                            core_outer=None, core_inner=None,
                            coil_plus=None, coil_minus=None, h=h)
    mesh = generate_benchmark_mesh(params)
    if region != Region.AIR:
        regions = np.full(mesh.n_elements, int(region), dtype=np.int8)
        mesh = Mesh(mesh.vertices, mesh.elements, regions)
    return mesh


def save_mesh(mesh: Mesh, path) -> None:
    """Write the text format: `nv ne`, vertex lines `x y`, element lines
    `v0 v1 v2 RegionName`. Coordinates use 17 significant digits."""
    with open(path, "w") as f:
        f.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        for (v0, v1, v2), reg in zip(mesh.elements, mesh.regions):
            f.write(f"{v0} {v1} {v2} {REGION_NAMES[Region(reg)]}\n")


def load_mesh(path) -> Mesh:
    """Read the text format written by :func:`save_mesh`."""
    with open(path) as f:
        raw = f.readlines()
    lines = [(i + 1, s.strip()) for i, s in enumerate(raw)
             if s.strip() and not s.lstrip().startswith("#")]
    if not lines:
        raise MeshFormatError("line 1: empty mesh file")

    def fail(lineno, msg):
        raise MeshFormatError(f"line {lineno}: {msg}")

    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 2:
        fail(lineno, f"expected header 'nv ne', got {header!r}")
    try:
        nv, ne = int(parts[0]), int(parts[1])
    except ValueError:
        fail(lineno, f"non-integer header counts {header!r}")
    if nv < 1 or ne < 0:
        fail(lineno, f"invalid counts nv={nv} ne={ne}")
    if len(lines) != 1 + nv + ne:
        fail(lineno, f"expected {1 + nv + ne} data lines, found {len(lines)}")

    vertices = np.empty((nv, 2))
    for row, (lineno, text) in enumerate(lines[1:1 + nv]):
        parts = text.split()
        if len(parts) != 2:
            fail(lineno, f"expected 'x y', got {text!r}")
        try:
            vertices[row] = [float(parts[0]), float(parts[1])]
        except ValueError:
            fail(lineno, f"non-numeric coordinate in {text!r}")

    elements = np.empty((ne, 3), dtype=np.int64)
    regions = np.empty(ne, dtype=np.int8)
    for row, (lineno, text) in enumerate(lines[1 + nv:]):
        parts = text.split()
        if len(parts) != 4:
            fail(lineno, f"expected 'v0 v1 v2 region', got {text!r}")
        try:
            ids = [int(p) for p in parts[:3]]
        except ValueError:
            fail(lineno, f"non-integer vertex id in {text!r}")
        for v in ids:
            if not 0 <= v < nv:
                fail(lineno, f"vertex id {v} out of range [0, {nv})")
        if parts[3] not in REGION_FROM_NAME:
            fail(lineno, f"unknown region tag {parts[3]!r}")
        elements[row] = ids
        regions[row] = int(REGION_FROM_NAME[parts[3]])
    try:
        return Mesh(vertices, elements, regions)
    except MeshError as exc:
        raise MeshFormatError(str(exc)) from exc
