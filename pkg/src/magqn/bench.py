"""Benchmark harness: single-load-step solves over refinement levels,
warm-started load cycles with hysteresis state propagation, iteration-count
tables, and probe-point traces.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import fem, nonlinear
from .config import RunConfig
from .linsolve import CgConfig
from .materials import HysteresisMaterial
from .mesh import Mesh, Region, generate_benchmark_mesh, probe_element, refine_uniform


@dataclass
class BenchTable:
    """Iteration counts (or averages) per refinement level and method."""

    dofs: list[int]
    methods: list[str]
    cells: dict[tuple[int, str], float | None] = field(default_factory=dict)

    def set(self, level_idx: int, method: str, value: float | None):
        self.cells[(level_idx, method)] = value

    def get(self, level_idx: int, method: str):
        return self.cells.get((level_idx, method))

    def column(self, method: str) -> list[float | None]:
        return [self.get(i, method) for i in range(len(self.dofs))]

    def to_text(self) -> str:
        header = ["dof"] + list(self.methods)
        rows = []
        for i, dof in enumerate(self.dofs):
            row = [str(dof)]
            for m in self.methods:
                v = self.get(i, m)
                if v is None:
                    row.append("failed")
                elif isinstance(v, float) and not v.is_integer():
                    row.append(f"{v:.1f}")
                else:
                    row.append(str(int(v)))
            rows.append(row)
        widths = [max(len(r[c]) for r in [header] + rows)
                  for c in range(len(header))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths))
                 for r in [header] + rows]
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["dof"] + list(self.methods))
            for i, dof in enumerate(self.dofs):
                row = [dof]
                for m in self.methods:
                    v = self.get(i, m)
                    row.append("" if v is None else v)
                w.writerow(row)


@dataclass
class CycleTrace:
    """Per-time-step applied current, iteration count, and probe fields."""

    j_s: np.ndarray       # (n,)
    iterations: np.ndarray  # (n,)
    probe_h: np.ndarray   # (n, 2)
    probe_b: np.ndarray   # (n, 2)

    def __len__(self):
        return len(self.j_s)

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("i,j_s,iters,hx,hy,bx,by\n")
            for i in range(len(self)):
                f.write(f"{i},{self.j_s[i]:.17g},{int(self.iterations[i])},"
                        f"{self.probe_h[i, 0]:.17g},{self.probe_h[i, 1]:.17g},"
                        f"{self.probe_b[i, 0]:.17g},{self.probe_b[i, 1]:.17g}\n")


def loop_area(trace: CycleTrace) -> float:
    """Signed shoelace area of the probe (h, b) loop, both fields projected
    on the dominant direction of the b trace. Positive for a dissipative
    (clockwise) traversal; ~0 when b retraces a single-valued curve of h."""
    k = int(np.argmax(np.sum(trace.probe_b ** 2, axis=1)))
    bref = trace.probe_b[k]
    nrm = np.linalg.norm(bref)
    if nrm == 0.0:
        return 0.0
    e = bref / nrm
    x = trace.probe_h @ e
    y = trace.probe_b @ e
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    # shoelace is CCW-positive; flip so clockwise (dissipative) is positive
    return -0.5 * float(np.sum(x * y2 - x2 * y))


def sine_waveform(j0: float, n: int) -> np.ndarray:
    """Default excitation sequence j_s(t_i) = j0 sin(2 pi i / n)."""
    i = np.arange(n)
    return j0 * np.sin(2.0 * np.pi * i / n)


def waveform_value(i: int, n: int, j0: float) -> float:
    if not 0 <= i < n:
        raise IndexError(f"step {i} outside cycle of {n} steps")
    return float(j0 * np.sin(2.0 * np.pi * i / n))


def load_waveform_csv(path) -> np.ndarray:
    """One amplitude per line (blank lines and # comments allowed)."""
    values = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-numeric waveform value {line!r}")
    if not values:
        raise ValueError(f"{path}: empty waveform file")
    return np.asarray(values)


def save_waveform_csv(values: np.ndarray, path) -> None:
    with open(path, "w") as f:
        for v in values:
            f.write(f"{float(v):.17g}\n")


def mesh_levels(config: RunConfig) -> list[Mesh]:
    """Meshes for the configured refinement levels (level k = coarsest mesh
    refined k times)."""
    top = max(config.levels)
    seq = [generate_benchmark_mesh(config.geometry)]
    for _ in range(top):
        seq.append(refine_uniform(seq[-1]))
    return [seq[k] for k in config.levels]


def solver_config(config: RunConfig, method: str) -> nonlinear.SolverConfig:
    strategy = nonlinear.PermeabilityStrategy(method, mu_bar=config.mu_bar)
    step = nonlinear.Armijo(tau_max=config.tau_max, sigma=config.sigma,
                            rho=config.rho)
    return nonlinear.SolverConfig(
        strategy=strategy, step=step, tol_rel=config.tol_rel,
        max_outer=config.max_outer, cg=CgConfig(rtol=config.cg_rtol))


@dataclass
class SingleRunResult:
    table: BenchTable
    reports: dict[tuple[int, str], nonlinear.IterationReport]
    solutions: dict[tuple[int, str], np.ndarray]
    meshes: list[Mesh]
    sources: list[np.ndarray]
    failures: list[tuple[int, str, str]]

    @property
    def ok(self) -> bool:
        return not self.failures


def run_single(config: RunConfig, methods: tuple[str, ...] | None = None
               ) -> SingleRunResult:
    """Solve one cold-start load step (psi0 = 0, pinned polarizations 0) for
    every level x method cell. Failures are recorded per cell; the run
    continues."""
    methods = methods if methods is not None else config.active_methods()
    meshes = mesh_levels(config)
    sources = [fem.build_source_field(m, config.j0) for m in meshes]
    model = config.model()
    table = BenchTable(dofs=[m.n_dofs for m in meshes], methods=list(methods))
    reports: dict = {}
    solutions: dict = {}
    failures = []
    for li, mesh in enumerate(meshes):
        for method in methods:
            state = None
            if isinstance(model, HysteresisMaterial):
                state = model.new_state(len(mesh.region_elements(Region.IRON)))
            try:
                u, rep = nonlinear.solve_nonlinear(
                    mesh, model, sources[li], np.zeros(mesh.n_dofs),
                    solver_config(config, method), state)
                if not rep.converged:
                    raise RuntimeError(
                        f"no convergence in {rep.iterations} iterations")
                table.set(li, method, rep.iterations)
                reports[(li, method)] = rep
                solutions[(li, method)] = u
            except Exception as exc:
                table.set(li, method, None)
                failures.append((li, method, str(exc)))
    return SingleRunResult(table, reports, solutions, meshes, sources, failures)


@dataclass
class CycleRunResult:
    table: BenchTable  # average iterations
    traces: dict[tuple[int, str], CycleTrace]
    reports: dict[tuple[int, str], list[nonlinear.IterationReport]]
    meshes: list[Mesh]
    failures: list[tuple[int, str, str]]

    @property
    def ok(self) -> bool:
        return not self.failures


def run_cycle(config: RunConfig, methods: tuple[str, ...] | None = None,
              waveform: np.ndarray | None = None) -> CycleRunResult:
    """Solve a sequence of load steps per level x method, warm-starting each
    step from the previous solution; for hysteresis the pinned polarizations
    are updated from the converged field between steps."""
    methods = methods if methods is not None else config.active_methods()
    if waveform is None:
        waveform = sine_waveform(config.j0, config.cycle.steps)
    waveform = np.asarray(waveform, dtype=float)
    meshes = mesh_levels(config)
    model = config.model()
    table = BenchTable(dofs=[m.n_dofs for m in meshes], methods=list(methods))
    traces: dict = {}
    reports: dict = {}
    failures = []
    for li, mesh in enumerate(meshes):
        probe = probe_element(mesh, config.geometry)
        iron = mesh.region_elements(Region.IRON)
        for method in methods:
            u = np.zeros(mesh.n_dofs)
            state = None
            if isinstance(model, HysteresisMaterial):
                state = model.new_state(len(iron))
            iters = []
            js_done = []
            probe_h = []
            probe_b = []
            step_reports = []
            try:
                for amp in waveform:
                    source = fem.build_source_field(mesh, float(amp))
                    u, rep = nonlinear.solve_nonlinear(
                        mesh, model, source, u,
                        solver_config(config, method), state)
                    if not rep.converged:
                        raise RuntimeError(
                            f"step {len(iters)}: no convergence in "
                            f"{rep.iterations} iterations")
                    step_reports.append(rep)
                    iters.append(rep.iterations)
                    js_done.append(float(amp))
                    h = fem.field_at_elements(mesh, source, u)
                    b = fem.flux_at_elements(mesh, model, h, state)
                    probe_h.append(h[probe])
                    probe_b.append(b[probe])
                    if state is not None:
                        state = model.update_state(h[iron], state)
            except Exception as exc:
                failures.append((li, method, str(exc)))
                table.set(li, method, None)
            else:
                table.set(li, method, float(np.mean(iters)))
            traces[(li, method)] = CycleTrace(
                np.asarray(js_done), np.asarray(iters, dtype=int),
                np.asarray(probe_h).reshape(-1, 2),
                np.asarray(probe_b).reshape(-1, 2))
            reports[(li, method)] = step_reports
    return CycleRunResult(table, traces, reports, meshes, failures)
