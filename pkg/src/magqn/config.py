"""Benchmark run configuration.

Config files are flat key-value text with INI-style sections::

    [geometry]
    air_box = 0 0 0.30 0.30
    h = 0.008

    [material]
    law = hysteresis
    cell = {w = 0.4, chi = 0}
    cell = {w = 0.3, chi = 20}

The `cell` key may repeat (one pinned cell per line), which rules out the
stdlib configparser; the parser below keeps every occurrence. `#` starts a
comment. CLI flags override file values.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .materials import (ArctanMaterial, ArctanParams, HysteresisMaterial,
                        HysteresisParams, LinearMaterial, MU0)
from .mesh import GeometryParams, MeshError, Rect

ALL_METHODS = ("newton", "fixpoint", "bfgs", "dfp")
KNOWN_SECTIONS = ("geometry", "material", "solver", "cycle")


class ConfigError(ValueError):
    """Invalid configuration file or option combination."""


def parse_config_text(text: str, source: str = "<config>") -> dict[str, list[tuple[str, str]]]:
    """Parse INI-style text into {section: [(key, value), ...]}, preserving
    repeated keys. Raises ConfigError with the offending line number."""
    sections: dict[str, list[tuple[str, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in KNOWN_SECTIONS:
                raise ConfigError(
                    f"{source}:{lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', "
                              f"got {line!r}")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any section")
        key, value = line.split("=", 1)
        sections[current].append((key.strip().lower(), value.strip()))
    return sections


def _parse_cell(value: str, where: str) -> tuple[float, float]:
    """Parse `{w = 0.4, chi = 20}` into (weight, chi)."""
    v = value.strip()
    if not (v.startswith("{") and v.endswith("}")):
        raise ConfigError(f"{where}: cell must look like "
                          "{w = <weight>, chi = <strength>}")
    fields = {}
    for item in v[1:-1].split(","):
        if "=" not in item:
            raise ConfigError(f"{where}: malformed cell entry {item.strip()!r}")
        k, val = item.split("=", 1)
        try:
            fields[k.strip().lower()] = float(val)
        except ValueError:
            raise ConfigError(f"{where}: non-numeric cell value {val.strip()!r}")
    if set(fields) != {"w", "chi"}:
        raise ConfigError(f"{where}: cell needs exactly the keys w and chi")
    return fields["w"], fields["chi"]


def _parse_rect(value: str, where: str) -> Rect | None:
    if value.lower() in ("none", ""):
        return None
    parts = value.split()
    if len(parts) != 4:
        raise ConfigError(f"{where}: rectangle needs 4 numbers 'x0 y0 x1 y1'")
    try:
        x0, y0, x1, y1 = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: non-numeric rectangle extent")
    try:
        return Rect(x0, y0, x1, y1)
    except MeshError as exc:
        raise ConfigError(f"{where}: {exc}")


def _parse_float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {value!r}")


def _parse_int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")


@dataclass(frozen=True)
class CycleParams:
    steps: int = 100
    waveform: str = "sine"  # "sine" or a CSV path set via the CLI

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("cycle steps must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryParams = GeometryParams()
    levels: tuple[int, ...] = (0, 1, 2)
    material: str = "arctan"  # linear | arctan | hysteresis
    arctan: ArctanParams = ArctanParams()
    hysteresis: HysteresisParams = HysteresisParams()
    methods: tuple[str, ...] | None = None  # None: all applicable methods
    sigma: float = 0.1
    rho: float = 0.5
    tau_max: float = 1.0
    tol_rel: float = 1e-8
    max_outer: int = 500
    j0: float = 1e5
    cg_rtol: float = 1e-10
    mu_bar: float | None = None
    cycle: CycleParams = CycleParams()

    def __post_init__(self):
        if self.material not in ("linear", "arctan", "hysteresis"):
            raise ConfigError(f"unknown material law {self.material!r}")
        if not self.levels:
            raise ConfigError("at least one refinement level is required")
        if any(l < 0 for l in self.levels):
            raise ConfigError("refinement levels must be >= 0")
        if self.methods is not None:
            if not self.methods:
                raise ConfigError("at least one method is required")
            for m in self.methods:
                if m not in ALL_METHODS:
                    raise ConfigError(f"unknown method {m!r}; "
                                      f"expected one of {ALL_METHODS}")
            if self.material == "hysteresis" and "newton" in self.methods:
                raise ConfigError(
                    "the Newton method cannot be used with the hysteresis "
                    "law: its co-energy is not twice differentiable")

    def active_methods(self) -> tuple[str, ...]:
        if self.methods is not None:
            return self.methods
        if self.material == "hysteresis":
            return tuple(m for m in ALL_METHODS if m != "newton")
        return ALL_METHODS

    def model(self):
        if self.material == "linear":
            return LinearMaterial()
        if self.material == "arctan":
            return ArctanMaterial(self.arctan)
        return HysteresisMaterial(self.hysteresis)


def config_from_sections(sections: dict[str, list[tuple[str, str]]],
                         source: str = "<config>") -> RunConfig:
    geo_kwargs = {}
    for key, value in sections.get("geometry", []):
        where = f"{source}:[geometry] {key}"
        if key in ("air_box", "core_outer", "core_inner", "coil_plus", "coil_minus"):
            geo_kwargs[key] = _parse_rect(value, where)
        elif key == "h":
            geo_kwargs["h"] = _parse_float(value, where)
        else:
            raise ConfigError(f"{where}: unknown geometry key")
    try:
        geometry = GeometryParams(**geo_kwargs)
    except MeshError as exc:
        raise ConfigError(f"{source}:[geometry]: {exc}")

    law = "arctan"
    mat_kwargs = {}
    cells = []
    for key, value in sections.get("material", []):
        where = f"{source}:[material] {key}"
        if key == "law":
            law = value.lower()
        elif key in ("a", "js", "mu0"):
            mat_kwargs[{"a": "A", "js": "Js", "mu0": "mu0"}[key]] = \
                _parse_float(value, where)
        elif key == "cell":
            cells.append(_parse_cell(value, where))
        else:
            raise ConfigError(f"{where}: unknown material key")
    try:
        arctan = ArctanParams(**mat_kwargs)
        hyst_kwargs = dict(mat_kwargs)
        if cells:
            hyst_kwargs["cells"] = tuple(cells)
        hysteresis = HysteresisParams(**hyst_kwargs)
    except ValueError as exc:
        raise ConfigError(f"{source}:[material]: {exc}")

    run_kwargs: dict = {}
    for key, value in sections.get("solver", []):
        where = f"{source}:[solver] {key}"
        if key == "methods":
            run_kwargs["methods"] = tuple(value.lower().replace(",", " ").split())
        elif key == "levels":
            run_kwargs["levels"] = tuple(
                _parse_int(p, where) for p in value.replace(",", " ").split())
        elif key in ("sigma", "rho", "tau_max", "tol_rel", "j0", "cg_rtol"):
            run_kwargs[key] = _parse_float(value, where)
        elif key == "mu_bar":
            run_kwargs["mu_bar"] = None if value.lower() == "none" \
                else _parse_float(value, where)
        elif key == "max_outer":
            run_kwargs["max_outer"] = _parse_int(value, where)
        else:
            raise ConfigError(f"{where}: unknown solver key")

    cyc_kwargs = {}
    for key, value in sections.get("cycle", []):
        where = f"{source}:[cycle] {key}"
        if key == "steps":
            cyc_kwargs["steps"] = _parse_int(value, where)
        elif key == "waveform":
            cyc_kwargs["waveform"] = value
        else:
            raise ConfigError(f"{where}: unknown cycle key")

    return RunConfig(geometry=geometry, material=law, arctan=arctan,
                     hysteresis=hysteresis, cycle=CycleParams(**cyc_kwargs),
                     **run_kwargs)


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    return config_from_sections(parse_config_text(text, str(path)), str(path))
