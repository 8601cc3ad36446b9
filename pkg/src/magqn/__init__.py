"""2D nonlinear magnetostatic FEM solver with fixed-point, Newton, and local
quasi-Newton permeability update strategies, for smooth and hysteretic
material laws."""

from .materials import (ArctanMaterial, ArctanParams, CapabilityError,
                        HysteresisMaterial, HysteresisParams, HysteresisState,
                        LinearMaterial, MU0)
from .mesh import (GeometryParams, Mesh, Rect, Region, generate_benchmark_mesh,
                   load_mesh, refine_uniform, save_mesh)
from .nonlinear import (Armijo, ConstantStep, IterationReport,
                        PermeabilityStrategy, SolverConfig, solve_nonlinear)

__all__ = [
    "ArctanMaterial", "ArctanParams", "Armijo", "CapabilityError",
    "ConstantStep", "GeometryParams", "HysteresisMaterial", "HysteresisParams",
    "HysteresisState", "IterationReport", "LinearMaterial", "MU0", "Mesh",
    "PermeabilityStrategy", "Rect", "Region", "SolverConfig",
    "generate_benchmark_mesh", "load_mesh", "refine_uniform", "save_mesh",
    "solve_nonlinear",
]
__version__ = "0.1.0"
