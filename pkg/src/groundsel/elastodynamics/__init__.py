from .mesh import ElementOperator, HexMesh, build_mesh, dashpot_coefficients, reference_matrices
from .solver import (
    ConvergenceError,
    NewmarkIntegrator,
    TimeIntegratorConfig,
    cg_solve,
    run_forward,
    run_forward_batch,
)
from .greenbank import GreenBank, compute_green_bank, impulse_p, read_green_bank, write_green_bank

__all__ = [
    "ConvergenceError",
    "ElementOperator",
    "GreenBank",
    "HexMesh",
    "NewmarkIntegrator",
    "TimeIntegratorConfig",
    "build_mesh",
    "cg_solve",
    "compute_green_bank",
    "dashpot_coefficients",
    "impulse_p",
    "read_green_bank",
    "reference_matrices",
    "run_forward",
    "run_forward_batch",
    "write_green_bank",
]
