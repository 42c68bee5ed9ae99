"""Sample-adapted finite volume solvers for scalar conservation laws with
random, spatially discontinuous flux coefficients."""

from jumpflux.jumpfield import (
    JumpField,
    Partition,
    SampledCoefficient,
    eval_coefficient,
    make_preset,
    sample_partition,
)
from jumpflux.mesh import (
    Mesh,
    build_equidistant,
    build_jump_adapted,
    build_time_grid,
    refine_wave_cells,
)
from jumpflux.randfield import (
    CovarianceSpec,
    KarhunenLoeveField,
    KLBasis,
    KLRealization,
    kl_sample,
    matern_kernel,
    nystrom_eigenpairs,
)
from jumpflux.solver import (
    FluxModel,
    GodunovSolver,
    Solution,
    SolverConfig,
    burgers_flux,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "CovarianceSpec",
    "FluxModel",
    "GodunovSolver",
    "JumpField",
    "KLBasis",
    "KLRealization",
    "KarhunenLoeveField",
    "Mesh",
    "Partition",
    "SampledCoefficient",
    "Solution",
    "SolverConfig",
    "build_equidistant",
    "build_jump_adapted",
    "build_time_grid",
    "burgers_flux",
    "eval_coefficient",
    "kl_sample",
    "make_preset",
    "matern_kernel",
    "nystrom_eigenpairs",
    "refine_wave_cells",
    "sample_partition",
    "solve",
]
