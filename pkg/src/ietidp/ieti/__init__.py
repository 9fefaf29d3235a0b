"""Dual-primal tearing and interconnecting solver for multipatch Poisson problems."""
from .local import LocalProblem, build_local_problems
from .operators import IetiOperator, Modes, PrimalBasis, compute_primal_basis
from .partition import (ConstraintError, DecompositionError, DofPartition, JumpOperator,
                        PrimalConstraints, build_constraints, build_jump_operators,
                        build_partition, continuity_residual, dual_embedding)
from .saddle import (SaddleSystem, build_saddle_system, calibrated_saddle_preconditioner,
                     coarse_embedding, saddle_preconditioner)
from .solver import (VARIANTS, IetiSetup, StageError, StageStats, VariantConfig, setup, solve,
                     solve_monolithic)
