"""Semidefinite-relaxation and norm-inequality bounds for channels shaped by
1-bit programmable loads, with discrete optimizers to probe tightness."""

from .bounds import (
    BoundResult, effective_rank, fid_bisection_bound, fid_sdr_bound, frob_ni_bound, frob_nio_bound,
    frob_sdr_bound,
)
from .model import (
    FlipEvaluator, ModelError, ScenarioModel, apply_gauge, encode, fidelity, frobenius_sq, load_model,
    reduce_fixed, save_model, transfer, transfer_bits,
)
from .scenario import ScenarioSpec, generate, target_operator
from .sdp import SdpSolution, SolverOptions, solve
from .search import (
    OptResult, coordinate_descent, exhaustive_search, fidelity_objective, frobenius_objective,
    genetic_algorithm, project_sdr,
)

__version__ = "0.1.0"
