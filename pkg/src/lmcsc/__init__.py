"""Guided image super-resolution via learned multimodal convolutional sparse coding.

The package contains the non-learned coupled sparse-coding solver, the
unfolded network derived from it, hand-written training machinery, a
PGM/PPM data pipeline and PSNR/SSIM evaluation.  See the README for the
CLI and the acceptance suite.
"""

from .config import TrainConfig, config_load, config_loads
from .network import NetConfig, NetworkParams, init_params, network_forward, params_from_solver
from .prox import ProxParams, prox_l1l1_map, prox_l1l1_oracle, prox_l1l1_scalar, soft_threshold
from .solver import (
    CSCProblem,
    SolveTrace,
    estimate_lipschitz,
    generate_synthetic_coupled,
    objective_l1l1,
    solve_coupled_csc,
    solve_csc_ista,
)

__all__ = [
    "TrainConfig",
    "config_load",
    "config_loads",
    "NetConfig",
    "NetworkParams",
    "init_params",
    "network_forward",
    "params_from_solver",
    "ProxParams",
    "prox_l1l1_map",
    "prox_l1l1_oracle",
    "prox_l1l1_scalar",
    "soft_threshold",
    "CSCProblem",
    "SolveTrace",
    "estimate_lipschitz",
    "generate_synthetic_coupled",
    "objective_l1l1",
    "solve_coupled_csc",
    "solve_csc_ista",
]

__version__ = "0.1.0"
