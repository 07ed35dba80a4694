"""Hard-disk gas simulator with a birth-death Markov-chain surrogate model.

The pipeline: simulate 27 elastically colliding disks in a 3x3-partitioned
square box, count disks per cell on a fixed time grid, estimate per-cell-type
birth-death transition matrices from the counts, solve their stationary
distributions, fit mean-constrained truncated normals, and regress mean
occupancy against the disk radius.
"""

from diskmc.chain import (
    TransitionMatrix,
    assemble,
    calibrate_n_states,
    detailed_balance_oracle,
    stationary_distribution,
)
from diskmc.domain import (
    Particle,
    SimConfig,
    SubdomainGrid,
    SubdomainKind,
    adjacency_of,
    initial_placement,
    kind_of,
    subdomain_of,
)
from diskmc.dynamics import advance_to, run_realization, simulate_realization
from diskmc.fitstats import (
    TruncNormFit,
    TruncNormParams,
    fit_trunc_normal,
    linear_fit,
    summarize_realization_means,
    trunc_normal_mean,
    trunc_normal_pdf,
)
from diskmc.harness import ExperimentSpec, convergence_study, run_experiment
from diskmc.occupancy import OccupancyCounters, accumulate, delta_series, merge, pool

__version__ = "0.1.0"

__all__ = [
    "OccupancyCounters",
    "Particle",
    "SimConfig",
    "SubdomainGrid",
    "SubdomainKind",
    "TransitionMatrix",
    "TruncNormFit",
    "TruncNormParams",
    "ExperimentSpec",
    "accumulate",
    "adjacency_of",
    "advance_to",
    "assemble",
    "calibrate_n_states",
    "convergence_study",
    "delta_series",
    "detailed_balance_oracle",
    "fit_trunc_normal",
    "initial_placement",
    "kind_of",
    "linear_fit",
    "merge",
    "pool",
    "run_experiment",
    "run_realization",
    "simulate_realization",
    "stationary_distribution",
    "subdomain_of",
    "summarize_realization_means",
    "trunc_normal_mean",
    "trunc_normal_pdf",
    "__version__",
]
