"""Distributionally robust microgrid unit commitment under a KL-divergence ambiguity set.

Modules
-------
market_data
    Hourly CSV ingestion, daily net-load/price profiles, surcharge, train/test split, synthetic data.
clustering
    Soft-DTW, soft-DTW k-means, elbow scan and nominal scenario sets.
dispatch
    Merit-order economic dispatch, its duals and the commitment feasibility rules.
optkernel
    Bounded-variable revised simplex and branch-and-bound.
dro
    Worst-case expectation, Benders cuts, the robust solver and the stochastic benchmark.
evaluation
    Out-of-sample replay and the rho sweep.
"""

from .clustering import ClusteringConfig, Scenario, ScenarioSet, kmeans_sdtw, sdtw, sdtw_divergence
from .dispatch import CommitmentSchedule, MicrogridInstance, TgrParams, evaluate_q
from .dro import SolverConfig, solve_rkl_muc, solve_suc, worst_case_expectation
from .evaluation import out_of_sample_cost, rho_sweep
from .market_data import Dataset, DailyProfile, load_profiles

__version__ = "0.1.0"

__all__ = [
    "ClusteringConfig",
    "Scenario",
    "ScenarioSet",
    "kmeans_sdtw",
    "sdtw",
    "sdtw_divergence",
    "CommitmentSchedule",
    "MicrogridInstance",
    "TgrParams",
    "evaluate_q",
    "SolverConfig",
    "solve_rkl_muc",
    "solve_suc",
    "worst_case_expectation",
    "out_of_sample_cost",
    "rho_sweep",
    "Dataset",
    "DailyProfile",
    "load_profiles",
]
