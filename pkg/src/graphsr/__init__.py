"""Class-imbalanced node classification with reinforcement-learned pseudo-label selection."""

from .experiment import ExperimentConfig, RunResult, run_graphsr, run_method
from .gnn import GnnModel, TrainConfig, train
from .graph import Graph, Split, SplitSpec, load_dataset, make_imbalanced_split
from .rl import PolicyAgent, RLConfig, SelectionEnv, select_supplement
from .similarity import CandidateSet, build_candidates, compute_centers

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "ExperimentConfig",
    "GnnModel",
    "Graph",
    "PolicyAgent",
    "RLConfig",
    "RunResult",
    "SelectionEnv",
    "Split",
    "SplitSpec",
    "TrainConfig",
    "build_candidates",
    "compute_centers",
    "load_dataset",
    "make_imbalanced_split",
    "run_graphsr",
    "run_method",
    "select_supplement",
    "train",
]
