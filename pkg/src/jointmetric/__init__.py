"""Joint learning of view-specific metrics ``K_t = L M_t L^T`` from triplet comparisons."""

__version__ = "0.1.0"

from .data import GroundTruthViews, TripletDataset, gen_clustered, gen_uniform, sample_triplets
from .evaluation import triplet_error
from .solver import SolverConfig, TrainedModel, cross_validate, train

__all__ = [
    "GroundTruthViews",
    "SolverConfig",
    "TrainedModel",
    "TripletDataset",
    "__version__",
    "cross_validate",
    "gen_clustered",
    "gen_uniform",
    "sample_triplets",
    "train",
    "triplet_error",
]
