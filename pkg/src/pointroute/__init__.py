"""pointroute: a neural TSP solver with classical oracles and a TSPLIB harness."""

from .instance import (
    Instance,
    Tour,
    apply_symmetries,
    generate_instances,
    normalize_to_unit_square,
    optimality_gap,
    tour_length,
    validate_tour,
)
from .model import ModelConfig, NodeEmbeddings, encode, featurize, init_params
from .rollout import RolloutBatch, Trajectory, best_of, multi_start_rollout, trajectory_log_prob
from .training import Adam, TrainConfig, normalized_advantages, reinforce_loss, train

__version__ = "0.1.0"

__all__ = [
    "Instance",
    "Tour",
    "ModelConfig",
    "TrainConfig",
    "NodeEmbeddings",
    "RolloutBatch",
    "Trajectory",
    "Adam",
    "apply_symmetries",
    "best_of",
    "encode",
    "featurize",
    "generate_instances",
    "init_params",
    "multi_start_rollout",
    "normalize_to_unit_square",
    "normalized_advantages",
    "optimality_gap",
    "reinforce_loss",
    "tour_length",
    "train",
    "trajectory_log_prob",
    "validate_tour",
]
