"""Deep embedding clustering driven by sample stability."""

__version__ = "0.1.0"

from .autoencoder import Autoencoder, AugmentSpec, PretrainConfig, pretrain
from .estimator import DECS
from .gradients import clustering_backward, finite_difference_check, lipschitz_bound
from .metrics import accuracy, nmi
from .stability import (
    StabilityParams,
    clustering_loss,
    co_association,
    determinacy,
    otsu_threshold,
    sample_stability,
)
from .trainer import TrainConfig, assign_clusters, kmeans_init, train

__all__ = [
    "DECS",
    "Autoencoder",
    "AugmentSpec",
    "PretrainConfig",
    "StabilityParams",
    "TrainConfig",
    "accuracy",
    "assign_clusters",
    "clustering_backward",
    "clustering_loss",
    "co_association",
    "determinacy",
    "finite_difference_check",
    "kmeans_init",
    "lipschitz_bound",
    "nmi",
    "otsu_threshold",
    "pretrain",
    "sample_stability",
    "train",
]
