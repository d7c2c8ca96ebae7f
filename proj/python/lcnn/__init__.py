"""Low-curvature network training and geometry metrics."""

from ._lcnn import (
    Dataset,
    Model,
    accuracy,
    load_checkpoint,
    run_experiment,
    synthetic_images,
    two_moons,
)

__all__ = [
    "Dataset",
    "Model",
    "accuracy",
    "load_checkpoint",
    "run_experiment",
    "synthetic_images",
    "two_moons",
]
