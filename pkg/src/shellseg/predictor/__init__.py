"""Predictors mapping shells to per-direction signed distances."""

from ..shell import ground_truth_response
from .model import ConvRegressor
from .training import TrainConfig, TrainingDiverged, loss_and_gradients, mean_abs_error, train


class OraclePredictor:
    """Looks the answer up in the ground-truth distance field."""

    def __init__(self, field):
        self.field = field
        self.tau = field.tau

    def predict(self, vol, grid, pivots, radii):
        return ground_truth_response(self.field, pivots, radii, grid)


__all__ = [
    "ConvRegressor", "OraclePredictor", "TrainConfig", "TrainingDiverged",
    "loss_and_gradients", "mean_abs_error", "train",
]
