"""
Shared surface of every strength predictor.

Models see standardised inputs z = (c - offset)/scale, with offset and scale
stored on the model (both C_bar for models fitted by this package), and
answer value and input-gradient queries in the original compliance units.
"""

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
from sklearn.metrics import mean_squared_error, r2_score

from logic.errors import ModelShapeError


class SurrogateModel:
    kind = "base"

    def __init__(self, n_inputs: int, input_offset: float = 0.0, input_scale: float = 1.0):
        if n_inputs < 1:
            raise ModelShapeError(f"model needs at least one input, got {n_inputs}")
        if not (math.isfinite(input_scale) and input_scale > 0):
            raise ModelShapeError(f"input scale must be positive, got {input_scale}")
        self.n_inputs = int(n_inputs)
        self.input_offset = float(input_offset)
        self.input_scale = float(input_scale)

    def _standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ModelShapeError(f"{self.kind} model takes {self.n_inputs} inputs, got shape {np.shape(X)}")
        return (X - self.input_offset) / self.input_scale

    # subclasses work in standardised space
    def _predict_z(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradient_z(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        return self._predict_z(self._standardize(X))

    def predict_one(self, c) -> float:
        return float(self.predict(np.asarray(c, dtype=float).ravel())[0])

    def input_gradient(self, c) -> np.ndarray:
        """d y_hat / d c at one design, in compliance units."""
        Z = self._standardize(np.asarray(c, dtype=float).ravel())
        return self._gradient_z(Z)[0] / self.input_scale

    @property
    def n_parameters(self) -> int:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


@dataclass
class Metrics:
    mse: float
    r2: float
    r2_defined: bool
    n: int

    def as_dict(self) -> Dict:
        return {"mse": self.mse, "r2": self.r2 if self.r2_defined else None, "n": self.n}


def metrics(y_true, y_pred) -> Metrics:
    """
    Mean squared error and coefficient of determination.

    R^2 is undefined (r2_defined False, r2 NaN) with fewer than two samples
    or when the true labels have zero variance; MSE is always returned.
    """
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ModelShapeError(f"label/prediction length mismatch: {y_true.shape[0]} vs {y_pred.shape[0]}")
    if y_true.size == 0:
        raise ModelShapeError("cannot score an empty split")
    mse = float(mean_squared_error(y_true, y_pred))
    if y_true.size < 2 or float(np.var(y_true)) == 0.0:
        return Metrics(mse=mse, r2=float("nan"), r2_defined=False, n=int(y_true.size))
    return Metrics(mse=mse, r2=float(r2_score(y_true, y_pred)), r2_defined=True, n=int(y_true.size))
