"""
Regression baselines: linear with bias, per-coordinate cubic polynomial,
and Gaussian radial basis functions. All three are linear least squares on a
fixed feature map plus a bias, solved with an optional ridge penalty on the
feature weights (never on the bias).
"""

import logging
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.cluster import KMeans

from logic.errors import ModelShapeError, SurrogateError
from logic.surrogate import SurrogateModel

logger = logging.getLogger(__name__)

VARIANTS = ("linear_with_bias", "polynomial_degree3", "gaussian_rbf")
FALLBACK_RIDGE = 1e-8
# Gram matrices beyond this condition number get FALLBACK_RIDGE
MAX_CONDITION = 1e12


class RegressionModel(SurrogateModel):
    """Fitted regression baseline; RBF centers and width are in standardised units."""

    kind = "regression"

    def __init__(
        self,
        variant: str,
        n_inputs: int,
        weights,
        bias: float,
        input_offset: float = 0.0,
        input_scale: float = 1.0,
        centers: Optional[np.ndarray] = None,
        width: Optional[float] = None,
        ridge: float = 0.0,
    ):
        super().__init__(n_inputs, input_offset, input_scale)
        if variant not in VARIANTS:
            raise SurrogateError(f"unknown regression variant '{variant}', expected one of {', '.join(VARIANTS)}")
        self.variant = variant
        self.weights = np.asarray(weights, dtype=float).ravel()
        self.bias = float(bias)
        self.centers = None if centers is None else np.asarray(centers, dtype=float).reshape(-1, n_inputs)
        self.width = None if width is None else float(width)
        self.ridge = float(ridge)

        expected = {
            "linear_with_bias": n_inputs,
            "polynomial_degree3": 3 * n_inputs,
            "gaussian_rbf": 0 if self.centers is None else self.centers.shape[0],
        }[variant]
        if variant == "gaussian_rbf" and (self.centers is None or not self.width or self.width <= 0):
            raise SurrogateError("gaussian_rbf needs centers and a positive width")
        if self.weights.shape[0] != expected:
            raise ModelShapeError(f"{variant} expects {expected} weights, got {self.weights.shape[0]}")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise SurrogateError(f"{variant} fit produced non-finite parameters")

    def features(self, Z: np.ndarray) -> np.ndarray:
        return _feature_map(self.variant, Z, self.centers, self.width)

    def _predict_z(self, Z: np.ndarray) -> np.ndarray:
        return self.features(Z) @ self.weights + self.bias

    def _gradient_z(self, Z: np.ndarray) -> np.ndarray:
        n = self.n_inputs
        if self.variant == "linear_with_bias":
            return np.broadcast_to(self.weights, Z.shape).copy()
        if self.variant == "polynomial_degree3":
            w1, w2, w3 = self.weights[:n], self.weights[n:2 * n], self.weights[2 * n:]
            return w1 + 2.0 * w2 * Z + 3.0 * w3 * Z ** 2
        phi = self.features(Z)
        # d phi_j / dz = phi_j (mu_j - z) / s^2
        weighted = phi * self.weights
        return (weighted @ self.centers - weighted.sum(axis=1, keepdims=True) * Z) / self.width ** 2

    @property
    def n_parameters(self) -> int:
        return self.weights.shape[0] + 1

    def describe(self) -> str:
        if self.variant == "gaussian_rbf":
            return f"{self.variant} (centers={self.centers.shape[0]}, width={self.width:.4g})"
        return self.variant


def _feature_map(variant: str, Z: np.ndarray, centers: Optional[np.ndarray], width: Optional[float]) -> np.ndarray:
    if variant == "linear_with_bias":
        return Z
    if variant == "polynomial_degree3":
        # powers of each coordinate, no cross terms: [z, z^2, z^3]
        return np.hstack([Z, Z ** 2, Z ** 3])
    return np.exp(-cdist(Z, centers, "sqeuclidean") / (2.0 * width ** 2))


# =============================================================================
# SOLVER
# =============================================================================

def _standardization(X: np.ndarray, mean_c: Optional[float]):
    offset = float(X.mean()) if mean_c is None else float(mean_c)
    scale = abs(offset) if offset != 0 else 1.0
    return offset, scale


def _check_training_data(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ModelShapeError(f"training inputs {np.shape(X)} do not match {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise SurrogateError("no training samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SurrogateError("training data contains non-finite values")
    return X, y


def _solve(Phi: np.ndarray, y: np.ndarray, ridge: float, variant: str):
    """Least squares on [Phi, 1] with ridge * ||w||^2, via an augmented system."""
    n, p = Phi.shape
    A = np.hstack([Phi, np.ones((n, 1))])
    b = y
    if ridge > 0:
        penalty = np.zeros((p, p + 1))
        penalty[:, :p] = np.sqrt(ridge) * np.eye(p)
        A = np.vstack([A, penalty])
        b = np.concatenate([y, np.zeros(p)])
    solution, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if ridge == 0 and rank < p + 1:
        raise SurrogateError(
            f"{variant}: normal equations are rank deficient (rank {rank} of {p + 1}); "
            f"set a positive ridge term"
        )
    return solution[:p], float(solution[p])


def fit_linear(X, y, ridge: float = 0.0, mean_c: Optional[float] = None) -> RegressionModel:
    """
    Least-squares weights and bias.

    With fewer than N+1 samples and no ridge term the solve falls back to
    ridge 1e-8 (logged). A rank-deficient problem without ridge raises.
    """
    X, y = _check_training_data(X, y)
    offset, scale = _standardization(X, mean_c)
    Z = (X - offset) / scale
    n, d = X.shape
    if ridge == 0 and n < d + 1:
        logger.warning(f"[TRAIN] linear fit with {n} samples for {d} inputs, using ridge {FALLBACK_RIDGE}")
        ridge = FALLBACK_RIDGE
    w, b = _solve(Z, y, ridge, "linear_with_bias")
    return RegressionModel("linear_with_bias", d, w, b, offset, scale, ridge=ridge)


def fit_polynomial3(X, y, ridge: float = 0.0, mean_c: Optional[float] = None) -> RegressionModel:
    """Least squares on per-coordinate powers {z, z^2, z^3} plus bias."""
    X, y = _check_training_data(X, y)
    offset, scale = _standardization(X, mean_c)
    Z = (X - offset) / scale
    n, d = X.shape
    if ridge == 0 and n < 3 * d + 1:
        logger.warning(f"[TRAIN] cubic fit with {n} samples for {3 * d} features, using ridge {FALLBACK_RIDGE}")
        ridge = FALLBACK_RIDGE
    w, b = _solve(_feature_map("polynomial_degree3", Z, None, None), y, ridge, "polynomial_degree3")
    return RegressionModel("polynomial_degree3", d, w, b, offset, scale, ridge=ridge)


def choose_centers(Z: np.ndarray, n_centers: int, method: str = "kmeans", seed: int = 0) -> np.ndarray:
    """RBF centers in standardised space: k-means centroids or a random subset of samples."""
    m = min(int(n_centers), Z.shape[0])
    if m < 1:
        raise SurrogateError(f"need at least one RBF center, got {n_centers}")
    if method == "kmeans":
        km = KMeans(n_clusters=m, n_init=4, random_state=seed).fit(Z)
        return km.cluster_centers_
    if method == "random":
        rng = np.random.default_rng(seed)
        return Z[np.sort(rng.choice(Z.shape[0], size=m, replace=False))]
    raise SurrogateError(f"unknown center selection '{method}', expected kmeans or random")


def base_width(centers: np.ndarray) -> float:
    """Median center spacing, the unit the RBF width grid is scaled by."""
    if centers.shape[0] < 2:
        return 1.0
    spacing = float(np.median(pdist(centers)))
    return spacing if spacing > 0 else 1.0


def fit_rbf(
    X,
    y,
    n_centers: int = 200,
    width: Optional[float] = None,
    ridge: float = 0.0,
    centers: Union[str, np.ndarray] = "kmeans",
    seed: int = 0,
    mean_c: Optional[float] = None,
) -> RegressionModel:
    """
    Gaussian RBF regression exp(-||z - mu||^2 / (2 width^2)) with bias.

    Args:
        X, y: training inputs and labels
        n_centers: number of centers (capped at the sample count)
        width: kernel width in standardised units; None uses the median center spacing
        ridge: penalty on the RBF weights
        centers: "kmeans", "random", or an explicit array of centers in compliance units
        seed: seed of the center selection
        mean_c: standardisation offset/scale (defaults to the mean of X)

    Returns:
        Fitted RegressionModel (variant gaussian_rbf)
    """
    X, y = _check_training_data(X, y)
    offset, scale = _standardization(X, mean_c)
    Z = (X - offset) / scale
    if isinstance(centers, str):
        mu = choose_centers(Z, n_centers, centers, seed)
    else:
        mu = (np.asarray(centers, dtype=float).reshape(-1, X.shape[1]) - offset) / scale
    if width is None:
        width = base_width(mu)
    if not width > 0:
        raise SurrogateError(f"RBF width must be positive, got {width}")

    Phi = _feature_map("gaussian_rbf", Z, mu, width)
    if ridge == 0:
        cond = np.linalg.cond(np.hstack([Phi, np.ones((Phi.shape[0], 1))]))
        if not np.isfinite(cond) or cond ** 2 > MAX_CONDITION:
            logger.warning(f"[TRAIN] RBF Gram matrix is ill-conditioned (cond {cond:.3g}), using ridge {FALLBACK_RIDGE}")
            ridge = FALLBACK_RIDGE
    w, b = _solve(Phi, y, ridge, "gaussian_rbf")
    return RegressionModel("gaussian_rbf", X.shape[1], w, b, offset, scale, centers=mu, width=width, ridge=ridge)


def fit_regression(variant: str, X, y, **kwargs) -> RegressionModel:
    fitters = {
        "linear_with_bias": fit_linear,
        "polynomial_degree3": fit_polynomial3,
        "gaussian_rbf": fit_rbf,
    }
    if variant not in fitters:
        raise SurrogateError(f"unknown regression variant '{variant}', expected one of {', '.join(VARIANTS)}")
    return fitters[variant](X, y, **kwargs)


def rbf_width_grid(X, factors: Sequence[float], n_centers: int, seed: int = 0,
                   mean_c: Optional[float] = None) -> np.ndarray:
    """Candidate widths: factors times the median spacing of the centers fitted on X."""
    X = np.asarray(X, dtype=float)
    offset, scale = _standardization(X, mean_c)
    mu = choose_centers((X - offset) / scale, n_centers, "kmeans", seed)
    return np.asarray(factors, dtype=float) * base_width(mu)
