"""
Cross-validated hyperparameter search, predictor training and the
model-comparison table.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.model_selection import KFold

from config.run_config import TrainConfig
from logic.errors import SurrogateError
from logic.mlp import MlpModel, TrainResult, mlp_train
from logic.regression import fit_linear, fit_polynomial3, fit_rbf, rbf_width_grid
from logic.runtime import CV_STREAM, TRAIN_STREAM, int_seed, parallel_map, rng_stream
from logic.surrogate import Metrics, SurrogateModel, metrics

logger = logging.getLogger(__name__)

_TIE_RTOL = 1e-12


@dataclass
class CvCell:
    params: Dict
    fold_mse: List[float]
    n_parameters: int

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.fold_mse))


@dataclass
class CvResult:
    best_params: Dict
    table: List[CvCell]
    k: int

    @property
    def best(self) -> CvCell:
        return next(cell for cell in self.table if cell.params == self.best_params)


def kfold_cv_grid(
    X,
    y,
    grid: Sequence[Dict],
    fit: Callable[[np.ndarray, np.ndarray, Dict, int], SurrogateModel],
    k: int = 5,
    seed: int = 0,
    threads: Optional[int] = None,
) -> CvResult:
    """
    k-fold cross-validation over a hyperparameter grid.

    Args:
        X, y: training data
        grid: parameter dictionaries, in grid order
        fit: fit(X_fold, y_fold, params, task_index) -> model
        k: number of folds
        seed: shuffling seed of the folds (shared by every cell)
        threads: worker cap; cells x folds run independently

    Returns:
        CvResult with the mean validation MSE of every cell; the winner has
        the lowest mean, ties going to fewer parameters, then grid order
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    grid = list(grid)
    if not grid:
        raise SurrogateError("hyperparameter grid is empty")
    if k < 2:
        raise SurrogateError(f"cross-validation needs at least 2 folds, got {k}")
    if X.shape[0] < k:
        raise SurrogateError(f"{X.shape[0]} samples cannot fill {k} folds (a fold would be empty)")

    folds = list(KFold(n_splits=k, shuffle=True, random_state=seed).split(X))
    tasks = [(c, f) for c in range(len(grid)) for f in range(k)]

    def run(task):
        cell, fold = task
        train_idx, val_idx = folds[fold]
        model = fit(X[train_idx], y[train_idx], grid[cell], cell * k + fold)
        return metrics(y[val_idx], model.predict(X[val_idx])).mse, model.n_parameters

    outcomes = parallel_map(run, tasks, threads=threads)

    table = []
    for c, params in enumerate(grid):
        cell_out = outcomes[c * k:(c + 1) * k]
        for f, (mse, _) in enumerate(cell_out):
            logger.debug(f"[TRAIN] CV {params} fold {f}: val_mse={mse:.6e}")
        table.append(CvCell(params=dict(params), fold_mse=[m for m, _ in cell_out], n_parameters=cell_out[0][1]))

    lowest = min(cell.mean_mse for cell in table)
    tied = [cell for cell in table if cell.mean_mse <= lowest + _TIE_RTOL * max(abs(lowest), 1e-300)]
    best = min(tied, key=lambda cell: cell.n_parameters)
    logger.info(f"[TRAIN] CV over {len(grid)} cells x {k} folds selected {best.params} "
                f"(mean val MSE {best.mean_mse:.6e})")
    return CvResult(best_params=best.params, table=table, k=k)


def mlp_grid(config: TrainConfig) -> List[Dict]:
    return [{"hidden_layers": h, "width": w} for h in config.hidden_layer_grid for w in config.width_grid]


def _architecture_index(hidden_layers: int, width: int) -> int:
    # same architecture, same seed stream, wherever it is trained
    return int(hidden_layers) * 100003 + int(width)


def train_mlp(X, y, config: TrainConfig, hidden_layers: int, width: int, master_seed: int,
              mean_c: Optional[float] = None, X_val=None, y_val=None) -> TrainResult:
    rng = rng_stream(master_seed, TRAIN_STREAM, _architecture_index(hidden_layers, width))
    return mlp_train(X, y, config, hidden_layers, width, rng, X_val=X_val, y_val=y_val, mean_c=mean_c)


@dataclass
class PredictorFit:
    result: TrainResult
    hidden_layers: int
    width: int
    cv: Optional[CvResult] = None

    @property
    def model(self) -> MlpModel:
        return self.result.model


def train_predictor(X, y, config: TrainConfig, master_seed: int, mean_c: Optional[float] = None,
                    threads: Optional[int] = None) -> PredictorFit:
    """
    Select an MLP architecture by k-fold CV (cv_epochs per fold), then
    train it on the full training split for `epochs`.
    """
    cv = None
    hidden_layers, width = config.hidden_layers, config.width
    if config.grid_search:
        def fit(X_fold, y_fold, params, task):
            rng = rng_stream(master_seed, CV_STREAM, task)
            return mlp_train(X_fold, y_fold, config, params["hidden_layers"], params["width"], rng,
                             mean_c=mean_c, epochs=config.cv_epochs).model

        cv = kfold_cv_grid(X, y, mlp_grid(config), fit, k=config.cv_folds,
                           seed=int_seed(master_seed, CV_STREAM), threads=threads)
        hidden_layers, width = cv.best_params["hidden_layers"], cv.best_params["width"]

    logger.info(f"[TRAIN] Training MLP {hidden_layers}x{width} for {config.epochs} epochs on {len(y)} samples")
    result = train_mlp(X, y, config, hidden_layers, width, master_seed, mean_c=mean_c)
    logger.info(f"[TRAIN] Best checkpoint at epoch {result.best_epoch}: train MSE {result.train_metrics.mse:.6e}")
    return PredictorFit(result=result, hidden_layers=hidden_layers, width=width, cv=cv)


# =============================================================================
# MODEL COMPARISON
# =============================================================================

@dataclass
class ComparisonRow:
    model: str
    parameters: str
    train: Metrics
    test: Metrics
    cv_mse: Optional[float] = None
    n_parameters: int = 0

    def as_row(self) -> List:
        def r2(m: Metrics):
            return m.r2 if m.r2_defined else None
        return [self.model, self.parameters, self.train.mse, r2(self.train), self.test.mse, r2(self.test),
                self.cv_mse, self.n_parameters]


COMPARISON_HEADER = ["model", "parameters", "train_mse", "train_r2", "test_mse", "test_r2", "cv_mse", "n_parameters"]


def _row(name: str, parameters: str, model: SurrogateModel, X_train, y_train, X_test, y_test,
         cv_mse: Optional[float] = None) -> ComparisonRow:
    return ComparisonRow(
        model=name,
        parameters=parameters,
        train=metrics(y_train, model.predict(X_train)),
        test=metrics(y_test, model.predict(X_test)),
        cv_mse=cv_mse,
        n_parameters=model.n_parameters,
    )


def compare_models(X_train, y_train, X_test, y_test, config: TrainConfig, master_seed: int,
                   mean_c: Optional[float] = None, selected: Optional[PredictorFit] = None,
                   threads: Optional[int] = None) -> List[ComparisonRow]:
    """
    Fit every predictor family on the same split and score it.

    Rows: linear with bias, cubic polynomial, Gaussian RBF (width chosen by
    CV), MLP 1x64, MLP 6x64 and, when given, the CV-selected MLP.
    """
    rows = []

    linear = fit_linear(X_train, y_train, ridge=config.linear_ridge, mean_c=mean_c)
    rows.append(_row("linear_regression", f"with bias, ridge={config.linear_ridge:g}", linear,
                     X_train, y_train, X_test, y_test))

    poly = fit_polynomial3(X_train, y_train, ridge=config.poly_ridge, mean_c=mean_c)
    rows.append(_row("polynomial_regression", f"order=3 (no cross terms), ridge={config.poly_ridge:g}", poly,
                     X_train, y_train, X_test, y_test))

    center_seed = int_seed(master_seed, CV_STREAM, 1)
    widths = rbf_width_grid(X_train, config.rbf_width_factors, config.rbf_centers, seed=center_seed, mean_c=mean_c)
    rbf_grid = [{"width": float(w)} for w in widths]
    rbf_cv = kfold_cv_grid(
        X_train, y_train, rbf_grid,
        lambda Xf, yf, params, _: fit_rbf(Xf, yf, n_centers=config.rbf_centers, width=params["width"],
                                          ridge=config.rbf_ridge, seed=center_seed, mean_c=mean_c),
        k=config.cv_folds, seed=int_seed(master_seed, CV_STREAM), threads=threads,
    )
    width = rbf_cv.best_params["width"]
    rbf = fit_rbf(X_train, y_train, n_centers=config.rbf_centers, width=width, ridge=config.rbf_ridge,
                  seed=center_seed, mean_c=mean_c)
    rows.append(_row("gaussian_rbf", f"centers={config.rbf_centers}, width={width:.4g}", rbf,
                     X_train, y_train, X_test, y_test, cv_mse=rbf_cv.best.mean_mse))

    for hidden_layers in (1, 6):
        if selected is not None and (selected.hidden_layers, selected.width) == (hidden_layers, 64):
            model = selected.model
        else:
            model = train_mlp(X_train, y_train, config, hidden_layers, 64, master_seed, mean_c=mean_c).model
        cv_mse = None
        if selected is not None and selected.cv is not None:
            cv_mse = next((c.mean_mse for c in selected.cv.table
                           if c.params == {"hidden_layers": hidden_layers, "width": 64}), None)
        rows.append(_row(f"mlp_{hidden_layers}x64", f"{hidden_layers} hidden layers x 64, tanh", model,
                         X_train, y_train, X_test, y_test, cv_mse=cv_mse))

    if selected is not None:
        cv_mse = selected.cv.best.mean_mse if selected.cv is not None else None
        rows.append(_row("mlp_selected", f"{selected.hidden_layers} hidden layers x {selected.width}, tanh",
                         selected.model, X_train, y_train, X_test, y_test, cv_mse=cv_mse))

    for row in rows:
        test_r2 = f"{row.test.r2:.4f}" if row.test.r2_defined else "undefined"
        logger.info(f"[TRAIN] {row.model}: test MSE {row.test.mse:.4e}, test R2 {test_r2}")
    return rows
