"""
Multilayer perceptron strength predictor in numpy.

tanh hidden layers, identity output. Inputs are standardised as
(c - C_bar)/C_bar and targets by their training mean and standard deviation;
both transforms are stored with the model so prediction and input gradients
are in compliance/strength units.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize

from config.run_config import TrainConfig
from logic.errors import ModelShapeError, SurrogateError, TrainingDivergedError
from logic.surrogate import Metrics, SurrogateModel, metrics

logger = logging.getLogger(__name__)

HIDDEN_ACTIVATION = "tanh"
OUTPUT_ACTIVATION = "identity"

# relative singular-value cutoff for the training-input span
SPAN_RCOND = 1e-10
LBFGS_MEMORY = 20
LBFGS_MAXFUN_FACTOR = 4


class MlpModel(SurrogateModel):
    kind = "mlp"

    def __init__(
        self,
        layer_sizes: Sequence[int],
        weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
        input_offset: float = 0.0,
        input_scale: float = 1.0,
        output_offset: float = 0.0,
        output_scale: float = 1.0,
    ):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or layer_sizes[-1] != 1 or min(layer_sizes) < 1:
            raise ModelShapeError(f"layer sizes must be [n_inputs, ..., 1] with positive widths, got {layer_sizes}")
        super().__init__(layer_sizes[0], input_offset, input_scale)
        self.layer_sizes = layer_sizes
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float).ravel() for b in biases]
        self.output_offset = float(output_offset)
        self.output_scale = float(output_scale)

        n_layers = len(layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ModelShapeError(f"{n_layers} layers need {n_layers} weight matrices and bias vectors, "
                                  f"got {len(self.weights)} and {len(self.biases)}")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (layer_sizes[l], layer_sizes[l + 1]) or b.shape != (layer_sizes[l + 1],):
                raise ModelShapeError(f"layer {l}: expected weights {(layer_sizes[l], layer_sizes[l + 1])} and "
                                      f"bias ({layer_sizes[l + 1]},), got {W.shape} and {b.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise SurrogateError(f"layer {l} has non-finite parameters")

    @property
    def hidden_layers(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def width(self) -> int:
        return max(self.layer_sizes[1:-1], default=0)

    @property
    def n_parameters(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def describe(self) -> str:
        return f"mlp {self.hidden_layers}x{self.width}" if self.hidden_layers else "mlp (no hidden layer)"

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.input_offset, self.input_scale, self.output_offset, self.output_scale)

    def _activations(self, Z: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        acts = [Z]
        a = Z
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ W + b)
            acts.append(a)
        out = a @ self.weights[-1] + self.biases[-1]
        return acts, out[:, 0]

    def _predict_z(self, Z: np.ndarray) -> np.ndarray:
        return self._activations(Z)[1] * self.output_scale + self.output_offset

    def _gradient_z(self, Z: np.ndarray) -> np.ndarray:
        acts, _ = self._activations(Z)
        delta = np.broadcast_to(self.weights[-1][:, 0], acts[-1].shape)
        for l in range(len(self.weights) - 2, -1, -1):
            # back through tanh, then through layer l
            delta = (delta * (1.0 - acts[l + 1] ** 2)) @ self.weights[l].T
        return delta * self.output_scale


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def mlp_forward(model: MlpModel, c):
    """Predicted strength for one design (float) or a batch of designs (array)."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        return model.predict_one(c)
    return model.predict(c)


def mlp_input_gradient(model: MlpModel, c) -> np.ndarray:
    """Exact reverse-mode d y_hat / d c, per design for a batch."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        return model.input_gradient(c)
    return model._gradient_z(model._standardize(c)) / model.input_scale


# =============================================================================
# TRAINING
# =============================================================================

@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: Optional[float] = None


@dataclass
class TrainResult:
    model: MlpModel
    best_epoch: int
    train_metrics: Metrics
    val_metrics: Optional[Metrics] = None
    history: List[EpochRecord] = field(default_factory=list)


class _Adam:
    def __init__(self, params: List[np.ndarray], beta1: float, beta2: float, epsilon: float):
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: List[np.ndarray], grads: List[np.ndarray], lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def _backprop(model: MlpModel, Z: np.ndarray, t: np.ndarray,
              weight_decay: float = 0.0) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Loss on standardised targets (plus the L2 weight penalty) and its parameter gradients."""
    acts, out = model._activations(Z)
    residual = out - t
    loss = float(np.mean(residual ** 2))
    delta = (2.0 / Z.shape[0]) * residual[:, None]
    grad_W = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        grad_W[l] = acts[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l].T) * (1.0 - acts[l] ** 2)
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(W * W)) for W in model.weights)
        grad_W = [g + weight_decay * W for g, W in zip(grad_W, model.weights)]
    return loss, grad_W, grad_b


def _validation_split(n: int, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    n_val = int(round(n * fraction))
    if fraction <= 0 or n_val < 1 or n - n_val < 1:
        return np.arange(n), np.empty(0, dtype=int)
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _restrict_to_input_span(W: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """
    First-layer weights projected onto the span of the training inputs.

    Gradient steps on W stay inside that span, so a network trained with
    plain gradients or L-BFGS is flat along every input direction the
    training designs never vary in. Full-rank inputs are returned untouched.
    """
    basis = scipy.linalg.orth(Z.T, rcond=SPAN_RCOND)
    if basis.shape[1] >= Z.shape[1]:
        return W
    logger.debug(f"[TRAIN] Training inputs span {basis.shape[1]} of {Z.shape[1]} dimensions")
    return basis @ (basis.T @ W)


def _pack(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def _unpack(theta: np.ndarray, arrays: Sequence[np.ndarray]):
    offset = 0
    for a in arrays:
        a[...] = theta[offset:offset + a.size].reshape(a.shape)
        offset += a.size


def _minibatch_descent(model: MlpModel, Z: np.ndarray, T: np.ndarray, config: TrainConfig, epochs: int,
                       rng: np.random.Generator, checkpoint: Callable[[int, float], bool]):
    params = model.weights + model.biases
    adam = _Adam(params, config.beta1, config.beta2, config.epsilon) if config.optimizer == "adam" else None
    n = Z.shape[0]
    batch = min(config.batch_size, n)
    lr = config.learning_rate
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grad_W, grad_b = _backprop(model, Z[idx], T[idx], config.weight_decay)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, lr)
            grads = grad_W + grad_b
            if adam is not None:
                adam.step(params, grads, lr)
            else:
                for p, g in zip(params, grads):
                    p -= lr * g
        if checkpoint(epoch, lr):
            logger.debug(f"[TRAIN] {model.describe()} stopped early at epoch {epoch}")
            return
        lr *= config.lr_decay


def _lbfgs_descent(model: MlpModel, Z: np.ndarray, T: np.ndarray, config: TrainConfig, iterations: int,
                   checkpoint: Callable[[int, float], bool]):
    """Full-batch L-BFGS-B; one iteration counts as one epoch in the history."""
    params = model.weights + model.biases
    iteration = 0

    def objective(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        _unpack(theta, params)
        loss, grad_W, grad_b = _backprop(model, Z, T, config.weight_decay)
        if not math.isfinite(loss):
            raise TrainingDivergedError(iteration + 1, config.learning_rate)
        return loss, _pack(grad_W + grad_b)

    def callback(theta: np.ndarray):
        nonlocal iteration
        iteration += 1
        _unpack(theta, params)
        if checkpoint(iteration, config.learning_rate):
            logger.debug(f"[TRAIN] {model.describe()} stopped early at iteration {iteration}")
            raise StopIteration

    result = scipy.optimize.minimize(
        objective, _pack(params), jac=True, method="L-BFGS-B", callback=callback,
        options={"maxiter": iterations, "maxfun": LBFGS_MAXFUN_FACTOR * iterations, "ftol": 0.0, "gtol": 0.0,
                 "maxcor": LBFGS_MEMORY},
    )
    logger.debug(f"[TRAIN] L-BFGS finished after {iteration} iterations: {result.message}")


def mlp_train(
    X,
    y,
    config: TrainConfig,
    hidden_layers: int,
    width: int,
    rng: np.random.Generator,
    X_val=None,
    y_val=None,
    mean_c: Optional[float] = None,
    epochs: Optional[int] = None,
) -> TrainResult:
    """
    Train an MLP on the MSE loss.

    Mini-batch Adam or SGD, or full-batch L-BFGS (config.optimizer), with an
    optional L2 penalty on the weights and early stopping after
    config.patience epochs without a better checkpoint.

    Args:
        X, y: training designs and strengths
        config: optimiser, batch and schedule settings
        hidden_layers, width: architecture (hidden_layers x width tanh units)
        rng: owns initialisation, validation hold-out and shuffling
        X_val, y_val: explicit validation set; when absent, config.validation_fraction
            of the training data is held out
        mean_c: input standardisation constant (defaults to the mean of X)
        epochs: overrides config.epochs

    Returns:
        TrainResult whose model is the checkpoint with the lowest validation MSE
        (training MSE when there is no validation data)
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ModelShapeError(f"training inputs {np.shape(X)} do not match {y.shape[0]} labels")
    epochs = config.epochs if epochs is None else int(epochs)
    if hidden_layers < 0 or width < 1:
        raise SurrogateError(f"invalid architecture {hidden_layers}x{width}")

    layer_sizes = [X.shape[1]] + [int(width)] * int(hidden_layers) + [1]
    weights, biases = init_mlp(layer_sizes, rng)

    if X_val is None:
        train_idx, val_idx = _validation_split(X.shape[0], config.validation_fraction, rng)
        X_val, y_val = X[val_idx], y[val_idx]
        X, y = X[train_idx], y[train_idx]
    else:
        X_val = np.asarray(X_val, dtype=float)
        y_val = np.asarray(y_val, dtype=float).ravel()
    has_val = y_val.shape[0] > 0

    input_offset = float(X.mean()) if mean_c is None else float(mean_c)
    input_scale = abs(input_offset) if input_offset != 0 else 1.0
    output_offset = float(y.mean())
    output_scale = float(y.std()) or 1.0
    Z = (X - input_offset) / input_scale
    T = (y - output_offset) / output_scale
    if np.all(np.isfinite(Z)):
        weights[0] = _restrict_to_input_span(weights[0], Z)
    model = MlpModel(layer_sizes, weights, biases, input_offset, input_scale, output_offset, output_scale)

    history: List[EpochRecord] = []
    best_model, best_epoch, best_score, stale = model, 0, math.inf, 0

    def checkpoint(epoch: int, lr: float) -> bool:
        """Record the epoch; True once `patience` epochs passed without a better checkpoint."""
        nonlocal best_model, best_epoch, best_score, stale
        train_pred = model.predict(X)
        val_pred = model.predict(X_val) if has_val else None
        if not np.all(np.isfinite(train_pred)) or (has_val and not np.all(np.isfinite(val_pred))):
            raise TrainingDivergedError(epoch, lr)
        record = EpochRecord(epoch, metrics(y, train_pred).mse, metrics(y_val, val_pred).mse if has_val else None)
        history.append(record)
        logger.debug(f"[TRAIN] {model.describe()} epoch {epoch}: train_mse={record.train_mse:.6e} "
                     f"val_mse={record.val_mse if record.val_mse is None else format(record.val_mse, '.6e')}")
        score = record.val_mse if has_val else record.train_mse
        if score < best_score:
            best_model, best_epoch, best_score, stale = model.copy(), epoch, score, 0
        else:
            stale += 1
        return bool(config.patience) and stale >= config.patience

    checkpoint(0, config.learning_rate)
    if epochs > 0:
        if config.optimizer == "lbfgs":
            _lbfgs_descent(model, Z, T, config, epochs, checkpoint)
        else:
            _minibatch_descent(model, Z, T, config, epochs, rng, checkpoint)

    return TrainResult(
        model=best_model,
        best_epoch=best_epoch,
        train_metrics=metrics(y, best_model.predict(X)),
        val_metrics=metrics(y_val, best_model.predict(X_val)) if has_val else None,
        history=history,
    )
