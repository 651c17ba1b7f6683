"""
Predictor files.

A model is one JSON document: schema version, kind, architecture,
standardisation constants and row-major parameter arrays. Floats go through
json's repr, so a load returns bit-identical parameters.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

from logic.artifacts import read_json, write_csv, write_json
from logic.errors import ArtifactParseError, ModelShapeError, SurrogateError, UnsupportedVersionError
from logic.mlp import HIDDEN_ACTIVATION, OUTPUT_ACTIVATION, EpochRecord, MlpModel
from logic.regression import RegressionModel
from logic.surrogate import SurrogateModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRAINING_LOG_HEADER = ["epoch", "train_mse", "val_mse"]


def model_document(model: SurrogateModel) -> Dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "n_inputs": model.n_inputs,
        "input_offset": model.input_offset,
        "input_scale": model.input_scale,
    }
    if isinstance(model, MlpModel):
        doc.update({
            "layer_sizes": model.layer_sizes,
            "hidden_activation": HIDDEN_ACTIVATION,
            "output_activation": OUTPUT_ACTIVATION,
            "output_offset": model.output_offset,
            "output_scale": model.output_scale,
            "weights": [W.tolist() for W in model.weights],
            "biases": [b.tolist() for b in model.biases],
        })
    elif isinstance(model, RegressionModel):
        doc.update({
            "variant": model.variant,
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "ridge": model.ridge,
            "centers": None if model.centers is None else model.centers.tolist(),
            "width": model.width,
        })
    else:
        raise SurrogateError(f"cannot store model of kind '{model.kind}'")
    return doc


def save_model(model: SurrogateModel, path) -> Path:
    return write_json(path, model_document(model))


def _model_from_document(doc: Dict) -> SurrogateModel:
    kind = doc["kind"]
    if kind == "mlp":
        if doc.get("hidden_activation", HIDDEN_ACTIVATION) != HIDDEN_ACTIVATION:
            raise SurrogateError(f"unsupported hidden activation '{doc['hidden_activation']}'")
        return MlpModel(
            doc["layer_sizes"],
            [np.array(W, dtype=float) for W in doc["weights"]],
            [np.array(b, dtype=float) for b in doc["biases"]],
            doc["input_offset"], doc["input_scale"], doc["output_offset"], doc["output_scale"],
        )
    if kind == "regression":
        return RegressionModel(
            doc["variant"], doc["n_inputs"], doc["weights"], doc["bias"],
            doc["input_offset"], doc["input_scale"],
            centers=None if doc.get("centers") is None else np.array(doc["centers"], dtype=float),
            width=doc.get("width"), ridge=doc.get("ridge", 0.0),
        )
    raise SurrogateError(f"unknown model kind '{kind}'")


def load_model(path, expected_inputs: Optional[int] = None, stage: Optional[str] = None) -> SurrogateModel:
    """
    Read a model file written by save_model().

    Args:
        path: model JSON
        expected_inputs: fibril count of the layout the model will be used on
        stage: stage that writes the file, for "run stage X first" errors

    Returns:
        MlpModel or RegressionModel with the stored parameters
    """
    path = Path(path)
    doc = read_json(path, stage=stage)
    if not isinstance(doc, dict):
        raise ArtifactParseError(str(path), "model document must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise UnsupportedVersionError(f"{path}: model schema version {version} is not supported "
                                      f"(expected {SCHEMA_VERSION})")
    try:
        model = _model_from_document(doc)
    except ModelShapeError as e:
        raise ModelShapeError(f"{path}: {e}")
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactParseError(str(path), f"missing or malformed field: {e}")

    if doc.get("n_inputs") != model.n_inputs:
        raise ModelShapeError(f"{path}: n_inputs {doc.get('n_inputs')} disagrees with the stored architecture "
                              f"({model.n_inputs})")
    if expected_inputs is not None and model.n_inputs != expected_inputs:
        raise ModelShapeError(f"{path}: model takes {model.n_inputs} inputs but the layout has "
                              f"{expected_inputs} fibrils")
    logger.debug(f"Loaded {model.describe()} from {path}")
    return model


def write_training_log(history: Iterable[EpochRecord], path) -> Path:
    return write_csv(path, TRAINING_LOG_HEADER, ((r.epoch, r.train_mse, r.val_mse) for r in history))
