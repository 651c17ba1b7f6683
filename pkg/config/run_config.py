"""
Declarative run document.

One JSON file drives every stage; each section maps to one stage and
unknown keys are rejected before any work starts. CLI flags may override
the scalar top-level fields (output_dir, master_seed, threads).
"""

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, model_validator

from logic.artifacts import config_hash
from logic.errors import ConfigError

SamplingStyle = Literal["iid_uniform", "radial_smooth", "field_smooth", "mixed"]


class LayoutConfig(BaseModel):
    kind: Literal["circle", "square", "triangle", "custom"] = "circle"
    # R/a (circle), half-side/a (square), circumradius/a (triangle)
    size: float = Field(17.0, gt=0)
    spacing: float = Field(3.0, ge=2.0)
    layout_csv: Optional[str] = None

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _custom_needs_csv(self):
        if self.kind == "custom" and not self.layout_csv:
            raise ValueError("layout.kind 'custom' requires layout.layout_csv")
        return self


class TemplateConfig(BaseModel):
    length_ratio: float = Field(5.0, gt=0)
    fibril_modulus_ratio: float = Field(1.0, gt=0)
    poisson_ratio: float = Field(0.5, gt=-1.0, le=0.5)

    class Config:
        extra = "forbid"


class SimulateConfig(BaseModel):
    compliance_csv: Optional[str] = None
    beta_x: float = 0.0
    beta_y: float = 0.0
    delta_D: Optional[float] = Field(None, gt=0)
    polyline: bool = True

    class Config:
        extra = "forbid"


class DatasetConfig(BaseModel):
    n_samples: int = Field(2500, ge=1)
    # None: use the template fibril's compliance
    mean_compliance: Optional[float] = Field(None, gt=0)
    bounds: Optional[Tuple[float, float]] = None
    filter_ceiling: float = Field(0.7, gt=0)
    style: SamplingStyle = "mixed"
    test_fraction: float = Field(0.2, gt=0, lt=1)
    acceptance_floor: float = Field(0.01, ge=0, le=1)
    pilot_size: int = Field(200, ge=1)
    verify_fraction: float = Field(0.01, ge=0, le=1)

    class Config:
        extra = "forbid"


class TrainConfig(BaseModel):
    epochs: int = Field(600, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    # multiplicative decay applied after every epoch
    lr_decay: float = Field(1.0, gt=0, le=1.0)
    # adam and sgd run mini-batches; lbfgs is full-batch and counts iterations as epochs
    optimizer: Literal["adam", "sgd", "lbfgs"] = "adam"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    validation_fraction: float = Field(0.1, ge=0, lt=1)
    # L2 penalty on the weights, in standardised-loss units
    weight_decay: float = Field(0.0, ge=0)
    # epochs without a better checkpoint before stopping; 0 trains the full schedule
    patience: int = Field(0, ge=0)

    cv_folds: int = Field(5, ge=2)
    cv_epochs: int = Field(200, ge=0)
    grid_search: bool = True
    hidden_layer_grid: List[int] = Field(default_factory=lambda: [1, 2, 4, 6])
    width_grid: List[int] = Field(default_factory=lambda: [16, 32, 64])
    # architecture used when grid_search is off
    hidden_layers: int = Field(6, ge=0)
    width: int = Field(64, ge=1)

    compare_models: bool = True
    # fixed-mean designs make the linear features collinear, so a tiny ridge is the default
    linear_ridge: float = Field(1e-10, ge=0)
    poly_ridge: float = Field(1e-12, ge=0)
    rbf_centers: int = Field(200, ge=1)
    rbf_width_factors: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    rbf_ridge: float = Field(1e-8, ge=0)

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _non_empty_grids(self):
        if not self.hidden_layer_grid or not self.width_grid:
            raise ValueError("hyperparameter grid must not be empty")
        if not self.rbf_width_factors or min(self.rbf_width_factors) <= 0:
            raise ValueError("rbf_width_factors must be positive and non-empty")
        return self


class DesignConfig(BaseModel):
    n_starts: int = Field(100, ge=1)
    max_iters: int = Field(2000, ge=0)
    step_size: float = Field(0.05, gt=0)
    tolerance: float = Field(1e-7, gt=0)
    window: int = Field(5, ge=1)
    max_halvings: int = Field(20, ge=0)
    enforce_mean: bool = True
    init_style: SamplingStyle = "mixed"
    feedback_k: int = Field(0, ge=0)
    feedback_rounds: int = Field(0, ge=0)
    discrepancy_threshold: float = Field(0.03, ge=0)
    top_k_profiles: int = Field(5, ge=1)

    class Config:
        extra = "forbid"


class RunConfig(BaseModel):
    layout: LayoutConfig = Field(default_factory=LayoutConfig)
    template: TemplateConfig = Field(default_factory=TemplateConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    design: DesignConfig = Field(default_factory=DesignConfig)
    output_dir: Optional[str] = None
    master_seed: Optional[int] = None
    threads: Optional[int] = Field(None, ge=1)

    class Config:
        extra = "forbid"


def load_run_config(path, overrides: Optional[Dict] = None) -> Tuple[RunConfig, str]:
    """
    Read and validate a run document.

    Args:
        path: JSON file
        overrides: top-level scalar fields from the command line (None values ignored)

    Returns:
        (validated RunConfig, SHA-256 of the canonical validated document)
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")

    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")
    digest = config_hash(config.model_dump(exclude={"output_dir", "threads"}))

    # relative layout/compliance paths are resolved against the config file
    base = path.resolve().parent
    if config.layout.layout_csv and not Path(config.layout.layout_csv).is_absolute():
        config.layout.layout_csv = str(base / config.layout.layout_csv)
    if config.simulate.compliance_csv and not Path(config.simulate.compliance_csv).is_absolute():
        config.simulate.compliance_csv = str(base / config.simulate.compliance_csv)

    return config, digest
