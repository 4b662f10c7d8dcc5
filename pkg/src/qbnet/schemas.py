"""Pydantic models for config files and the service API.

Every model forbids unknown keys, so a typo in a config file or request body
is rejected instead of silently ignored.  The same schemas back the CLI's
JSON config files and the FastAPI request/response bodies.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .nn import SizeConfig, TrainConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainSchema(StrictModel):
    learning_rate: float = Field(0.1, gt=0)
    batch_size: int = Field(100, ge=1)
    max_epochs: int = Field(50, ge=0)
    early_stop_patience: int = Field(5, ge=0)
    lr_decay: float = Field(0.5, gt=0, le=1)

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.max_epochs,
                           self.early_stop_patience, self.lr_decay)


class NetworkSchema(StrictModel):
    family: Literal["fcdnn", "cnn"]
    hidden_units: int | None = Field(None, ge=1)
    feature_maps: tuple[int, int, int] | None = None
    inputs: int | None = Field(None, ge=1)  # fcdnn only; defaults to the dataset width
    outputs: int | None = Field(None, ge=1)  # defaults to the dataset class count

    @model_validator(mode="after")
    def _check_family_fields(self):
        if self.family == "fcdnn" and (self.hidden_units is None or self.feature_maps):
            raise ValueError("fcdnn networks take hidden_units, not feature_maps")
        if self.family == "cnn" and (self.feature_maps is None or self.hidden_units):
            raise ValueError("cnn networks take feature_maps, not hidden_units")
        return self

    def to_size_config(self) -> SizeConfig:
        if self.family == "fcdnn":
            return SizeConfig("fcdnn", fcdnn_hidden=self.hidden_units)
        return SizeConfig("cnn", cnn_maps=tuple(self.feature_maps))


class TrainJobConfig(StrictModel):
    """Config-file payload for `train`: what to build and what to fit it on."""

    network: NetworkSchema
    train: TrainSchema = TrainSchema()
    dataset: str
    seed: int = 1


class QuantizeJobConfig(StrictModel):
    """Config-file payload for retrain-based `quantize`."""

    train: TrainSchema = TrainSchema()
    dataset: str


class SweepJobConfig(StrictModel):
    """Config-file payload for `sweep`: the full experiment grid."""

    family: Literal["fcdnn", "cnn"]
    sizes: list[int] | list[tuple[int, int, int]]
    bit_widths: list[int] = Field(default_factory=list)
    methods: list[Literal["float", "direct", "retrain"]]
    seeds: list[int]
    train: TrainSchema = TrainSchema()
    dataset: str

    def to_size_configs(self) -> tuple[SizeConfig, ...]:
        if self.family == "fcdnn":
            return tuple(SizeConfig("fcdnn", fcdnn_hidden=int(s)) for s in self.sizes)
        return tuple(SizeConfig("cnn", cnn_maps=tuple(m)) for m in self.sizes)


# ---------------------------------------------------------------------------
# service requests and responses
# ---------------------------------------------------------------------------

class SynthRequest(StrictModel):
    kind: Literal["frames", "images"] = "frames"
    out: str
    format: Literal["npz", "cifar10", "mnist"] = "npz"
    n_samples: int = Field(5000, ge=1)
    n_features: int = Field(1353, ge=1)  # frames only
    n_classes: int = Field(61, ge=2)
    class_separation: float = 3.0  # frames only
    contrast: float = Field(0.4, ge=0)  # images only
    noise: float = Field(0.25, ge=0)  # images only
    test_fraction: float = Field(0.2, gt=0, lt=1)  # cifar10/mnist formats only
    seed: int = 0


class SynthResponse(StrictModel):
    paths: list[str]
    n_samples: int
    n_classes: int


class TrainRequest(TrainJobConfig):
    out: str
    data_dir: str | None = None


class TrainResponse(StrictModel):
    checkpoint: str
    valid_error: float
    test_error: float
    epochs: int
    param_count: int


class QuantizeRequest(StrictModel):
    checkpoint: str
    bits: int = Field(ge=2)
    method: Literal["direct", "retrain"]
    out: str
    config: QuantizeJobConfig | None = None  # required for retrain
    data_dir: str | None = None


class QuantizeResponse(StrictModel):
    checkpoint: str
    bits: int
    method: str
    valid_error: float | None
    step_sizes: list[float]


class EvalRequest(StrictModel):
    checkpoint: str
    dataset: str
    split: Literal["train", "valid", "test"] = "test"
    data_dir: str | None = None


class EvalResponse(StrictModel):
    error: float
    n_samples: int


class SweepRequest(StrictModel):
    sweep: SweepJobConfig
    out: str
    data_dir: str | None = None
    max_workers: int = Field(1, ge=1)


class SweepResponse(StrictModel):
    records_path: str
    n_records: int


class EcrRequest(StrictModel):
    records: str
    out_dir: str
    reference_sizes: list[float] | None = None  # defaults to the float curve's sizes
    param_model: Literal["exact", "square_approx"] = "square_approx"


class EcrResponse(StrictModel):
    report_path: str
    plot_paths: list[str]
    n_reports: int


class HealthResponse(StrictModel):
    status: str
    version: str
