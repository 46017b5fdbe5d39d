"""Request and response models for the service endpoints.

These are the wire contract; the CLI builds the same objects and either calls
the handlers in process or POSTs them to a running server.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

BreathType = Literal["normal", "deep", "strong"]
Arch = Literal["cnn-lstm", "tcn"]
Mode = Literal["multimodal", "audio", "motion"]


class SynthRequest(BaseModel):
    root: str
    subjects: int = 20
    seed: int = 0
    noise: float = 0.3
    sessions_min: int = 20
    sessions_max: int = 61
    force: bool = False


class SynthResponse(BaseModel):
    manifest_path: str
    n_subjects: int
    n_instances: int
    instances_per_subject: dict[str, int]


class ModelOverrides(BaseModel):
    """Architecture hyperparameters; unset fields keep the library defaults.
    `kernel` applies to whichever architecture is selected."""

    n_filters: int | None = None
    kernel: int | None = None
    stride: int | None = None
    hidden: int | None = None
    forget_bias: float | None = None
    stage1_filters: int | None = None
    stage2_filters: int | None = None
    dropout: float | None = None


class TrainOverrides(BaseModel):
    batch_size: int | None = None
    max_epochs: int | None = None
    lr0: float | None = None
    halvings_max: int | None = None
    plateau_patience: int | None = None
    min_delta: float | None = None


class TrainRequest(BaseModel):
    dataset: str
    out_dir: str
    breath_type: BreathType = "normal"
    arch: Arch = "cnn-lstm"
    mode: Mode = "multimodal"
    seed: int = 0
    model: ModelOverrides = Field(default_factory=ModelOverrides)
    training: TrainOverrides = Field(default_factory=TrainOverrides)


class TrainResponse(BaseModel):
    checkpoint_path: str
    history_path: str
    summary_path: str
    epochs: int
    stop_reason: str
    best_val_loss: float
    val_accuracy: float
    test_accuracy: float


class EvalRequest(BaseModel):
    dataset: str
    out_dir: str
    breath_type: BreathType = "normal"
    arch: Arch = "cnn-lstm"
    mode: Mode = "multimodal"
    seed: int = 0
    repetitions: int = 1
    scenarios: list[int] = Field(default_factory=lambda: [1, 2])
    checkpoint: str | None = None
    export_embeddings: bool = False
    model: ModelOverrides = Field(default_factory=ModelOverrides)
    training: TrainOverrides = Field(default_factory=TrainOverrides)


class EvalResponse(BaseModel):
    metrics_json_path: str
    metrics_csv_path: str
    summary_path: str
    embeddings_path: str | None = None
    n_repetitions: int
    n_failures: int
    accuracy_mean: float | None
    accuracy_std: float | None
    eer_scenario1_mean: float | None
    eer_scenario1_std: float | None
    eer_scenario2_mean: float | None
    eer_scenario2_std: float | None
    notes: list[str] = Field(default_factory=list)


class ReportRequest(BaseModel):
    inputs: list[str]
    out: str | None = None


class ReportResponse(BaseModel):
    table: str
    n_rows: int
    out_path: str | None = None


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorResponse(BaseModel):
    error: str
    detail: str
