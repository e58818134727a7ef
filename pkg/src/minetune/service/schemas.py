"""Request/response models of the HTTP API.

File-producing endpoints take server-side paths; with the default in-process
deployment (the CLI mounts the app over an in-memory transport) those paths
are simply local paths.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import GeneratorConfig, RunConfig

SWEEPABLE = ("k", "lambda", "n_r", "n_p", "n_e")


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    virtual: GeneratorConfig
    real: Optional[GeneratorConfig] = None
    out_dir: str


class DatasetFileInfo(BaseModel):
    path: str
    items: int
    dim: int
    n_cameras: int
    has_true_identity: bool
    sha256: str


class GenerateResponse(BaseModel):
    virtual: DatasetFileInfo
    real: Optional[DatasetFileInfo] = None


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig


class RunResponse(BaseModel):
    report: dict
    report_path: Optional[str] = None
    coarse_checkpoint: Optional[str] = None
    final_checkpoint: Optional[str] = None


class MineRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    dataset: str
    k: int = Field(default=50, ge=1)
    exclude_same_camera: bool = True
    out: Optional[str] = None


class MinedPairModel(BaseModel):
    anchor: int
    positive: int
    f_score: float
    same_identity: Optional[bool] = None


class MineResponse(BaseModel):
    pairs: list
    count: int
    anchors_skipped: int
    mining_accuracy: Optional[float] = None
    out_path: Optional[str] = None


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    dataset: str
    ranks: list = Field(default=[1, 5, 10, 20])
    per_query_csv: Optional[str] = None


class EvalResponse(BaseModel):
    mAP: Optional[float] = None
    cmc: Optional[dict] = None
    queries_evaluated: Optional[int] = None
    queries_skipped: Optional[int] = None
    per_query_csv: Optional[str] = None
    note: Optional[str] = None


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    param: Literal["k", "lambda", "n_r", "n_p", "n_e"]
    values: list


class SweepItem(BaseModel):
    value: float
    mAP: Optional[float] = None
    rank1: Optional[float] = None
    mining_accuracy: Optional[float] = None
    report_path: Optional[str] = None


class SweepResponse(BaseModel):
    param: str
    items: list
