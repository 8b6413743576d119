"""Request and response bodies of the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class SubmissionMetadata(BaseModel):
    model_name: str = Field(min_length=1)
    architecture: str = ""
    strategy: Literal["HO", "HTA", "DHB", "other"] = "other"
    submitter: str = ""


class SubmissionRequest(BaseModel):
    predictions: str = Field(description="Prediction file text (header line plus one row per test image)")
    metadata: SubmissionMetadata


class Report(BaseModel):
    classes: list[str]
    n_samples: int
    threshold: float
    emr: float
    recall_per_class: dict[str, Optional[float]]
    precision_per_class: dict[str, Optional[float]]
    f1_per_class: dict[str, Optional[float]]
    support_per_class: dict[str, int]
    auroc_per_class: dict[str, Optional[float]]
    auroc_macro: Optional[float]
    auroc_undefined: list[str]
    precision_micro: Optional[float]
    recall_micro: Optional[float]
    f1_micro: Optional[float]
    precision_macro: Optional[float]
    recall_macro: Optional[float]
    f1_macro: Optional[float]


class SubmissionOut(BaseModel):
    submission_id: str
    dataset: str
    metadata: SubmissionMetadata
    timestamp: str
    report: Report
    created: bool = False


class LeaderboardRowOut(BaseModel):
    rank: int
    submission_id: str
    model_name: str
    architecture: str
    strategy: str
    submitter: str
    emr: float
    recall_per_class: dict[str, Optional[float]]
    timestamp: str


class LeaderboardOut(BaseModel):
    dataset: str
    classes: list[str]
    rows: list[LeaderboardRowOut]


class DatasetOut(BaseModel):
    name: str
    classes: list[str]
    n_test: int


class ModelOut(BaseModel):
    model_id: str
    weights_sha256: str
    byte_size: int
    architecture: str
    name: str = ""
    submission_id: Optional[str] = None
    uploaded_at: str


class ErrorBody(BaseModel):
    code: str
    message: str
    details: list = []


class ErrorOut(BaseModel):
    error: ErrorBody
