"""Leaderboard and model hub.

Test-split ground truth is held in memory and never returned to callers.
Submissions are ranked by exact match ratio; recall columns are shown but
never used for ordering.
"""

from __future__ import annotations

import hashlib
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping

from bikit.catalog import load_dataset_index
from bikit.errors import NotFound, PredictionFileError, SubmissionError
from bikit.hub.blobs import BlobStore
from bikit.hub.store import EventLedger
from bikit.metrics import LabelMatrix, MetricsReport, ScoreMatrix, full_report
from bikit.predictions import format_predictions, parse_predictions
from bikit.splits import load_split, split_path

STRATEGIES = ("HO", "HTA", "DHB", "other")
MAX_LISTED = 10


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class SubmissionMeta:
    model_name: str
    architecture: str = ""
    strategy: str = "other"
    submitter: str = ""

    def __post_init__(self):
        if not self.model_name:
            raise SubmissionError("model_name is required", code="bad-metadata")
        if self.strategy not in STRATEGIES:
            raise SubmissionError(f"strategy must be one of {STRATEGIES}", code="bad-metadata")


@dataclass(frozen=True)
class Submission:
    submission_id: str
    dataset: str
    metadata: SubmissionMeta
    timestamp: str
    report: MetricsReport

    def to_dict(self) -> dict:
        return {
            "submission_id": self.submission_id,
            "dataset": self.dataset,
            "metadata": self.metadata.__dict__.copy(),
            "timestamp": self.timestamp,
            "report": self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Submission":
        return cls(doc["submission_id"], doc["dataset"], SubmissionMeta(**doc["metadata"]), doc["timestamp"],
                   MetricsReport.from_dict(doc["report"]))


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    weights_sha256: str
    byte_size: int
    architecture: str
    name: str = ""
    submission_id: str | None = None
    uploaded_at: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    submission_id: str
    model_name: str
    architecture: str
    strategy: str
    submitter: str
    emr: float
    recall_per_class: dict[str, float | None]
    timestamp: str
    dataset: str = ""


@dataclass(frozen=True)
class LeaderboardView:
    dataset: str
    classes: list[str]
    rows: list[LeaderboardRow] = field(default_factory=list)


def rank_submissions(subs: Iterable[Submission]) -> list[LeaderboardRow]:
    """Order by EMR (descending), then earlier timestamp, then submission id."""
    ordered = sorted(subs, key=lambda s: (-s.report.emr, s.timestamp, s.submission_id))
    return [
        LeaderboardRow(
            rank=i,
            submission_id=s.submission_id,
            model_name=s.metadata.model_name,
            architecture=s.metadata.architecture,
            strategy=s.metadata.strategy,
            submitter=s.metadata.submitter,
            emr=s.report.emr,
            recall_per_class=dict(s.report.recall_per_class),
            timestamp=s.timestamp,
            dataset=s.dataset,
        )
        for i, s in enumerate(ordered, start=1)
    ]


def canonical_payload(dataset: str, scores: ScoreMatrix) -> str:
    order = sorted(range(len(scores.row_ids)), key=lambda i: scores.row_ids[i])
    canon = ScoreMatrix(tuple(scores.row_ids[i] for i in order), scores.classes, scores.data[order])
    return format_predictions(canon, dataset)


class Hub:
    """Submission intake, scoring, ranking and the model registry.

    ``root`` holds ``ledger.jsonl`` and the ``blobs/`` directory.
    """

    def __init__(self, root: str | Path, threshold: float = 0.5, clock: Callable[[], str] = utc_now):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.ledger = EventLedger(self.root / "ledger.jsonl")
        self.blobs = BlobStore(self.root / "blobs")
        self.threshold = threshold
        self.clock = clock
        self._truth: dict[str, LabelMatrix] = {}
        self._submit_lock = threading.Lock()

    # -- datasets -------------------------------------------------------------

    def register_dataset(self, name: str, truth: LabelMatrix) -> None:
        self._truth[name] = truth

    def load_datasets(self, data_root: str | Path, names: Iterable[str] | None = None) -> list[str]:
        """Register every dataset under ``data_root`` that has annotations and a split file."""
        data_root = Path(data_root)
        if names is None:
            names = sorted(p.name for p in data_root.iterdir()
                           if p.is_dir() and (p / "annotations.csv").is_file() and (p / "split.csv").is_file())
        loaded = []
        for name in names:
            index = load_dataset_index(name, data_root)
            split = load_split(split_path(data_root, name))
            test_ids = split.ids("test")
            if not test_ids:
                continue
            self.register_dataset(name, LabelMatrix.from_index(index, test_ids))
            loaded.append(name)
        return loaded

    @property
    def datasets(self) -> list[str]:
        return sorted(self._truth)

    def dataset_info(self, name: str) -> dict:
        truth = self._get_truth(name)
        return {"name": name, "classes": list(truth.classes), "n_test": len(truth.row_ids)}

    def _get_truth(self, name: str) -> LabelMatrix:
        try:
            return self._truth[name]
        except KeyError:
            raise NotFound(f"dataset {name!r} has no registered test split", code="unknown-dataset") from None

    # -- submissions ------------------------------------------------------------

    def validate_submission(self, dataset: str, payload: str) -> ScoreMatrix:
        """Parse a prediction file and check it covers the test split exactly."""
        truth = self._get_truth(dataset)
        header, scores = parse_predictions(payload, truth.classes)
        if header.get("dataset") not in (None, "", dataset):
            raise PredictionFileError(f"file is for dataset {header['dataset']!r}, not {dataset!r}",
                                      code="dataset-mismatch")
        expected = set(truth.row_ids)
        got = set(scores.row_ids)
        missing = sorted(expected - got)
        if missing:
            raise SubmissionError(f"{len(missing)} test image(s) missing from predictions", code="missing-id",
                                  details=missing[:MAX_LISTED])
        unknown = sorted(got - expected)
        if unknown:
            raise SubmissionError(f"{len(unknown)} id(s) are not in the test split", code="unknown-id",
                                  details=unknown[:MAX_LISTED])
        return scores.reorder(truth.row_ids)

    def score(self, dataset: str, scores: ScoreMatrix) -> MetricsReport:
        return full_report(scores, self._get_truth(dataset), self.threshold)

    def submit(self, dataset: str, payload: str, metadata: SubmissionMeta) -> tuple[Submission, bool]:
        """Validate, score and persist. Returns (submission, created).

        Identical predictions for the same dataset map to the same id; a
        repeat returns the stored submission with ``created`` False.
        """
        scores = self.validate_submission(dataset, payload)
        canon = canonical_payload(dataset, scores)
        sid = hashlib.sha256(canon.encode("utf-8")).hexdigest()
        existing = self.find_submission(sid)
        if existing is not None:
            return existing, False
        report = self.score(dataset, scores)
        with self._submit_lock:
            existing = self.find_submission(sid)
            if existing is not None:
                return existing, False
            self.blobs.put(canon.encode("utf-8"))
            sub = Submission(sid, dataset, metadata, self.clock(), report)
            self.ledger.append({"type": "submission", **sub.to_dict()})
        return sub, True

    def submissions(self, dataset: str | None = None) -> list[Submission]:
        return [Submission.from_dict(e) for e in self.ledger.events
                if e.get("type") == "submission" and (dataset is None or e["dataset"] == dataset)]

    def find_submission(self, submission_id: str) -> Submission | None:
        for e in self.ledger.events:
            if e.get("type") == "submission" and e["submission_id"] == submission_id:
                return Submission.from_dict(e)
        return None

    def get_submission(self, submission_id: str) -> Submission:
        sub = self.find_submission(submission_id)
        if sub is None:
            raise NotFound(f"no submission {submission_id!r}", code="unknown-submission")
        return sub

    def submission_scores(self, submission_id: str) -> ScoreMatrix:
        """Stored prediction matrix of a submission (rows sorted by id)."""
        sub = self.get_submission(submission_id)
        _, scores = parse_predictions(self.blobs.read(sub.submission_id).decode("utf-8"))
        return scores

    def leaderboard(self, dataset: str) -> LeaderboardView:
        truth = self._get_truth(dataset)
        return LeaderboardView(dataset, list(truth.classes), rank_submissions(self.submissions(dataset)))

    # -- model registry -----------------------------------------------------------

    def register_model(self, blob: bytes, architecture: str, name: str = "",
                       submission_id: str | None = None) -> ModelEntry:
        if submission_id:
            self.get_submission(submission_id)
        digest = self.blobs.put(blob)
        entry = ModelEntry(uuid.uuid4().hex, digest, len(blob), architecture, name, submission_id or None,
                           self.clock())
        self.ledger.append({"type": "model", **entry.to_dict()})
        return entry

    def get_model(self, model_id: str) -> ModelEntry:
        for e in self.ledger.events:
            if e.get("type") == "model" and e["model_id"] == model_id:
                return ModelEntry(**{k: v for k, v in e.items() if k != "type"})
        raise NotFound(f"no model {model_id!r}", code="unknown-model")

    def models(self) -> list[ModelEntry]:
        return [ModelEntry(**{k: v for k, v in e.items() if k != "type"})
                for e in self.ledger.events if e.get("type") == "model"]

    def fetch_model(self, model_id: str) -> bytes:
        """Weights of ``model_id``; the digest is re-checked on every read."""
        return self.blobs.read(self.get_model(model_id).weights_sha256)

    def model_path(self, model_id: str) -> Path:
        return self.blobs.verified_path(self.get_model(model_id).weights_sha256)


def open_hub(data_root: str | Path, threshold: float = 0.5) -> Hub:
    """Hub rooted at ``<data_root>/hub`` with every dataset under ``data_root`` registered."""
    hub = Hub(Path(data_root) / "hub", threshold)
    hub.load_datasets(data_root)
    return hub


__all__ = [
    "Hub",
    "LeaderboardRow",
    "LeaderboardView",
    "ModelEntry",
    "Submission",
    "SubmissionMeta",
    "canonical_payload",
    "open_hub",
    "rank_submissions",
]
