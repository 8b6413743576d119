"""Leaderboard, submission intake and model registry."""

from bikit.hub.blobs import BlobStore
from bikit.hub.core import (
    Hub,
    LeaderboardRow,
    LeaderboardView,
    ModelEntry,
    Submission,
    SubmissionMeta,
    canonical_payload,
    open_hub,
    rank_submissions,
)
from bikit.hub.store import EventLedger

__all__ = [
    "BlobStore",
    "EventLedger",
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
