"""Prediction files: one scored image per line in canonical class order.

The first line is ``#`` followed by a JSON object naming the dataset, the
class order and the producer; every following line is
``image_id,score_1,...,score_C``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from bikit._io import atomic_write_text
from bikit.errors import PredictionFileError
from bikit.metrics import ScoreMatrix

FORMAT = "bikit-pred"
VERSION = 1


def format_predictions(scores: ScoreMatrix, dataset: str, producer: str = "") -> str:
    header = {"format": FORMAT, "version": VERSION, "dataset": dataset, "classes": list(scores.classes),
              "producer": producer}
    lines = ["# " + json.dumps(header, ensure_ascii=False)]
    for rid, row in zip(scores.row_ids, scores.data):
        lines.append(",".join([rid] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def save_predictions(scores: ScoreMatrix, path: str | Path, dataset: str, producer: str = "") -> None:
    atomic_write_text(path, format_predictions(scores, dataset, producer))


def parse_predictions(text: str, classes: Sequence[str] | None = None) -> tuple[dict, ScoreMatrix]:
    """Parse a prediction file into (header, ScoreMatrix).

    If ``classes`` is given, the header's class order must equal it. Errors
    carry the codes ``malformed-row``, ``out-of-range-score``,
    ``duplicate-id`` or ``class-mismatch``.
    """
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise PredictionFileError("first line must be a '#' header with dataset, classes and producer")
    try:
        header = json.loads(lines[0][1:])
    except json.JSONDecodeError as exc:
        raise PredictionFileError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or not isinstance(header.get("classes"), list):
        raise PredictionFileError("header must be an object with a 'classes' list")
    file_classes = tuple(header["classes"])
    if classes is not None and tuple(classes) != file_classes:
        raise PredictionFileError(
            f"class order {list(file_classes)} differs from dataset order {list(classes)}", code="class-mismatch"
        )
    n_cls = len(file_classes)
    ids: list[str] = []
    seen: set[str] = set()
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != n_cls + 1 or not parts[0]:
            raise PredictionFileError(
                f"line {lineno}: expected image_id and {n_cls} scores, got {len(parts) - 1} values",
                details=[{"line": lineno}],
            )
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            raise PredictionFileError(f"line {lineno}: non-numeric score", details=[{"line": lineno}]) from None
        bad = [v for v in vals if not (math.isfinite(v) and 0.0 <= v <= 1.0)]
        if bad:
            raise PredictionFileError(
                f"line {lineno}: score {bad[0]!r} outside [0, 1]", code="out-of-range-score",
                details=[{"line": lineno, "image_id": parts[0]}],
            )
        if parts[0] in seen:
            raise PredictionFileError(f"line {lineno}: duplicate image_id {parts[0]!r}", code="duplicate-id")
        seen.add(parts[0])
        ids.append(parts[0])
        rows.append(vals)
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), n_cls)
    return header, ScoreMatrix(tuple(ids), file_classes, data)


def load_predictions(path: str | Path, classes: Sequence[str] | None = None) -> tuple[dict, ScoreMatrix]:
    return parse_predictions(Path(path).read_text(encoding="utf-8"), classes)
