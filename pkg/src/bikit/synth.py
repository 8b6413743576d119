"""Synthetic stand-ins for benchmark data.

The original images and annotations are not redistributable, so tests and
demos run on generated indexes whose per-class marginals equal the published
statistics, and on prediction matrices constructed to hit a requested exact
match count and per-class true-positive counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from bikit.catalog import DatasetManifest, SampleIndex, SampleRecord, make_index
from bikit.errors import BikitError
from bikit.metrics import LabelMatrix, ScoreMatrix
from bikit.splits import SplitAssignment, SplitSpec


def round_robin_labels(n_rows: int, counts: Sequence[int], exclusive: int | None = None) -> np.ndarray:
    """Label matrix with exact column sums ``counts`` and at least one label per row.

    Rows carrying the exclusive class get only that bit. The remaining labels
    are dealt cyclically over the other rows, class after class, so no row
    receives a class twice as long as every count fits into the row budget.
    """
    counts = [int(c) for c in counts]
    n_cls = len(counts)
    labels = np.zeros((n_rows, n_cls), dtype=np.int8)
    start = 0
    if exclusive is not None:
        labels[: counts[exclusive], exclusive] = 1
        start = counts[exclusive]
    m = n_rows - start
    others = [c for c in range(n_cls) if c != exclusive]
    total = sum(counts[c] for c in others)
    if m < 0 or (m > 0 and total < m) or any(counts[c] > m for c in others):
        raise BikitError(f"counts {counts} cannot be laid out over {n_rows} rows")
    k = 0
    for c in others:
        for _ in range(counts[c]):
            labels[start + k % m, c] = 1
            k += 1
    return labels


def combo_labels(classes: Sequence[str], layout: Sequence[tuple[Sequence[str], int]]) -> np.ndarray:
    """Label matrix built from explicit (label set, repeat count) pairs."""
    pos = {c: i for i, c in enumerate(classes)}
    rows = []
    for names, reps in layout:
        row = [0] * len(classes)
        for n in names:
            row[pos[n]] = 1
        rows.extend([row] * reps)
    return np.asarray(rows, dtype=np.int8).reshape(len(rows), len(classes))


def index_from_labels(manifest: DatasetManifest, labels: np.ndarray, prefix: str) -> SampleIndex:
    width = max(5, len(str(len(labels))))
    recs = [
        SampleRecord(f"{prefix}{i:0{width}d}", f"images/{prefix}{i:0{width}d}.jpg", tuple(int(b) for b in row))
        for i, row in enumerate(labels)
    ]
    return make_index(manifest, recs)


def synth_index(manifest: DatasetManifest, seed: int = 0, counts: Mapping[str, int] | None = None,
                n_images: int | None = None) -> SampleIndex:
    """Index with the manifest's expected class counts (or ``counts``), rows shuffled by ``seed``."""
    counts = counts or manifest.expected_counts
    n_images = n_images or manifest.num_images
    if counts is None or n_images is None:
        raise BikitError(f"manifest {manifest.name} has no expected counts to synthesize from")
    labels = round_robin_labels(n_images, [counts.get(c, 0) for c in manifest.classes], manifest.exclusive_class)
    rng = np.random.default_rng(seed)
    return index_from_labels(manifest, labels[rng.permutation(n_images)], f"{manifest.name}_")


# -- fixture datasets with a pinned test split --------------------------------

# Test-split label layouts. Supports per class are chosen so every recall value
# reported for the baselines is an exact fraction of them (multiples of 1/30,
# 1/60, 1/90 for MCDS and 1/150, 1/149 for CODEBRIM).
TEST_LAYOUTS: dict[str, list[tuple[tuple[str, ...], int]]] = {
    "mcds": [
        (("No Damage",), 30),
        (("Spalling", "Exposed Bars", "Rust"), 30),
        (("Spalling", "Exposed Bars"), 30),
        (("Spalling",), 30),
        (("Rust",), 30),
        (("Crack",), 30),
        (("Efflorescence",), 30),
        (("Scaling",), 30),
        (("Other",), 30),
    ],
    "codebrim-balanced": [
        (("No Damage",), 150),
        (("Spalling", "Exposed Bars", "Rust"), 100),
        (("Efflorescence", "Rust"), 50),
        (("Crack", "Spalling"), 17),
        (("Crack",), 133),
        (("Efflorescence",), 99),
        (("Spalling",), 33),
        (("Exposed Bars",), 50),
    ],
}


@dataclass(frozen=True)
class FixtureDataset:
    index: SampleIndex
    split: SplitAssignment

    def test_truth(self) -> LabelMatrix:
        return LabelMatrix.from_index(self.index, self.split.ids("test"))


def fixture_dataset(manifest: DatasetManifest, seed: int = 0) -> FixtureDataset:
    """Full-size dataset with the manifest's class counts and a pinned train/val/test split.

    The test rows follow ``TEST_LAYOUTS``; the other rows carry the remaining
    counts. The split is written with strategy ``fixed``.
    """
    if manifest.name not in TEST_LAYOUTS:
        raise BikitError(f"no fixture layout for {manifest.name!r}")
    if manifest.split_sizes is None or manifest.expected_counts is None or manifest.num_images is None:
        raise BikitError(f"manifest {manifest.name} lacks split sizes or expected counts")
    n_train, n_val, n_test = manifest.split_sizes
    test = combo_labels(manifest.classes, TEST_LAYOUTS[manifest.name])
    if len(test) != n_test:
        raise BikitError(f"test layout has {len(test)} rows, manifest says {n_test}")
    rest_counts = [manifest.expected_counts[c] - int(test[:, j].sum()) for j, c in enumerate(manifest.classes)]
    rest = round_robin_labels(n_train + n_val, rest_counts, manifest.exclusive_class)

    rng = np.random.default_rng(seed)
    test = test[rng.permutation(len(test))]
    rest = rest[rng.permutation(len(rest))]
    buckets = ["test"] * n_test + ["train"] * n_train + ["val"] * n_val
    labels = np.concatenate([test, rest[:n_train], rest[n_train:]])
    perm = rng.permutation(len(labels))
    index = index_from_labels(manifest, labels[perm], f"{manifest.name}_")
    ids = index.image_ids  # zero-padded, so sorted order is generation order
    assignment = {ids[k]: buckets[perm[k]] for k in range(len(ids))}
    spec = SplitSpec(sizes=(n_train, n_val, n_test), seed=seed, strategy="fixed")
    return FixtureDataset(index, SplitAssignment(manifest.name, spec, assignment))


# -- predictions hitting target metrics ----------------------------------------


def count_for_percentage(pct: float, n: int) -> int:
    """The unique k in [0, n] with round(100 k / n, 2) == pct."""
    hits = [k for k in range(n + 1) if round(100 * k / n, 2) == round(pct, 2)]
    if len(hits) != 1:
        raise BikitError(f"{pct}% is not uniquely realizable with n={n} (candidates {hits})")
    return hits[0]


def realize_predictions(truth: LabelMatrix, tp_counts: Mapping[str, int], n_exact: int,
                        seed: int = 0) -> ScoreMatrix:
    """Scores whose 0.5-thresholded predictions have the given TP per class and exact-match count.

    False negatives are packed into as few rows as possible; any remaining
    required mismatches are produced by single false positives on clean rows.
    """
    rng = np.random.default_rng(seed)
    t = truth.data.astype(np.int8)
    n, n_cls = t.shape
    pred = t.copy()
    spoiled = np.zeros(n, dtype=bool)
    fns = {j: int(t[:, j].sum()) - int(tp_counts[c]) for j, c in enumerate(truth.classes)}
    if any(v < 0 for v in fns.values()):
        raise BikitError("true positive count exceeds class support")
    for j in sorted(fns, key=lambda j: (-fns[j], j)):
        pos = np.flatnonzero(t[:, j])
        key = rng.random(len(pos))
        order = pos[np.lexsort((key, ~spoiled[pos]))]
        chosen = order[: fns[j]]
        pred[chosen, j] = 0
        spoiled[chosen] = True
    need = (n - n_exact) - int(spoiled.sum())
    if need < 0:
        raise BikitError(f"cannot reach {n_exact} exact matches: false negatives touch {int(spoiled.sum())} rows")
    clean = rng.permutation(np.flatnonzero(~spoiled))[:need]
    for i in clean:
        zeros = np.flatnonzero(t[i] == 0)
        pred[i, zeros[rng.integers(len(zeros))]] = 1
    hi = np.round(rng.uniform(0.51, 0.99, size=(n, n_cls)), 3)
    lo = np.round(rng.uniform(0.01, 0.49, size=(n, n_cls)), 3)
    scores = np.where(pred == 1, hi, lo)
    return ScoreMatrix(truth.row_ids, truth.classes, scores)


def realize_result(truth: LabelMatrix, emr_pct: float, recall_pct: Mapping[str, float],
                   seed: int = 0) -> ScoreMatrix:
    """Scores reproducing a reported EMR and recall-by-class (percentages, two decimals)."""
    support = truth.data.sum(axis=0)
    tp = {c: count_for_percentage(recall_pct[c], int(support[j])) for j, c in enumerate(truth.classes)}
    return realize_predictions(truth, tp, count_for_percentage(emr_pct, len(truth.row_ids)), seed)
