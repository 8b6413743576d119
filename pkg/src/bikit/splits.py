"""Deterministic train/val/test splits for multi-label datasets.

Split files are CSV (``image_id,bucket``) preceded by one comment line that
records how the split was produced::

    # bikit-split v1 dataset=mcds seed=0 strategy=iterative-stratified prng=numpy-pcg64 sizes=2057,270,270
    image_id,bucket
    img_0001,train
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from bikit._io import atomic_write_text
from bikit.catalog import SampleIndex
from bikit.errors import SplitError

BUCKETS = ("train", "val", "test")
STRATEGIES = ("iterative-stratified", "random")
# "fixed": a split shipped as a file (e.g. the dataset's published split), never regenerated.
FILE_STRATEGIES = STRATEGIES + ("fixed",)
PRNG_ID = "numpy-pcg64"
FORMAT_TAG = "bikit-split"
FORMAT_VERSION = "v1"


@dataclass(frozen=True)
class SplitSpec:
    sizes: tuple[int, int, int]
    seed: int = 0
    strategy: str = "iterative-stratified"

    def __post_init__(self):
        if len(self.sizes) != 3 or any(int(s) != s or s < 0 for s in self.sizes):
            raise SplitError(f"sizes must be three non-negative integers, got {self.sizes!r}", code="bad-sizes")
        if not 0 <= self.seed < 2**64:
            raise SplitError(f"seed must fit in 64 unsigned bits, got {self.seed}", code="bad-seed")
        if self.strategy not in FILE_STRATEGIES:
            raise SplitError(f"unknown strategy {self.strategy!r}", code="bad-strategy")

    @property
    def total(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class SplitAssignment:
    dataset: str
    spec: SplitSpec
    assignment: Mapping[str, str] = field(default_factory=dict)

    def ids(self, bucket: str) -> list[str]:
        return sorted(i for i, b in self.assignment.items() if b == bucket)

    def cardinalities(self) -> dict[str, int]:
        out = dict.fromkeys(BUCKETS, 0)
        for b in self.assignment.values():
            out[b] += 1
        return out


def _pick(candidates: np.ndarray, rng: np.random.Generator) -> int:
    if len(candidates) == 1:
        return int(candidates[0])
    return int(candidates[rng.integers(len(candidates))])


def _iterative(labels: np.ndarray, sizes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n, n_classes = labels.shape
    counts = labels.sum(axis=0)
    # Remaining demand scaled by n so all bookkeeping stays in integers:
    # demand[b, c] = sizes[b] * count_c - n * (labels of c already placed in b).
    demand = np.outer(sizes, counts).astype(np.int64)
    capacity = sizes.astype(np.int64).copy()
    out = np.full(n, -1, dtype=np.int64)

    order = sorted((c for c in range(n_classes) if counts[c] > 0), key=lambda c: (counts[c], c))
    for c in order:
        pending = np.flatnonzero((labels[:, c] == 1) & (out < 0))
        for i in rng.permutation(pending):
            open_ = np.flatnonzero(capacity > 0)
            d = demand[open_, c]
            best = open_[d == d.max()]
            if len(best) > 1:
                cap = capacity[best]
                best = best[cap == cap.max()]
            b = _pick(best, rng)
            out[i] = b
            capacity[b] -= 1
            demand[b] -= n * labels[i]

    for i in rng.permutation(np.flatnonzero(out < 0)):
        open_ = np.flatnonzero(capacity > 0)
        cap = capacity[open_]
        b = _pick(open_[cap == cap.max()], rng)
        out[i] = b
        capacity[b] -= 1
    return _refine(labels, sizes, out, rng)


def _refine(labels: np.ndarray, sizes: np.ndarray, out: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Swap pairs of samples between buckets while that lowers the squared deviation.

    The greedy pass cannot undo early placements once a bucket is full, so a
    frequent label can end up far from proportional. Each swap exchanges two
    samples with different label vectors, which keeps bucket sizes fixed; the
    objective sum_{b,c} (n * count_c(b) - size_b * count_c)^2 is an integer
    that strictly decreases, so the loop terminates.
    """
    n = len(labels)
    kinds, kind_of = np.unique(labels, axis=0, return_inverse=True)
    kind_of = kind_of.ravel()
    kinds = kinds.astype(np.int64)
    n_buckets = len(sizes)
    present = np.zeros((n_buckets, len(kinds)), dtype=np.int64)
    np.add.at(present, (out, kind_of), 1)
    dev = n * (present @ kinds) - np.outer(sizes, labels.sum(axis=0))
    while True:
        best = None
        for b1 in range(n_buckets):
            for b2 in range(b1 + 1, n_buckets):
                k1 = np.flatnonzero(present[b1])
                k2 = np.flatnonzero(present[b2])
                if not len(k1) or not len(k2):
                    continue
                # moving kind k2 into b1 and kind k1 into b2
                delta = kinds[k2][None, :, :] - kinds[k1][:, None, :]
                gain = 2 * n * (delta @ (dev[b1] - dev[b2])) + 2 * n * n * (delta * delta).sum(axis=2)
                i, j = np.unravel_index(np.argmin(gain), gain.shape)
                if gain[i, j] < 0 and (best is None or gain[i, j] < best[0]):
                    best = (gain[i, j], b1, b2, k1[i], k2[j])
        if best is None:
            return out
        _, b1, b2, t1, t2 = best
        s1 = _pick(np.flatnonzero((out == b1) & (kind_of == t1)), rng)
        s2 = _pick(np.flatnonzero((out == b2) & (kind_of == t2)), rng)
        out[s1], out[s2] = b2, b1
        present[b1, t1] -= 1
        present[b2, t1] += 1
        present[b2, t2] -= 1
        present[b1, t2] += 1
        moved = kinds[t2] - kinds[t1]
        dev[b1] += n * moved
        dev[b2] -= n * moved


def stratified_split(index: SampleIndex, spec: SplitSpec) -> SplitAssignment:
    """Assign every image of ``index`` to train/val/test.

    Labels are handled rarest first. Each still-unassigned image carrying the
    current label goes to the open bucket with the largest remaining demand
    for that label, then the largest remaining capacity, then a seeded draw.
    A swap pass then evens out what the capacity limits left skewed.
    The result depends only on (index, spec).
    """
    n = len(index)
    if n == 0:
        raise SplitError("cannot split an empty index", code="empty-index")
    if spec.total != n:
        raise SplitError(f"sizes {spec.sizes} sum to {spec.total}, index has {n} images", code="size-mismatch")
    if spec.strategy not in STRATEGIES:
        raise SplitError(f"strategy {spec.strategy!r} cannot be generated", code="bad-strategy")

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    sizes = np.asarray(spec.sizes, dtype=np.int64)
    if spec.strategy == "random":
        perm = rng.permutation(n)
        buckets = np.empty(n, dtype=np.int64)
        buckets[perm] = np.repeat(np.arange(3), sizes)
    else:
        labels = np.asarray(index.label_rows(), dtype=np.int64)
        buckets = _iterative(labels, sizes, rng)

    ids = index.image_ids
    return SplitAssignment(index.manifest.name, spec, {ids[i]: BUCKETS[b] for i, b in enumerate(buckets)})


# -- file format --------------------------------------------------------------


def format_split(assignment: SplitAssignment) -> str:
    spec = assignment.spec
    buf = io.StringIO()
    buf.write(
        f"# {FORMAT_TAG} {FORMAT_VERSION} dataset={assignment.dataset} seed={spec.seed} "
        f"strategy={spec.strategy} prng={PRNG_ID} sizes={','.join(str(s) for s in spec.sizes)}\n"
    )
    buf.write("image_id,bucket\n")
    for image_id in sorted(assignment.assignment):
        buf.write(f"{image_id},{assignment.assignment[image_id]}\n")
    return buf.getvalue()


def save_split(assignment: SplitAssignment, path: str | Path) -> None:
    atomic_write_text(path, format_split(assignment))


def parse_split(text: str) -> SplitAssignment:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise SplitError("missing header comment line", code="bad-header")
    tokens = lines[0][1:].split()
    if tokens[:2] != [FORMAT_TAG, FORMAT_VERSION]:
        raise SplitError(f"unsupported split file header {lines[0]!r}", code="bad-header")
    meta = dict(t.split("=", 1) for t in tokens[2:] if "=" in t)
    for key in ("dataset", "seed", "strategy", "sizes"):
        if key not in meta:
            raise SplitError(f"header lacks {key}=", code="bad-header")
    if meta.get("prng", PRNG_ID) != PRNG_ID:
        raise SplitError(f"split produced with unsupported PRNG {meta['prng']!r}", code="bad-header")
    if len(lines) < 2 or lines[1].strip() != "image_id,bucket":
        raise SplitError("second line must be 'image_id,bucket'", code="bad-header")
    try:
        sizes = tuple(int(x) for x in meta["sizes"].split(","))
        spec = SplitSpec(sizes=sizes, seed=int(meta["seed"]), strategy=meta["strategy"])
    except ValueError as exc:
        raise SplitError(f"bad header values: {exc}", code="bad-header") from None

    assignment: dict[str, str] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise SplitError(f"line {lineno}: expected image_id,bucket", code="malformed-row")
        image_id, bucket = parts
        if bucket not in BUCKETS:
            raise SplitError(f"line {lineno}: unknown bucket {bucket!r}", code="unknown-bucket")
        if image_id in assignment:
            raise SplitError(f"line {lineno}: duplicate image_id {image_id!r}", code="duplicate-image-id")
        assignment[image_id] = bucket
    return SplitAssignment(meta["dataset"], spec, assignment)


def load_split(path: str | Path) -> SplitAssignment:
    return parse_split(Path(path).read_text(encoding="utf-8"))


# -- verification -------------------------------------------------------------


@dataclass(frozen=True)
class SplitReport:
    total: bool
    disjoint: bool
    missing: list[str]
    unknown: list[str]
    cardinalities: dict[str, int]
    sizes_match: bool
    per_class: dict[str, dict[str, int]]
    max_deviation: float

    @property
    def ok(self) -> bool:
        return self.total and self.disjoint and self.sizes_match

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "total": self.total,
            "disjoint": self.disjoint,
            "missing": self.missing[:10],
            "n_missing": len(self.missing),
            "unknown": self.unknown[:10],
            "n_unknown": len(self.unknown),
            "cardinalities": self.cardinalities,
            "sizes_match": self.sizes_match,
            "per_class": self.per_class,
            "max_deviation": self.max_deviation,
        }


def verify_split(assignment: SplitAssignment, index: SampleIndex) -> SplitReport:
    """Check totality, disjointness and cardinalities and tabulate per-class bucket counts.

    ``max_deviation`` is the largest ``|count_c(b) - size_b / N * count_c|``.
    Disjointness holds by construction of the mapping; it is reported for completeness.
    """
    ids = set(index.image_ids)
    assigned = set(assignment.assignment)
    missing = sorted(ids - assigned)
    unknown = sorted(assigned - ids)
    cards = assignment.cardinalities()
    classes = index.manifest.classes
    per_class = {c: dict.fromkeys(BUCKETS, 0) for c in classes}
    totals = dict.fromkeys(classes, 0)
    for rec in index.records:
        b = assignment.assignment.get(rec.image_id)
        for c, bit in zip(classes, rec.labels):
            if bit:
                totals[c] += 1
                if b is not None:
                    per_class[c][b] += 1
    n = len(index)
    dev = 0.0
    if n:
        for c in classes:
            for b in BUCKETS:
                dev = max(dev, abs(per_class[c][b] - cards[b] / n * totals[c]))
    return SplitReport(
        total=not missing and not unknown,
        disjoint=True,
        missing=missing,
        unknown=unknown,
        cardinalities=cards,
        sizes_match=tuple(cards[b] for b in BUCKETS) == tuple(assignment.spec.sizes),
        per_class=per_class,
        max_deviation=dev,
    )


def split_path(data_root: str | Path, name: str) -> Path:
    return Path(data_root) / name / "split.csv"
