"""Dataset manifests, source verification and sample indexes.

A manifest is a UTF-8 JSON document describing one benchmark dataset. The
order of ``classes`` in the manifest is the column order of every label,
score and prediction matrix produced for that dataset.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Iterable, Mapping, Sequence

from bikit._io import atomic_write_text, sha256_file
from bikit.errors import AnnotationError, ManifestError, NotFound

TASK_TYPES = ("single-target", "multi-target")
_HEX64 = re.compile(r"^[0-9a-f]{64}$")

ANNOTATION_HEADER = ("image_id", "rel_path", "labels")
LABEL_SEP = "|"


@dataclass(frozen=True)
class Source:
    uri: str
    sha256: str
    byte_size: int

    @property
    def filename(self) -> str:
        return PurePosixPath(self.uri.split("?", 1)[0]).name


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    version: str
    task_type: str
    classes: tuple[str, ...]
    exclusive_class: int | None = None
    sources: tuple[Source, ...] = ()
    has_original_splits: bool = False
    expected_counts: Mapping[str, int] | None = None
    # raw_size: size of the published dataset, num_images: size after cleaning.
    raw_size: int | None = None
    num_images: int | None = None
    split_sizes: tuple[int, int, int] | None = None
    description: str = ""

    def __post_init__(self):
        _validate_manifest(self)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise AnnotationError(f"unknown class {name!r} for dataset {self.name}", code="unknown-class") from None

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "version": self.version,
            "task_type": self.task_type,
            "classes": list(self.classes),
            "exclusive_class": self.exclusive_class,
            "sources": [{"uri": s.uri, "sha256": s.sha256, "byte_size": s.byte_size} for s in self.sources],
            "has_original_splits": self.has_original_splits,
            "expected_counts": dict(self.expected_counts) if self.expected_counts is not None else None,
            "raw_size": self.raw_size,
            "num_images": self.num_images,
            "split_sizes": list(self.split_sizes) if self.split_sizes is not None else None,
            "description": self.description,
        }
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def _validate_manifest(m: DatasetManifest) -> None:
    if not isinstance(m.name, str) or not m.name:
        raise ManifestError("must be a non-empty string", field="name")
    if not re.match(r"^\d+\.\d+\.\d+", str(m.version)):
        raise ManifestError(f"not a semver string: {m.version!r}", field="version")
    if m.task_type not in TASK_TYPES:
        raise ManifestError(f"must be one of {TASK_TYPES}, got {m.task_type!r}", field="task_type")
    if not m.classes:
        raise ManifestError("must list at least one class", field="classes")
    seen = set()
    for c in m.classes:
        if not isinstance(c, str) or not c:
            raise ManifestError("class names must be non-empty strings", field="classes")
        if LABEL_SEP in c:
            raise ManifestError(f"class name {c!r} contains {LABEL_SEP!r}", field="classes")
        if c in seen:
            raise ManifestError(f"duplicate class {c!r}", field="classes", code="duplicate-class")
        seen.add(c)
    if m.exclusive_class is not None:
        if not isinstance(m.exclusive_class, int) or not 0 <= m.exclusive_class < len(m.classes):
            raise ManifestError(f"index {m.exclusive_class!r} out of range", field="exclusive_class")
    for i, s in enumerate(m.sources):
        if not _HEX64.match(s.sha256 or ""):
            raise ManifestError(
                f"sha256 must be 64 lowercase hex chars, got {s.sha256!r}", field=f"sources[{i}].sha256"
            )
        if not isinstance(s.byte_size, int) or s.byte_size < 0:
            raise ManifestError("byte_size must be a non-negative integer", field=f"sources[{i}].byte_size")
    if m.expected_counts is not None:
        unknown = set(m.expected_counts) - seen
        if unknown:
            raise ManifestError(f"unknown classes {sorted(unknown)}", field="expected_counts")
    if m.split_sizes is not None and (len(m.split_sizes) != 3 or min(m.split_sizes) < 0):
        raise ManifestError("must be three non-negative integers", field="split_sizes")


def manifest_from_dict(doc: Mapping) -> DatasetManifest:
    required = ("name", "version", "task_type", "classes")
    for key in required:
        if key not in doc:
            raise ManifestError("missing required field", field=key)
    try:
        sources = tuple(
            Source(uri=str(s["uri"]), sha256=str(s["sha256"]).lower(), byte_size=s["byte_size"])
            for s in doc.get("sources") or ()
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"each source needs uri, sha256, byte_size ({exc})", field="sources") from None
    split_sizes = doc.get("split_sizes")
    return DatasetManifest(
        name=doc["name"],
        version=str(doc["version"]),
        task_type=doc["task_type"],
        classes=tuple(doc["classes"]),
        exclusive_class=doc.get("exclusive_class"),
        sources=sources,
        has_original_splits=bool(doc.get("has_original_splits", False)),
        expected_counts=doc.get("expected_counts"),
        raw_size=doc.get("raw_size"),
        num_images=doc.get("num_images"),
        split_sizes=tuple(split_sizes) if split_sizes is not None else None,
        description=doc.get("description", ""),
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest file.

    Raises ManifestError naming the offending field.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"parse error: {exc}", field="<document>", code="parse-error") from None
    if not isinstance(doc, dict):
        raise ManifestError("top level must be an object", field="<document>", code="parse-error")
    return manifest_from_dict(doc)


def builtin_manifest_names() -> list[str]:
    root = resources.files("bikit") / "data" / "manifests"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def find_manifest(name: str, data_root: str | Path | None = None) -> DatasetManifest:
    """Resolve a manifest by name; ``<data_root>/manifests/<name>.json`` wins over the bundled one."""
    if data_root is not None:
        local = Path(data_root) / "manifests" / f"{name}.json"
        if local.is_file():
            return load_manifest(local)
    res = resources.files("bikit") / "data" / "manifests" / f"{name}.json"
    if res.is_file():
        with resources.as_file(res) as p:
            return load_manifest(p)
    raise NotFound(f"no manifest named {name!r}", code="unknown-dataset")


def list_manifests(data_root: str | Path | None = None) -> list[DatasetManifest]:
    names = set(builtin_manifest_names())
    if data_root is not None and (Path(data_root) / "manifests").is_dir():
        names.update(p.stem for p in (Path(data_root) / "manifests").glob("*.json"))
    return [find_manifest(n, data_root) for n in sorted(names)]


# -- source verification ----------------------------------------------------


@dataclass(frozen=True)
class SourceStatus:
    uri: str
    path: str
    status: str  # ok | missing | digest-mismatch
    detail: str = ""


def verify_sources(manifest: DatasetManifest, data_root: str | Path) -> list[SourceStatus]:
    """Check every source file below ``data_root`` by size and sha256.

    Files are looked up by the basename of their URI. Never raises for bad
    files; problems are reported per source.
    """
    root = Path(data_root)
    report = []
    for src in manifest.sources:
        path = root / src.filename
        if not path.is_file():
            report.append(SourceStatus(src.uri, str(path), "missing"))
            continue
        size = path.stat().st_size
        if size != src.byte_size:
            report.append(
                SourceStatus(src.uri, str(path), "digest-mismatch", f"size {size} != expected {src.byte_size}")
            )
            continue
        digest = sha256_file(path)
        if digest != src.sha256:
            report.append(SourceStatus(src.uri, str(path), "digest-mismatch", f"sha256 {digest}"))
        else:
            report.append(SourceStatus(src.uri, str(path), "ok"))
    return report


# -- sample index -------------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    image_id: str
    rel_path: str
    labels: tuple[int, ...]

    def label_names(self, classes: Sequence[str]) -> list[str]:
        return [c for c, bit in zip(classes, self.labels) if bit]


@dataclass(frozen=True)
class SampleIndex:
    manifest: DatasetManifest
    records: tuple[SampleRecord, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def image_ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def label_rows(self) -> list[tuple[int, ...]]:
        return [r.labels for r in self.records]

    def by_id(self) -> dict[str, SampleRecord]:
        return {r.image_id: r for r in self.records}


def _check_record(manifest: DatasetManifest, rec: SampleRecord, where: str) -> None:
    if len(rec.labels) != manifest.n_classes:
        raise AnnotationError(f"{where}: expected {manifest.n_classes} label bits, got {len(rec.labels)}")
    n_set = sum(rec.labels)
    if n_set == 0:
        raise AnnotationError(f"{where}: image {rec.image_id!r} has no labels", code="empty-labels")
    ex = manifest.exclusive_class
    if ex is not None and rec.labels[ex] and n_set > 1:
        raise AnnotationError(
            f"{where}: exclusive-class conflict for {rec.image_id!r}: "
            f"{manifest.classes[ex]!r} combined with other labels",
            code="exclusive-class-conflict",
        )
    if manifest.task_type == "single-target" and n_set != 1:
        raise AnnotationError(
            f"{where}: single-target dataset but {rec.image_id!r} has {n_set} labels", code="multiple-labels"
        )


def make_index(manifest: DatasetManifest, records: Iterable[SampleRecord]) -> SampleIndex:
    """Validate records and return them as an index sorted by image_id."""
    recs = sorted(records, key=lambda r: r.image_id)
    prev = None
    for rec in recs:
        if rec.image_id == prev:
            raise AnnotationError(f"duplicate image_id {rec.image_id!r}", code="duplicate-image-id")
        prev = rec.image_id
        _check_record(manifest, rec, rec.image_id)
    return SampleIndex(manifest, tuple(recs))


def parse_annotations(manifest: DatasetManifest, text: str) -> SampleIndex:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise AnnotationError("annotations file is empty") from None
    if tuple(h.strip() for h in header) != ANNOTATION_HEADER:
        raise AnnotationError(f"bad header {header!r}, expected {','.join(ANNOTATION_HEADER)}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise AnnotationError(f"line {lineno}: expected 3 columns, got {len(row)}")
        image_id, rel_path, labels = (x.strip() for x in row)
        if not image_id:
            raise AnnotationError(f"line {lineno}: empty image_id")
        names = [n.strip() for n in labels.split(LABEL_SEP)] if labels else []
        if not names or any(not n for n in names):
            raise AnnotationError(f"line {lineno}: empty label list for {image_id!r}", code="empty-labels")
        bits = [0] * manifest.n_classes
        for n in names:
            try:
                bits[manifest.class_index(n)] = 1
            except AnnotationError as exc:
                raise AnnotationError(f"line {lineno}: {exc}", code="unknown-class") from None
        records.append(SampleRecord(image_id, rel_path, tuple(bits)))
    return make_index(manifest, records)


def build_index(manifest: DatasetManifest, annotations: str | Path) -> SampleIndex:
    """Read an annotations CSV (``image_id,rel_path,labels``) into a validated index."""
    return parse_annotations(manifest, Path(annotations).read_text(encoding="utf-8"))


def format_annotations(index: SampleIndex) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANNOTATION_HEADER)
    classes = index.manifest.classes
    for r in index.records:
        w.writerow([r.image_id, r.rel_path, LABEL_SEP.join(r.label_names(classes))])
    return buf.getvalue()


def save_index(index: SampleIndex, path: str | Path) -> None:
    atomic_write_text(path, format_annotations(index))


@dataclass(frozen=True)
class ClassHistogram:
    counts: dict[str, int]
    n_images: int
    total_labels: int

    @property
    def avg_labels_per_image(self) -> float:
        return self.total_labels / self.n_images


def class_histogram(index: SampleIndex) -> ClassHistogram:
    if not index.records:
        raise AnnotationError("class_histogram needs a non-empty index", code="empty-index")
    classes = index.manifest.classes
    counts = [0] * len(classes)
    for r in index.records:
        for j, bit in enumerate(r.labels):
            counts[j] += bit
    return ClassHistogram(dict(zip(classes, counts)), len(index.records), sum(counts))


def count_discrepancies(index: SampleIndex) -> list[str]:
    """Compare an index against the manifest's cleaned image count and expected class counts."""
    m = index.manifest
    problems = []
    if m.num_images is not None and len(index) != m.num_images:
        problems.append(f"num_images: index has {len(index)}, manifest expects {m.num_images}")
    if m.expected_counts:
        hist = class_histogram(index)
        for cls, expected in m.expected_counts.items():
            if hist.counts[cls] != expected:
                problems.append(f"{cls}: index has {hist.counts[cls]}, manifest expects {expected}")
    return problems


def dataset_dir(data_root: str | Path, name: str) -> Path:
    return Path(data_root) / name


def annotations_path(data_root: str | Path, name: str) -> Path:
    return dataset_dir(data_root, name) / "annotations.csv"


def load_dataset_index(name: str, data_root: str | Path) -> SampleIndex:
    manifest = find_manifest(name, data_root)
    path = annotations_path(data_root, name)
    if not path.is_file():
        raise NotFound(f"no annotations for {name!r} at {path}", code="missing-annotations")
    return build_index(manifest, path)
