"""Finite mixed search spaces and their numeric encoding."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from bikit.errors import SearchError

SCALES = ("linear", "log", "categorical")


@dataclass(frozen=True)
class Dimension:
    name: str
    values: tuple
    scale: str

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.scale not in SCALES:
            raise SearchError(f"{self.name}: unknown scale {self.scale!r}", code="bad-space")
        if not self.values:
            raise SearchError(f"{self.name}: empty value set", code="bad-space")
        if len(set(self.values)) != len(self.values):
            raise SearchError(f"{self.name}: duplicate values", code="bad-space")
        if self.scale == "log" and any(not (isinstance(v, (int, float)) and v > 0) for v in self.values):
            raise SearchError(f"{self.name}: log scale requires strictly positive values", code="bad-space")
        if self.scale in ("linear", "log"):
            if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in self.values):
                raise SearchError(f"{self.name}: numeric scale requires numbers", code="bad-space")
            if list(self.values) != sorted(self.values):
                raise SearchError(f"{self.name}: numeric values must be ascending", code="bad-space")

    @property
    def width(self) -> int:
        return len(self.values) if self.scale == "categorical" else 1

    def encode(self, value) -> list[float]:
        try:
            i = self.values.index(value)
        except ValueError:
            raise SearchError(f"{self.name}: {value!r} is not in the space", code="bad-config") from None
        n = len(self.values)
        if self.scale == "categorical":
            return [1.0 if k == i else 0.0 for k in range(n)]
        if n == 1:
            return [0.0]
        if self.scale == "log":
            lo, hi = math.log10(self.values[0]), math.log10(self.values[-1])
            return [(math.log10(value) - lo) / (hi - lo)]
        return [i / (n - 1)]


@dataclass(frozen=True)
class ParamSpace:
    dimensions: tuple[Dimension, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        names = [d.name for d in self.dimensions]
        if not names:
            raise SearchError("a space needs at least one dimension", code="bad-space")
        if len(set(names)) != len(names):
            raise SearchError("dimension names must be unique", code="bad-space")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    @property
    def cardinality(self) -> int:
        return math.prod(len(d.values) for d in self.dimensions)

    def config_at(self, index: int) -> dict[str, Any]:
        """Config number ``index`` in mixed-radix order (last dimension fastest)."""
        if not 0 <= index < self.cardinality:
            raise SearchError(f"config index {index} out of range", code="bad-config")
        out = {}
        for d in reversed(self.dimensions):
            index, r = divmod(index, len(d.values))
            out[d.name] = d.values[r]
        return {d.name: out[d.name] for d in self.dimensions}

    def index_of(self, config: Mapping[str, Any]) -> int:
        if set(config) != set(self.names):
            raise SearchError(f"config keys {sorted(config)} do not match space {self.names}", code="bad-config")
        idx = 0
        for d in self.dimensions:
            try:
                pos = d.values.index(config[d.name])
            except ValueError:
                raise SearchError(f"{d.name}: {config[d.name]!r} is not in the space", code="bad-config") from None
            idx = idx * len(d.values) + pos
        return idx

    def grid_position(self, config: Mapping[str, Any]) -> tuple[int, ...]:
        return tuple(d.values.index(config[d.name]) for d in self.dimensions)

    def encode(self, config: Mapping[str, Any]) -> np.ndarray:
        vec: list[float] = []
        for d in self.dimensions:
            vec.extend(d.encode(config[d.name]))
        return np.asarray(vec, dtype=np.float64)

    @cached_property
    def encoded_grid(self) -> np.ndarray:
        """Encoding of every config, row ``i`` for ``config_at(i)``."""
        parts = []
        for d in self.dimensions:
            parts.append(np.asarray([d.encode(v) for v in d.values], dtype=np.float64))
        grids = np.meshgrid(*[np.arange(len(d.values)) for d in self.dimensions], indexing="ij")
        cols = [p[g.ravel()] for p, g in zip(parts, grids)]
        return np.concatenate(cols, axis=1)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dimensions": [{"name": d.name, "values": list(d.values), "scale": d.scale} for d in self.dimensions],
        }


def space_cardinality(space: ParamSpace) -> int:
    return space.cardinality


def encode(space: ParamSpace, config: Mapping[str, Any]) -> np.ndarray:
    return space.encode(config)


def space_from_dict(doc: Mapping) -> ParamSpace:
    try:
        dims = tuple(Dimension(d["name"], tuple(d["values"]), d.get("scale", "categorical")) for d in doc["dimensions"])
    except (KeyError, TypeError) as exc:
        raise SearchError(f"malformed space document: {exc}", code="bad-space") from None
    return ParamSpace(dims, doc.get("name", ""))


def load_space(path_or_name: str | Path) -> ParamSpace:
    """Load a space file, or a bundled space by name (``mcds``, ``codebrim``)."""
    p = Path(path_or_name)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
    else:
        res = resources.files("bikit") / "data" / "spaces" / f"{path_or_name}.json"
        if not res.is_file():
            raise SearchError(f"no space file or bundled space named {str(path_or_name)!r}", code="bad-space")
        text = res.read_text(encoding="utf-8")
    try:
        return space_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise SearchError(f"space file is not valid JSON: {exc}", code="bad-space") from None


def grid_distance(space: ParamSpace, a: Mapping[str, Any], b: Mapping[str, Any]) -> int:
    """Largest per-dimension step count between two configs (categorical mismatch counts 1)."""
    dist = 0
    for d, i, j in zip(space.dimensions, space.grid_position(a), space.grid_position(b)):
        dist = max(dist, (i != j) if d.scale == "categorical" else abs(i - j))
    return int(dist)


def baseline_space(batch_sizes: Sequence[int], name: str = "") -> ParamSpace:
    return ParamSpace(
        (
            Dimension("hidden_layer", (16, 32, 64, 128, 256, 512, 1024), "log"),
            Dimension("batch_size", tuple(batch_sizes), "log"),
            Dimension("learning_rate", (1e-4, 5e-4, 1e-3, 5e-3, 1e-2), "log"),
            Dimension("scheduler", ("CtW", "CeW"), "categorical"),
            Dimension("dropout", (0.0, 0.1, 0.2, 0.3, 0.4), "linear"),
            Dimension("weight_decay", (1e-7, 1e-6, 1e-5), "log"),
        ),
        name,
    )
