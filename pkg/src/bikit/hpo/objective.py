"""Objectives the search loop can train against.

An objective yields ``(epoch, val_loss, emr)`` for epochs ``start_epoch`` to
``max_epochs`` and must give identical numbers for identical (config, seed),
including when a run is resumed from a later ``start_epoch``.
"""

from __future__ import annotations

import json
import math
import zlib
from typing import Any, Iterator, Mapping, Protocol

import numpy as np

from bikit.errors import SearchError


class Objective(Protocol):
    name: str

    def run(self, config: Mapping[str, Any], seed: int, start_epoch: int = 1,
            max_epochs: int = 100) -> Iterator[tuple[int, float, float]]: ...

    def params(self) -> dict: ...


class SyntheticObjective:
    """Desk-scale stand-in for a training run.

    val_loss = (log10 lr - log10 lr_star)^2 + 0.5 (dropout - 0.2)^2 + 1/epoch + N(0, noise^2)

    Noise is seeded by (seed, config, epoch). ``emr`` is exp(-val_loss) clipped to [0, 1].
    """

    name = "synthetic"

    def __init__(self, lr_star: float = 1e-3, best_dropout: float = 0.2, noise: float = 0.01):
        self.lr_star = lr_star
        self.best_dropout = best_dropout
        self.noise = noise

    def params(self) -> dict:
        return {"name": self.name, "lr_star": self.lr_star, "best_dropout": self.best_dropout, "noise": self.noise}

    def floor(self, config: Mapping[str, Any]) -> float:
        """Noise-free loss without the epoch term; what an infinitely long run approaches."""
        return (math.log10(config["learning_rate"]) - math.log10(self.lr_star)) ** 2 + 0.5 * (
            config["dropout"] - self.best_dropout
        ) ** 2

    def value(self, config: Mapping[str, Any], seed: int, epoch: int) -> float:
        loss = self.floor(config) + 1.0 / epoch
        if self.noise:
            key = zlib.crc32(json.dumps(dict(config), sort_keys=True).encode())
            rng = np.random.default_rng([seed, key, epoch])
            loss += self.noise * float(rng.standard_normal())
        return loss

    def run(self, config, seed, start_epoch=1, max_epochs=100):
        for epoch in range(start_epoch, max_epochs + 1):
            loss = self.value(config, seed, epoch)
            yield epoch, loss, min(1.0, max(0.0, math.exp(-loss)))


OBJECTIVES = {"synthetic": SyntheticObjective}


def objective_from_params(params: Mapping[str, Any]) -> Objective:
    params = dict(params)
    name = params.pop("name", None)
    if name not in OBJECTIVES:
        raise SearchError(f"unknown objective {name!r}", code="unknown-objective")
    return OBJECTIVES[name](**params)
