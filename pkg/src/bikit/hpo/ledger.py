"""Search ledger: trial records rebuilt from an append-only event log.

File layout (JSON lines): a header object, then one event per line::

    {"format": "bikit-hpo-ledger", "version": 1, "space": {...}, "budget": {...}, ...}
    {"event": "trial-started", "trial_id": 0, "config": {...}, "seed": 0}
    {"event": "epoch-reported", "trial_id": 0, "epoch": 1, "val_loss": 1.2, "emr": 0.3}
    {"event": "trial-ended", "trial_id": 0, "status": "completed"}

Events of different trials may interleave in any order; within a trial,
epochs must strictly increase and nothing may follow ``trial-ended``.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from bikit._io import atomic_write_text
from bikit.errors import SearchError
from bikit.hpo.space import ParamSpace, space_from_dict

FORMAT = "bikit-hpo-ledger"
VERSION = 1
TERMINAL = ("pruned", "completed", "failed")


@dataclass(frozen=True)
class Budget:
    max_trials: int
    max_epochs: int = 100
    n_init: int = 10
    eta: int = 3
    min_peers: int = 3

    def __post_init__(self):
        if self.max_trials < 1 or self.max_epochs < 1 or self.eta < 2:
            raise SearchError("budget needs max_trials >= 1, max_epochs >= 1, eta >= 2", code="bad-budget")

    @property
    def checkpoints(self) -> tuple[int, ...]:
        out, e = [], 1
        while e < self.max_epochs:
            out.append(e)
            e *= self.eta
        return tuple(out)


@dataclass
class TrialRecord:
    trial_id: int
    config: dict[str, Any]
    seed: int
    history: list[tuple[int, float, float]] = field(default_factory=list)
    status: str = "running"
    error: str = ""

    @property
    def last_epoch(self) -> int:
        return self.history[-1][0] if self.history else 0

    def best_val_loss(self, up_to: int | None = None) -> float | None:
        vals = [v for e, v, _ in self.history if up_to is None or e <= up_to]
        return min(vals) if vals else None

    def best_emr(self) -> float | None:
        vals = [m for _, _, m in self.history]
        return max(vals) if vals else None

    def reached(self, epoch: int) -> bool:
        return any(e == epoch for e, _, _ in self.history)


class SearchLedger:
    """In-memory search state; every mutation goes through :meth:`apply`."""

    def __init__(self, space: ParamSpace, budget: Budget, rng_seed: int = 0,
                 objective: dict | None = None):
        self.space = space
        self.budget = budget
        self.rng_seed = rng_seed
        self.objective = dict(objective or {})
        self.trials: list[TrialRecord] = []
        self.events: list[dict] = []
        self._lock = threading.Lock()

    def header(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "space": self.space.to_dict(),
            "budget": {
                "max_trials": self.budget.max_trials,
                "max_epochs": self.budget.max_epochs,
                "n_init": self.budget.n_init,
                "eta": self.budget.eta,
                "min_peers": self.budget.min_peers,
            },
            "rng_seed": self.rng_seed,
            "objective": self.objective,
        }

    def trial(self, trial_id: int) -> TrialRecord:
        if not 0 <= trial_id < len(self.trials):
            raise SearchError(f"unknown trial {trial_id}", code="unknown-trial")
        return self.trials[trial_id]

    def apply(self, event: dict) -> None:
        with self._lock:
            self._apply(event)
            self.events.append(dict(event))

    def _apply(self, ev: dict) -> None:
        kind = ev.get("event")
        if kind == "trial-started":
            if ev["trial_id"] != len(self.trials):
                raise SearchError(f"trial ids must be dense; expected {len(self.trials)}, got {ev['trial_id']}",
                                  code="bad-event")
            self.space.index_of(ev["config"])
            self.trials.append(TrialRecord(ev["trial_id"], dict(ev["config"]), int(ev["seed"])))
            return
        t = self.trial(ev["trial_id"])
        if t.status != "running":
            raise SearchError(f"trial {t.trial_id} already {t.status}", code="bad-event")
        if kind == "epoch-reported":
            epoch = int(ev["epoch"])
            if epoch <= t.last_epoch:
                raise SearchError(f"trial {t.trial_id}: epoch {epoch} after {t.last_epoch}", code="bad-event")
            val, emr = float(ev["val_loss"]), float(ev["emr"])
            if not (math.isfinite(val) and math.isfinite(emr)):
                raise SearchError(f"trial {t.trial_id}: non-finite metrics", code="bad-event")
            t.history.append((epoch, val, emr))
        elif kind == "trial-ended":
            if ev["status"] not in TERMINAL:
                raise SearchError(f"bad terminal status {ev['status']!r}", code="bad-event")
            t.status = ev["status"]
            t.error = ev.get("error", "")
        else:
            raise SearchError(f"unknown event {kind!r}", code="bad-event")

    # convenience wrappers used by the search loop
    def start_trial(self, config: dict, seed: int) -> TrialRecord:
        self.apply({"event": "trial-started", "trial_id": len(self.trials), "config": config, "seed": seed})
        return self.trials[-1]

    def report(self, trial_id: int, epoch: int, val_loss: float, emr: float) -> None:
        self.apply({"event": "epoch-reported", "trial_id": trial_id, "epoch": epoch,
                    "val_loss": float(val_loss), "emr": float(emr)})

    def end_trial(self, trial_id: int, status: str, error: str = "") -> None:
        ev = {"event": "trial-ended", "trial_id": trial_id, "status": status}
        if error:
            ev["error"] = error
        self.apply(ev)

    @property
    def epochs_consumed(self) -> int:
        return sum(len(t.history) for t in self.trials)

    def state(self) -> dict:
        """Plain-data snapshot used for equality checks."""
        return {"header": self.header(), "trials": [
            {"trial_id": t.trial_id, "config": t.config, "seed": t.seed, "history": t.history,
             "status": t.status, "error": t.error} for t in self.trials]}


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def format_ledger(ledger: SearchLedger) -> str:
    return "".join(_dump(x) + "\n" for x in [ledger.header(), *ledger.events])


def save_ledger(ledger: SearchLedger, path: str | Path) -> None:
    atomic_write_text(path, format_ledger(ledger))


def load_ledger(path: str | Path) -> SearchLedger:
    """Replay a ledger file. A torn final line (crash mid-append) is ignored."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        lines.pop()  # unterminated tail
    if not lines:
        raise SearchError(f"{path}: empty ledger", code="bad-ledger")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise SearchError(f"{path}: unreadable header", code="bad-ledger") from None
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise SearchError(f"{path}: not a version-{VERSION} {FORMAT} file", code="bad-ledger")
    ledger = SearchLedger(space_from_dict(header["space"]), Budget(**header["budget"]),
                          header.get("rng_seed", 0), header.get("objective"))
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            ev = json.loads(line)
        except json.JSONDecodeError:
            raise SearchError(f"{path}:{lineno}: corrupt event line", code="bad-ledger") from None
        ledger.apply(ev)
    return ledger


class LedgerWriter:
    """Appends events to a ledger file as they are applied (single writer)."""

    def __init__(self, ledger: SearchLedger, path: str | Path, fresh: bool = True):
        self.ledger = ledger
        self.path = Path(path)
        if fresh:
            save_ledger(ledger, self.path)
        self._fh = open(self.path, "a", encoding="utf-8")

    def apply(self, event: dict) -> None:
        self.ledger.apply(event)
        self._fh.write(_dump(event) + "\n")
        self._fh.flush()
        if event.get("event") == "trial-ended":
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
