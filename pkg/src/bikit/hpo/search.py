"""Bayesian search loop with Hyperband pruning."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable

import numpy as np

from bikit.errors import SearchError, SpaceExhausted
from bikit.hpo.gp import expected_improvement, fit_gp
from bikit.hpo.hyperband import hyperband_should_stop
from bikit.hpo.ledger import Budget, LedgerWriter, SearchLedger, TrialRecord, load_ledger
from bikit.hpo.objective import Objective, objective_from_params
from bikit.hpo.space import ParamSpace

log = logging.getLogger(__name__)


def _observed(ledger: SearchLedger) -> list[TrialRecord]:
    return [t for t in ledger.trials if t.history]


def suggest_next(ledger: SearchLedger, rng_seed: int | None = None) -> dict[str, Any]:
    """Next config to try; depends only on the ledger contents and ``rng_seed``.

    The first ``n_init`` trials are drawn uniformly from the untried configs.
    After that a GP is fit to each observed trial's best validation loss and
    the untried config with the largest expected improvement is returned
    (lowest config index on ties).
    """
    space = ledger.space
    seed = ledger.rng_seed if rng_seed is None else rng_seed
    if len(ledger.trials) >= ledger.budget.max_trials:
        raise SearchError("trial budget exhausted", code="budget-exhausted")
    tried = {space.index_of(t.config) for t in ledger.trials}
    n = space.cardinality
    if len(tried) >= n:
        raise SpaceExhausted(f"all {n} configs have been tried")

    observed = _observed(ledger)
    if len(ledger.trials) < ledger.budget.n_init or len(observed) < 2:
        rng = np.random.default_rng([seed, len(ledger.trials)])
        untried = np.setdiff1d(np.arange(n), np.fromiter(tried, dtype=np.int64, count=len(tried)))
        return space.config_at(int(untried[rng.integers(len(untried))]))

    grid = space.encoded_grid
    x = grid[[space.index_of(t.config) for t in observed]]
    y = np.asarray([t.best_val_loss() for t in observed])
    gp = fit_gp(x, y)
    mask = np.ones(n, dtype=bool)
    mask[list(tried)] = False
    candidates = np.flatnonzero(mask)
    mu, sigma = gp.predict(grid[candidates])
    ei = expected_improvement(mu, sigma, float(y.min()))
    return space.config_at(int(candidates[int(np.argmax(ei))]))


def _trial_seed(rng_seed: int, trial_id: int) -> int:
    return (rng_seed + trial_id) % 2**63


def _run_trial(ledger: SearchLedger, emit: Callable[[dict], None], objective: Objective,
               trial: TrialRecord) -> None:
    budget = ledger.budget
    checkpoints = set(budget.checkpoints)
    tid = trial.trial_id
    # Resumed trial whose last checkpoint decision was lost in a crash.
    if trial.last_epoch in checkpoints and hyperband_should_stop(ledger, tid, trial.last_epoch):
        emit({"event": "trial-ended", "trial_id": tid, "status": "pruned"})
        return
    try:
        for epoch, val_loss, emr in objective.run(trial.config, trial.seed, trial.last_epoch + 1, budget.max_epochs):
            emit({"event": "epoch-reported", "trial_id": tid, "epoch": int(epoch),
                  "val_loss": float(val_loss), "emr": float(emr)})
            if epoch in checkpoints and hyperband_should_stop(ledger, tid, epoch):
                emit({"event": "trial-ended", "trial_id": tid, "status": "pruned"})
                return
    except Exception as exc:  # objective failures end the trial, not the search
        log.warning("trial %d failed: %s", tid, exc)
        emit({"event": "trial-ended", "trial_id": tid, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        return
    emit({"event": "trial-ended", "trial_id": tid, "status": "completed"})


def _loop(ledger: SearchLedger, emit: Callable[[dict], None], objective: Objective) -> None:
    for t in ledger.trials:
        if t.status == "running":
            _run_trial(ledger, emit, objective, t)
    while len(ledger.trials) < ledger.budget.max_trials:
        try:
            config = suggest_next(ledger)
        except SpaceExhausted:
            break
        tid = len(ledger.trials)
        emit({"event": "trial-started", "trial_id": tid, "config": config, "seed": _trial_seed(ledger.rng_seed, tid)})
        _run_trial(ledger, emit, objective, ledger.trials[-1])


def best_trial(ledger: SearchLedger, metric: str = "val_loss") -> TrialRecord | None:
    """Completed or pruned trial with the lowest best val_loss (or highest best emr)."""
    pool = [t for t in ledger.trials if t.status in ("completed", "pruned") and t.history]
    if not pool:
        return None
    if metric == "val_loss":
        return min(pool, key=lambda t: (t.best_val_loss(), t.trial_id))
    if metric == "emr":
        return min(pool, key=lambda t: (-t.best_emr(), t.trial_id))
    raise SearchError(f"unknown selection metric {metric!r}", code="bad-metric")


def run_search(space: ParamSpace, objective: Objective, budget: Budget, rng_seed: int = 0,
               ledger_path: str | Path | None = None) -> tuple[dict | None, SearchLedger]:
    """Run a full search; with ``ledger_path`` every event is appended to that file."""
    ledger = SearchLedger(space, budget, rng_seed, objective.params())
    if ledger_path is None:
        _loop(ledger, ledger.apply, objective)
    else:
        with LedgerWriter(ledger, ledger_path) as w:
            _loop(ledger, w.apply, objective)
    best = best_trial(ledger)
    return (dict(best.config) if best else None), ledger


def resume_search(ledger_path: str | Path, objective: Objective | None = None,
                  max_trials: int | None = None) -> tuple[dict | None, SearchLedger]:
    """Continue a search from its ledger file, finishing any running trial first."""
    ledger = load_ledger(ledger_path)
    if max_trials is not None and max_trials != ledger.budget.max_trials:
        b = ledger.budget
        ledger.budget = Budget(max_trials, b.max_epochs, b.n_init, b.eta, b.min_peers)
    if objective is None:
        objective = objective_from_params(ledger.objective)
    # rewrite cleanly (drops a torn tail) before appending again
    with LedgerWriter(ledger, ledger_path, fresh=True) as w:
        _loop(ledger, w.apply, objective)
    best = best_trial(ledger)
    return (dict(best.config) if best else None), ledger


def rerun_best(config: dict, objective: Objective, n_seeds: int = 5, max_epochs: int = 100) -> list[dict]:
    """Train ``config`` at full budget with seeds 0..n_seeds-1; final-epoch metrics per seed."""
    out = []
    for seed in range(n_seeds):
        last = None
        for last in objective.run(config, seed, 1, max_epochs):
            pass
        if last is None:
            raise SearchError("objective produced no epochs", code="objective-empty")
        epoch, val_loss, emr = last
        out.append({"seed": seed, "epoch": epoch, "val_loss": val_loss, "emr": emr})
    return out
