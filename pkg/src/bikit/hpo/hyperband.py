"""Hyperband-style early stopping at geometric epoch checkpoints."""

from __future__ import annotations

import math

from bikit.errors import SearchError
from bikit.hpo.ledger import SearchLedger


def hyperband_should_stop(ledger: SearchLedger, trial_id: int, epoch: int) -> bool:
    """True if ``trial_id`` should be pruned at checkpoint ``epoch``.

    Peers are the other trials that reached ``epoch``. With at least
    ``min_peers`` of them, the trial survives only if its best validation loss
    so far ranks within the top ceil(n / eta) of the n = peers + 1 values
    (each peer scored by its best loss up to the checkpoint). Ties favour the
    trial.
    """
    budget = ledger.budget
    if epoch not in budget.checkpoints:
        raise SearchError(f"epoch {epoch} is not a checkpoint {budget.checkpoints}", code="not-a-checkpoint")
    trial = ledger.trial(trial_id)
    mine = trial.best_val_loss(up_to=epoch)
    if mine is None:
        raise SearchError(f"trial {trial_id} has no result up to epoch {epoch}", code="bad-event")
    peers = [t.best_val_loss(up_to=epoch) for t in ledger.trials if t.trial_id != trial_id and t.reached(epoch)]
    if len(peers) < budget.min_peers:
        return False
    rank = 1 + sum(1 for p in peers if p < mine)
    return rank > math.ceil((len(peers) + 1) / budget.eta)
