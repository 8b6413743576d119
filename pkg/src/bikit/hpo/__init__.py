"""Hyperparameter search: mixed finite spaces, GP-based suggestion, Hyperband pruning."""

from bikit.hpo.hyperband import hyperband_should_stop
from bikit.hpo.ledger import Budget, SearchLedger, TrialRecord, load_ledger, save_ledger
from bikit.hpo.objective import SyntheticObjective
from bikit.hpo.search import best_trial, rerun_best, resume_search, run_search, suggest_next
from bikit.hpo.space import Dimension, ParamSpace, encode, load_space, space_cardinality

__all__ = [
    "Budget",
    "Dimension",
    "ParamSpace",
    "SearchLedger",
    "SyntheticObjective",
    "TrialRecord",
    "best_trial",
    "encode",
    "hyperband_should_stop",
    "load_ledger",
    "load_space",
    "rerun_best",
    "resume_search",
    "run_search",
    "save_ledger",
    "space_cardinality",
    "suggest_next",
]
