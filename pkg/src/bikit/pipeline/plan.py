"""Declarative transfer-learning plans (HO, HTA, DHB).

A plan names, per stage, which parameter groups train and at what learning
rate. bikit only emits plans; an external trainer executes them.

HO   one stage, base frozen, head trainable.
HTA  the HO stage, then a second stage with every group trainable at one lr.
DHB  one stage, head and base trainable with their own learning rates.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping

from bikit.errors import PlanError
from bikit.pipeline.schedule import KIND_IDS, KINDS

SCHEMA = "bikit.trainplan/v1"
STRATEGIES = ("HO", "HTA", "DHB")
GROUPS = ("base", "head")
MAX_EPOCHS = 100
DEFAULT_PATIENCE = 10


@dataclass(frozen=True)
class GroupPolicy:
    trainable: bool
    lr: float | None = None

    def __post_init__(self):
        if self.trainable and not (self.lr is not None and self.lr > 0):
            raise PlanError("trainable groups need a positive lr", code="missing-lr")
        if not self.trainable and self.lr is not None:
            raise PlanError("frozen groups carry no lr", code="bad-plan")


FROZEN = GroupPolicy(False)


@dataclass(frozen=True)
class EarlyStop:
    monitor: str = "val_loss"
    mode: str = "min"
    patience: int = DEFAULT_PATIENCE


@dataclass(frozen=True)
class Stage:
    name: str
    base: GroupPolicy
    head: GroupPolicy
    scheduler: str
    max_epochs: int = MAX_EPOCHS
    warmup_fraction: float = 0.1
    early_stop: EarlyStop = field(default_factory=EarlyStop)


@dataclass(frozen=True)
class Hyperparams:
    hidden_layer: int
    batch_size: int
    dropout: float
    weight_decay: float
    scheduler: str = "cosine-with-warmup"

    def __post_init__(self):
        sched = KIND_IDS.get(self.scheduler, self.scheduler)
        if sched not in KINDS:
            raise PlanError(f"unknown scheduler {self.scheduler!r}", code="bad-plan")
        object.__setattr__(self, "scheduler", sched)
        if self.hidden_layer < 1 or self.batch_size < 1:
            raise PlanError("hidden_layer and batch_size must be positive", code="bad-plan")
        if not 0 <= self.dropout < 1 or self.weight_decay < 0:
            raise PlanError("dropout must lie in [0, 1) and weight_decay be non-negative", code="bad-plan")


@dataclass(frozen=True)
class TrainPlan:
    strategy: str
    stages: tuple[Stage, ...]
    hyperparams: Hyperparams
    dataset: str = ""
    model: str = ""

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["stages"] = [
            {
                "name": s["name"],
                "groups": {g: _policy_doc(s[g]) for g in GROUPS},
                "scheduler": s["scheduler"],
                "warmup_fraction": s["warmup_fraction"],
                "max_epochs": s["max_epochs"],
                "early_stop": s["early_stop"],
            }
            for s in doc["stages"]
        ]
        return {"schema": SCHEMA, **doc}


def _policy_doc(p: dict) -> dict:
    return {"policy": "trainable", "lr": p["lr"]} if p["trainable"] else {"policy": "frozen"}


def _lr(lrs: Mapping[str, float], key: str, strategy: str) -> float:
    if lrs.get(key) is None:
        raise PlanError(f"{strategy} needs a {key!r} learning rate", code="missing-lr")
    return float(lrs[key])


def make_plan(strategy: str, hyperparams: Hyperparams, lrs: Mapping[str, float],
              patience: int = DEFAULT_PATIENCE, dataset: str = "", model: str = "") -> TrainPlan:
    """Build a plan.

    ``lrs`` keys: HO ``head``; HTA ``head`` (first stage) and ``all`` (second
    stage); DHB ``head`` and ``base``.
    """
    strategy = strategy.upper()
    if strategy not in STRATEGIES:
        raise PlanError(f"unknown strategy {strategy!r}", code="bad-strategy")
    stop = EarlyStop(patience=patience)
    sched = hyperparams.scheduler
    head_lr = _lr(lrs, "head", strategy)
    heads_stage = Stage("heads", FROZEN, GroupPolicy(True, head_lr), sched, early_stop=stop)
    if strategy == "HO":
        stages = (heads_stage,)
    elif strategy == "HTA":
        all_lr = _lr(lrs, "all", strategy)
        stages = (heads_stage, Stage("all", GroupPolicy(True, all_lr), GroupPolicy(True, all_lr), sched,
                                     early_stop=stop))
    else:
        base_lr = _lr(lrs, "base", strategy)
        if base_lr > head_lr:
            warnings.warn(f"DHB base lr {base_lr:g} exceeds head lr {head_lr:g}", stacklevel=2)
        stages = (Stage("discriminative", GroupPolicy(True, base_lr), GroupPolicy(True, head_lr), sched,
                        early_stop=stop),)
    plan = TrainPlan(strategy, stages, hyperparams, dataset, model)
    check_plan(plan)
    return plan


def check_plan(plan: TrainPlan) -> None:
    """Raise PlanError unless the plan has the structure its strategy requires."""
    s = plan.stages
    if any(st.max_epochs < 1 for st in s):
        raise PlanError("max_epochs must be positive", code="bad-plan")
    if plan.strategy == "HO":
        ok = len(s) == 1 and not s[0].base.trainable and s[0].head.trainable
    elif plan.strategy == "HTA":
        ok = (
            len(s) == 2
            and not s[0].base.trainable and s[0].head.trainable
            and s[1].base.trainable and s[1].head.trainable
            and s[1].base.lr == s[1].head.lr
        )
    elif plan.strategy == "DHB":
        ok = len(s) == 1 and s[0].base.trainable and s[0].head.trainable
    else:
        raise PlanError(f"unknown strategy {plan.strategy!r}", code="bad-strategy")
    if not ok:
        raise PlanError(f"stage structure does not match strategy {plan.strategy}", code="bad-plan")


def serialize_plan(plan: TrainPlan) -> str:
    return json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n"


def _policy(doc: Mapping) -> GroupPolicy:
    if doc.get("policy") == "frozen":
        return FROZEN
    if doc.get("policy") == "trainable":
        return GroupPolicy(True, doc.get("lr"))
    raise PlanError(f"unknown group policy {doc.get('policy')!r}", code="bad-plan")


def parse_plan(text: str) -> TrainPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan is not valid JSON: {exc}", code="parse-error") from None
    if doc.get("schema") != SCHEMA:
        raise PlanError(f"unsupported plan schema {doc.get('schema')!r}", code="bad-schema")
    try:
        stages = tuple(
            Stage(
                name=s["name"],
                base=_policy(s["groups"]["base"]),
                head=_policy(s["groups"]["head"]),
                scheduler=s["scheduler"],
                max_epochs=s["max_epochs"],
                warmup_fraction=s["warmup_fraction"],
                early_stop=EarlyStop(**s["early_stop"]),
            )
            for s in doc["stages"]
        )
        plan = TrainPlan(doc["strategy"], stages, Hyperparams(**doc["hyperparams"]),
                         doc.get("dataset", ""), doc.get("model", ""))
    except (KeyError, TypeError) as exc:
        raise PlanError(f"malformed plan document: {exc}", code="parse-error") from None
    check_plan(plan)
    return plan
