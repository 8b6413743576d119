"""Best settings found for the published baselines.

``HO_BEST`` holds the HO search winners per dataset and backbone; ``LR_BEST``
the learning rates selected for HTA (second stage) and DHB. Values are kept
verbatim, including the CODEBRIM HO learning rates that fall outside the
searched learning-rate grid.
"""

from __future__ import annotations

from bikit.errors import PlanError
from bikit.pipeline.plan import Hyperparams, TrainPlan, make_plan

DATASETS = ("codebrim", "mcds")
MODELS = ("rn", "en", "mn")
MODEL_NAMES = {"rn": "ResNet50", "en": "EfficientNetV1-B0", "mn": "MobileNetV3-Large"}

# (hidden_layer, batch_size, learning_rate, scheduler, dropout, weight_decay)
HO_BEST = {
    ("codebrim", "rn"): (128, 256, 1e-5, "CtW", 0.2, 1e-5),
    ("codebrim", "en"): (256, 256, 1e-7, "CeW", 0.4, 1e-7),
    ("codebrim", "mn"): (1024, 64, 1e-6, "CeW", 0.3, 1e-6),
    ("mcds", "rn"): (32, 64, 5e-3, "CeW", 0.0, 1e-5),
    ("mcds", "en"): (32, 32, 5e-3, "CtW", 0.4, 1e-7),
    ("mcds", "mn"): (64, 64, 5e-3, "CtW", 0.2, 1e-6),
}

# (HTA stage-2 lr, DHB head lr, DHB base lr)
LR_BEST = {
    ("codebrim", "rn"): (1e-5, 1e-4, 1e-5),
    ("codebrim", "en"): (1e-5, 1e-3, 1e-5),
    ("codebrim", "mn"): (1e-5, 1e-3, 1e-5),
    ("mcds", "rn"): (1e-7, 1e-4, 1e-5),
    ("mcds", "en"): (1e-5, 1e-4, 1e-5),
    ("mcds", "mn"): (1e-5, 5e-3, 1e-5),
}

DATASET_ALIASES = {"codebrim-balanced": "codebrim"}


def _key(dataset: str, model: str) -> tuple[str, str]:
    key = (DATASET_ALIASES.get(dataset.lower(), dataset.lower()), model.lower())
    if key not in HO_BEST:
        raise PlanError(f"no preset for dataset={dataset!r} model={model!r}", code="unknown-preset")
    return key


def best_hyperparams(dataset: str, model: str) -> Hyperparams:
    hidden, batch, _, sched, dropout, wd = HO_BEST[_key(dataset, model)]
    return Hyperparams(hidden_layer=hidden, batch_size=batch, dropout=dropout, weight_decay=wd, scheduler=sched)


def best_lrs(strategy: str, dataset: str, model: str) -> dict[str, float]:
    key = _key(dataset, model)
    head = HO_BEST[key][2]
    hta, dhb_head, dhb_base = LR_BEST[key]
    strategy = strategy.upper()
    if strategy == "HO":
        return {"head": head}
    if strategy == "HTA":
        return {"head": head, "all": hta}
    if strategy == "DHB":
        return {"head": dhb_head, "base": dhb_base}
    raise PlanError(f"unknown strategy {strategy!r}", code="bad-strategy")


def preset_plan(strategy: str, dataset: str, model: str, patience: int = 10) -> TrainPlan:
    key = _key(dataset, model)
    return make_plan(strategy, best_hyperparams(*key), best_lrs(strategy, *key), patience=patience,
                     dataset=key[0], model=key[1])
