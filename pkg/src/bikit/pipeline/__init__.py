"""Training support: preprocessing, learning-rate schedules and transfer-learning plans."""

from bikit.pipeline.plan import TrainPlan, check_plan, make_plan, parse_plan, serialize_plan
from bikit.pipeline.preprocess import PreprocessSpec, preprocess
from bikit.pipeline.schedule import LrSchedule, lr_at

__all__ = [
    "LrSchedule",
    "PreprocessSpec",
    "TrainPlan",
    "check_plan",
    "lr_at",
    "make_plan",
    "parse_plan",
    "preprocess",
    "serialize_plan",
]
