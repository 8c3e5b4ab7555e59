"""Holistic reliability evaluation of classifiers.

Scores a model on in-distribution accuracy, distribution-shift robustness,
adversarial robustness, calibration and OOD detection, and combines them into a
weighted holistic reliability (HR) score.
"""

from .errors import HREvalError
from .metrics import ScoreCard, ScoreConfig, score_hr
from .pipeline import EvaluationPlan, evaluate_pool, evaluate_run
from .store import ModelRun, SplitDump, load_run, read_split, write_split

__version__ = "0.1.0"

__all__ = [
    "EvaluationPlan",
    "HREvalError",
    "ModelRun",
    "ScoreCard",
    "ScoreConfig",
    "SplitDump",
    "evaluate_pool",
    "evaluate_run",
    "load_run",
    "read_split",
    "score_hr",
    "write_split",
]
