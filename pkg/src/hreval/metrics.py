"""Metric kernels and the five reliability scores.

Scores follow the convention "larger is better". ``score_ds`` and ``score_adv``
are ratios against in-distribution accuracy and are deliberately not clipped, so
the weighted holistic score can exceed 1 in odd cases.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_softmax as _log_softmax
from scipy.stats import rankdata

from .errors import (
    DegeneratePerformance,
    EmptyClass,
    EmptyList,
    EmptySplit,
    UnlabeledData,
    WeightError,
)

SCORE_NAMES = ("s_id", "s_ds", "s_adv", "s_cal", "s_ood")
EQUAL_WEIGHTS = (0.2, 0.2, 0.2, 0.2, 0.2)
DEFAULT_ECE_BINS = 15
DEFAULT_ECE_MAX = 0.5


def _labeled(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"shape mismatch: logits {logits.shape}, labels {labels.shape}")
    if logits.shape[0] == 0:
        raise EmptySplit("no samples")
    if np.any(labels < 0):
        raise UnlabeledData("split contains unlabeled (-1) rows")
    return logits, labels.astype(np.int64)


def predict(logits) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class.
    return np.argmax(np.asarray(logits), axis=1)


def accuracy(logits, labels) -> float:
    logits, labels = _labeled(logits, labels)
    return float(np.mean(predict(logits) == labels))


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax along the last axis (works for a vector or a batch)."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return _log_softmax(np.asarray(logits, dtype=np.float64) / temperature, axis=-1)


def nll(logits, labels, temperature: float = 1.0) -> float:
    """Mean negative log-likelihood of the labels under softmax(z / T)."""
    logits, labels = _labeled(logits, labels)
    lp = log_softmax(logits, temperature)
    return float(-np.mean(lp[np.arange(labels.size), labels]))


def bin_index(confidences, bins: int) -> np.ndarray:
    """Right-closed equal-width bins over [0, 1]; confidence 0 lands in the first bin."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.searchsorted(edges, confidences, side="left") - 1
    return np.clip(idx, 0, bins - 1)


def ece_from_confidences(confidences, correct, bins: int = DEFAULT_ECE_BINS) -> float:
    conf = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if conf.size == 0:
        raise EmptySplit("no samples")
    idx = bin_index(conf, bins)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    filled = counts > 0
    gaps = np.abs(acc_sum[filled] - conf_sum[filled]) / counts[filled]
    return float(np.sum(counts[filled] / conf.size * gaps))


def ece(logits, labels, bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error (L1, equal-width bins) of the top-1 softmax confidence."""
    logits, labels = _labeled(logits, labels)
    probs = softmax(logits)
    conf = probs.max(axis=1)
    correct = predict(logits) == labels
    return ece_from_confidences(conf, correct, bins)


def auroc(id_scores, ood_scores) -> float:
    """AUROC with in-distribution as the positive class (mid-ranks for ties)."""
    pos = np.asarray(id_scores, dtype=np.float64).ravel()
    neg = np.asarray(ood_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise EmptyClass("AUROC needs both ID and OOD samples")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    n1, n2 = pos.size, neg.size
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


def score_id(p_id: float, rescale=None) -> float:
    if rescale is None:
        return float(p_id)
    lo, hi = rescale
    return float(min(max((p_id - lo) / (hi - lo), 0.0), 1.0))


def score_ds(p_id: float, p_shifts) -> float:
    if p_id <= 0:
        raise DegeneratePerformance("in-distribution accuracy is 0")
    p_shifts = list(p_shifts)
    if not p_shifts:
        raise EmptyList("need at least one shifted split")
    return sum(p / p_id for p in p_shifts) / len(p_shifts)


def score_adv(p_adv: float, p_id: float) -> float:
    if p_id <= 0:
        raise DegeneratePerformance("in-distribution accuracy is 0")
    return p_adv / p_id


def score_cal(ece_id: float, ece_shifts, ece_max: float = DEFAULT_ECE_MAX) -> float:
    if not ece_max > 0:
        raise ValueError("ece_max must be positive")
    values = [ece_id, *ece_shifts]
    for v in values:
        if v < 0 or v > ece_max:
            raise ValueError(f"ECE {v} outside [0, {ece_max}]")
    return 1.0 - sum(values) / (len(values) * ece_max)


def score_ood(aurocs) -> float:
    aurocs = list(aurocs)
    if not aurocs:
        raise EmptyList("no detector AUROCs")
    return sum(aurocs) / len(aurocs)


def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise WeightError(f"weights must be nonnegative and sum to 1, got {list(w)}")
    return w


def score_hr(scores, weights=EQUAL_WEIGHTS) -> float:
    w = check_weights(weights)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != w.shape:
        raise WeightError(f"{s.size} scores vs {w.size} weights")
    return float(np.dot(w, s))


@dataclass
class ScoreConfig:
    weights: tuple = EQUAL_WEIGHTS
    ece_bins: int = DEFAULT_ECE_BINS
    ece_max: float = DEFAULT_ECE_MAX
    id_rescale: tuple | None = None

    def __post_init__(self):
        self.weights = tuple(float(x) for x in check_weights(self.weights))
        if len(self.weights) != 5:
            raise WeightError("need exactly five weights")
        if not self.ece_max > 0:
            raise ValueError("ece_max must be positive")
        if self.ece_bins < 1:
            raise ValueError("ece_bins must be >= 1")
        if self.id_rescale is not None:
            lo, hi = self.id_rescale
            if not 0 <= lo < hi <= 1:
                raise ValueError(f"bad id_rescale {self.id_rescale}")
            self.id_rescale = (float(lo), float(hi))


@dataclass
class SplitEvaluation:
    performance: float
    ece: float
    n_evaluated: int


def evaluate_split(logits, labels, bins: int = DEFAULT_ECE_BINS) -> SplitEvaluation:
    return SplitEvaluation(accuracy(logits, labels), ece(logits, labels, bins), len(labels))


@dataclass
class ScoreCard:
    model_id: str
    group: str
    s_id: float
    s_ds: float
    s_adv: float | None
    s_cal: float
    s_ood: float
    s_hr: float
    weights: tuple
    weights_used: tuple
    p_id: float = float("nan")
    p_adv: float | None = None
    p_adv_reference: float | None = None
    ece_id: float = float("nan")
    per_shift_performance: dict = field(default_factory=dict)
    per_shift_ece: dict = field(default_factory=dict)
    per_detector_auroc: dict = field(default_factory=dict)
    temperature: float | None = None
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def scores(self) -> list:
        return [self.s_id, self.s_ds, self.s_adv, self.s_cal, self.s_ood]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        d["weights_used"] = list(self.weights_used)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreCard":
        d = dict(d)
        d["weights"] = tuple(d["weights"])
        d["weights_used"] = tuple(d["weights_used"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def assemble_scores(s_id, s_ds, s_adv, s_cal, s_ood, weights):
    """Return ``(s_hr, weights_used)``.

    A missing adversarial score (``None``) drops that term and renormalizes the
    remaining weights instead of imputing a value.
    """
    w = check_weights(weights)
    s = [s_id, s_ds, s_adv, s_cal, s_ood]
    if s_adv is None:
        keep = np.array([True, True, False, True, True])
        total = w[keep].sum()
        if total <= 0:
            raise WeightError("all remaining weights are zero")
        used = np.where(keep, w / total, 0.0)
        s[2] = 0.0
    else:
        used = w
    return float(np.dot(used, np.asarray(s, dtype=np.float64))), tuple(float(x) for x in used)
