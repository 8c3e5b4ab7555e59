"""OOD scoring functions and per-run detection AUROCs.

Every score is oriented so that a higher value means "looks in-distribution";
the energy detector therefore returns the negative free energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyClass, NoGradientOracle
from .metrics import auroc, softmax
from .store import ModelRun, subsample_indices

DETECTORS = ("max_softmax", "max_logit", "energy", "odin")
LOGIT_DETECTORS = ("max_softmax", "max_logit", "energy")


@dataclass(frozen=True)
class DetectorConfig:
    enabled: tuple = DETECTORS
    odin_temperature: float = 1000.0
    odin_epsilon: float = 0.0014
    energy_temperature: float = 1.0
    id_role: str = "id_val"
    per_source_cap: int | None = None
    cap_seed: int = 0

    def __post_init__(self):
        enabled = tuple(self.enabled)
        if not enabled:
            raise ValueError("at least one detector must be enabled")
        unknown = set(enabled) - set(DETECTORS)
        if unknown:
            raise ValueError(f"unknown detectors {sorted(unknown)}")
        if len(set(enabled)) != len(enabled):
            raise ValueError("duplicate detector names")
        object.__setattr__(self, "enabled", enabled)
        if not (self.odin_temperature > 0 and self.energy_temperature > 0):
            raise ValueError("detector temperatures must be positive")
        if self.odin_epsilon < 0:
            raise ValueError("odin_epsilon must be >= 0")


def max_softmax_score(logits) -> np.ndarray | float:
    s = softmax(logits).max(axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def max_logit_score(logits):
    s = np.max(np.asarray(logits, dtype=np.float64), axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def energy_score(logits, temperature: float = 1.0):
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    s = temperature * logsumexp(z / temperature, axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def odin_score(model, inputs, config: DetectorConfig = DetectorConfig()):
    """Temperature-scaled max softmax after a small step against the loss gradient.

    The step direction uses the model's own prediction as the target label.
    """
    if model is None:
        raise NoGradientOracle("ODIN needs a model with input gradients")
    from .runtime import forward, input_gradient

    single = np.ndim(inputs) == 1
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    t = config.odin_temperature
    if config.odin_epsilon > 0:
        pred = np.argmax(forward(model, x), axis=1)
        g = input_gradient(model, x, pred, temperature=t)
        x = x - config.odin_epsilon * np.sign(g)
    s = softmax(forward(model, x), t).max(axis=1)
    return float(s[0]) if single else s


def _logit_scores(name: str, logits, config: DetectorConfig) -> np.ndarray:
    if name == "max_softmax":
        return max_softmax_score(logits)
    if name == "max_logit":
        return max_logit_score(logits)
    return energy_score(logits, config.energy_temperature)


def ood_indices(run: ModelRun, config: DetectorConfig) -> dict:
    """Rows of each OOD split that enter the union (all of them unless capped)."""
    out = {}
    for i, role in enumerate(run.ood_roles):
        n = run.split(role).n
        if config.per_source_cap is None:
            out[role] = np.arange(n)
        else:
            out[role] = subsample_indices(n, config.per_source_cap, config.cap_seed + i)
    return out


def detect(run: ModelRun, config: DetectorConfig = DetectorConfig(), model=None,
           temperature: float = 1.0) -> dict:
    """AUROC per enabled detector, ID split vs the union of all OOD splits.

    ``temperature`` divides every logit first (and rescales ``model``'s output
    layer to match), which is how temperature-scaled cards are scored.
    """
    if run.M == 0:
        raise EmptyClass(f"{run.model_id}: no OOD splits")
    id_split = run.split(config.id_role)
    picks = ood_indices(run, config)
    id_logits = id_split.logits.astype(np.float64) / temperature
    ood_logits = np.concatenate(
        [run.split(r).logits[picks[r]].astype(np.float64) for r in run.ood_roles]
    ) / temperature
    if id_logits.shape[0] == 0 or ood_logits.shape[0] == 0:
        raise EmptyClass("detection needs non-empty ID and OOD sets")

    result = {}
    for name in config.enabled:
        if name == "odin":
            if model is None:
                raise NoGradientOracle(f"{run.model_id}: ODIN requested without a model")
            roles = [config.id_role, *run.ood_roles]
            missing = [r for r in roles if r not in run.features]
            if missing:
                raise NoGradientOracle(f"{run.model_id}: no raw features for {missing}")
            scaled = model if temperature == 1.0 else model.scaled(1.0 / temperature)
            id_s = odin_score(scaled, run.features[config.id_role], config)
            ood_x = np.concatenate([run.features[r][picks[r]] for r in run.ood_roles])
            ood_s = odin_score(scaled, ood_x, config)
        else:
            id_s = _logit_scores(name, id_logits, config)
            ood_s = _logit_scores(name, ood_logits, config)
        result[name] = auroc(id_s, ood_s)
    return result
