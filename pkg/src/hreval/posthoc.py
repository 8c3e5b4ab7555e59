"""Post-training interventions: temperature scaling and weighted logit ensembles."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptySplit, PoolTooSmall, ShapeMismatch, UnlabeledData
from .metrics import log_softmax, nll
from .store import ModelRun, SplitDump

T_MIN = 1e-3
T_MAX = 1e3
_INV_PHI = (math.sqrt(5) - 1) / 2


@dataclass
class TemperatureScaler:
    T: float
    val_nll_before: float
    val_nll_after: float

    def apply(self, logits):
        return apply_temperature(logits, self.T)

    def to_dict(self):
        return asdict(self)


def _check_labeled(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    if labels.size == 0:
        raise EmptySplit("empty validation split")
    if np.any(labels < 0):
        raise UnlabeledData("validation split has unlabeled rows")
    return logits, labels


def golden_section(f, lo: float, hi: float, tol: float = 1e-6) -> float:
    """Minimizer of a unimodal ``f`` on ``[lo, hi]`` to absolute tolerance ``tol``."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (a + b) / 2


def fit_temperature(val_logits, val_labels, t_min: float = T_MIN, t_max: float = T_MAX,
                    tol: float = 1e-6) -> TemperatureScaler:
    """Temperature minimizing the validation NLL, searched on log T."""
    z, y = _check_labeled(val_logits, val_labels)
    rows = np.arange(y.size)

    def objective(log_t):
        return float(-np.mean(log_softmax(z, math.exp(log_t))[rows, y]))

    log_t = golden_section(objective, math.log(t_min), math.log(t_max), tol)
    before = objective(0.0)
    # The endpoints and T=1 are cheap extra candidates; keeps the result no worse than either.
    best_log_t, best = log_t, objective(log_t)
    for cand in (math.log(t_min), math.log(t_max), 0.0):
        val = objective(cand)
        if val < best:
            best_log_t, best = cand, val
    t = min(max(math.exp(best_log_t), t_min), t_max)
    return TemperatureScaler(T=t, val_nll_before=before, val_nll_after=objective(math.log(t)))


def apply_temperature(logits, T: float) -> np.ndarray:
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return np.asarray(logits, dtype=np.float64) / T


def _stack(member_logits) -> np.ndarray:
    members = [np.asarray(m, dtype=np.float64) for m in member_logits]
    if not members:
        raise ShapeMismatch("no ensemble members")
    shape = members[0].shape
    if len(shape) != 2 or any(m.shape != shape for m in members):
        raise ShapeMismatch(f"member shapes differ: {[m.shape for m in members]}")
    return np.stack(members)


def ensemble_logits(member_logits, weights) -> np.ndarray:
    z = _stack(member_logits)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (z.shape[0],):
        raise ShapeMismatch(f"{z.shape[0]} members but {w.size} weights")
    return np.tensordot(w, z, axes=1)


def ensemble_loss(member_logits, labels, weights) -> float:
    return nll(ensemble_logits(member_logits, weights), labels)


def _loss_and_grad(z, y, w):
    combined = np.tensordot(w, z, axes=1)
    lp = log_softmax(combined)
    rows = np.arange(y.size)
    loss = -lp[rows, y].mean()
    resid = np.exp(lp)
    resid[rows, y] -= 1.0
    grad = np.einsum("jnk,nk->j", z, resid) / y.size
    return float(loss), grad


def fit_ensemble_weights(member_val_logits, val_labels, max_iter: int = 500,
                         tol: float = 1e-6, initial_step: float = 1.0) -> np.ndarray:
    """Unconstrained member weights minimizing validation cross-entropy.

    Gradient descent from ``1/k`` with a halving backtrack whenever a step fails to
    decrease the loss; after an accepted step the trial step doubles again.
    """
    z = _stack(member_val_logits)
    _, y = _check_labeled(z[0], val_labels)
    k = z.shape[0]
    w = np.full(k, 1.0 / k)
    loss, grad = _loss_and_grad(z, y, w)
    step = initial_step
    for _ in range(max_iter):
        gnorm2 = float(grad @ grad)
        if math.sqrt(gnorm2) < tol:
            break
        while True:
            w_new = w - step * grad
            loss_new, grad_new = _loss_and_grad(z, y, w_new)
            if loss_new <= loss - 1e-4 * step * gnorm2:
                break
            step /= 2
            if step < 1e-30:
                return w
        w, loss, grad = w_new, loss_new, grad_new
        step *= 2
    return w


@dataclass
class EnsembleSpec:
    member_ids: list
    weights: list
    val_loss: float
    trials: list = field(default_factory=list)

    def __post_init__(self):
        if not self.member_ids or len(self.member_ids) != len(self.weights):
            raise ShapeMismatch("member_ids and weights must be non-empty and equal length")
        if not all(math.isfinite(w) for w in self.weights):
            raise ValueError("ensemble weights must be finite")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EnsembleSpec":
        return cls(**json.loads(text))


def sample_subsets(pool_size: int, k: int, trials: int, seed: int) -> list:
    """The member index subsets a seeded search evaluates, in trial order."""
    rng = np.random.default_rng(seed)
    return [sorted(int(i) for i in rng.choice(pool_size, size=k, replace=False))
            for _ in range(trials)]


def _val_members(pool, role):
    labels = pool[0].split(role).labels
    for run in pool[1:]:
        if not np.array_equal(run.split(role).labels, labels):
            raise ShapeMismatch(f"{run.model_id}: {role} labels differ from {pool[0].model_id}")
    return [run.split(role).logits.astype(np.float64) for run in pool], labels


def random_ensemble_search(pool, k: int, trials: int = 50, seed: int = 0,
                           role: str = "id_val") -> EnsembleSpec:
    """Fit weights for ``trials`` random k-subsets; keep the lowest validation loss.

    The pool is ordered by model id first so the result does not depend on the
    order runs were listed in. Ties go to the earliest trial.
    """
    if k < 1 or trials < 1:
        raise ValueError("k and trials must be >= 1")
    pool = sorted(pool, key=lambda r: r.model_id)
    if len(pool) < k:
        raise PoolTooSmall(f"pool of {len(pool)} cannot form ensembles of {k}")
    logits, labels = _val_members(pool, role)
    best = None
    records = []
    for subset in sample_subsets(len(pool), k, trials, seed):
        members = [logits[i] for i in subset]
        w = fit_ensemble_weights(members, labels)
        val = ensemble_loss(members, labels, w)
        ids = [pool[i].model_id for i in subset]
        records.append({"member_ids": ids, "weights": [float(x) for x in w], "val_loss": val})
        if best is None or val < best["val_loss"]:
            best = records[-1]
    return EnsembleSpec(best["member_ids"], best["weights"], best["val_loss"], records)


def ensemble_run(spec: EnsembleSpec, pool, model_id: str | None = None,
                 group: str = "ensemble") -> ModelRun:
    """Logits-only run whose splits combine the members' splits with ``spec.weights``.

    Only roles present in every member with identical labels are kept; ``adv_id``
    is dropped because adversarial inputs are specific to the attacked model.
    """
    by_id = {r.model_id: r for r in pool}
    members = [by_id[m] for m in spec.member_ids]
    roles = set(members[0].splits) - {"adv_id"}
    for m in members[1:]:
        roles &= set(m.splits)
    splits = {}
    for role in sorted(roles):
        labels = members[0].split(role).labels
        if any(not np.array_equal(m.split(role).labels, labels) for m in members):
            continue
        z = ensemble_logits([m.split(role).logits for m in members], spec.weights)
        splits[role] = SplitDump(z, labels, role)
    return ModelRun(
        model_id=model_id or "ens-" + "+".join(spec.member_ids),
        group=group,
        num_classes=members[0].num_classes,
        splits=splits,
    )
