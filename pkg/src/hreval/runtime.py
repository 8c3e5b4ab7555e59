"""A tiny numpy classifier runtime: linear and one-hidden-layer ReLU models.

Gradients are written out by hand (reverse mode over two layers). This is enough
to run L-inf attacks, adversarial training and ODIN on desk-scale synthetic data
without an ML framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import EmptySplit, ShapeMismatch
from .metrics import log_softmax, softmax
from .store import subsample_indices

DEFAULT_EPSILON = 3 / 255
DEFAULT_PGD_STEPS = 10


@dataclass(frozen=True)
class ToyModel:
    kind: str
    input_dim: int
    num_classes: int
    params: dict
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        params = {k: np.array(v, dtype=np.float64) for k, v in self.params.items()}
        expected = _param_shapes(self.kind, self.input_dim, self.hidden_dim, self.num_classes)
        if set(params) != set(expected):
            raise ShapeMismatch(f"expected parameters {sorted(expected)}, got {sorted(params)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeMismatch(f"{name}: shape {params[name].shape} != {shape}")
            if not np.all(np.isfinite(params[name])):
                raise ValueError(f"{name} has non-finite entries")
            params[name].flags.writeable = False
        object.__setattr__(self, "params", params)

    def __call__(self, inputs):
        return forward(self, inputs)

    def scaled(self, factor: float) -> "ToyModel":
        """Same model with every output logit multiplied by ``factor``."""
        p = dict(self.params)
        last = "W" if self.kind == "linear" else "W2"
        bias = "b" if self.kind == "linear" else "b2"
        p[last] = p[last] * factor
        p[bias] = p[bias] * factor
        return replace(self, params=p)


def _param_shapes(kind, d, h, k):
    if kind == "linear":
        return {"W": (k, d), "b": (k,)}
    return {"W1": (h, d), "b1": (h,), "W2": (k, h), "b2": (k,)}


def init_model(kind: str, input_dim: int, num_classes: int, hidden_dim: int = 32,
               seed: int = 0, scale: float = 1.0) -> ToyModel:
    rng = np.random.default_rng(seed)
    if kind == "linear":
        params = {
            "W": rng.normal(0, scale / np.sqrt(input_dim), (num_classes, input_dim)),
            "b": np.zeros(num_classes),
        }
        hidden_dim = 0
    else:
        params = {
            "W1": rng.normal(0, scale * np.sqrt(2.0 / input_dim), (hidden_dim, input_dim)),
            "b1": np.zeros(hidden_dim),
            "W2": rng.normal(0, scale / np.sqrt(hidden_dim), (num_classes, hidden_dim)),
            "b2": np.zeros(num_classes),
        }
    return ToyModel(kind, input_dim, num_classes, params, hidden_dim)


def _as_batch(model: ToyModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeMismatch(f"inputs of width {x.shape[-1]} for a model of width {model.input_dim}")
    return x


def _forward_cache(model: ToyModel, x: np.ndarray):
    p = model.params
    if model.kind == "linear":
        return x @ p["W"].T + p["b"], None
    pre = x @ p["W1"].T + p["b1"]
    act = np.maximum(pre, 0.0)
    return act @ p["W2"].T + p["b2"], (pre, act)


def forward(model: ToyModel, inputs) -> np.ndarray:
    """Logits for a batch ``n x d`` (or a single vector, returned as ``1 x K``)."""
    x = _as_batch(model, inputs)
    return _forward_cache(model, x)[0]


def _backward(model, x, y, temperature, need_params: bool):
    """Per-sample cross-entropy of softmax(f(x)/T): losses, d(sum loss)/dx, d(mean loss)/dparams."""
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise ShapeMismatch("labels do not match inputs")
    if y.size and (y.min() < 0 or y.max() >= model.num_classes):
        raise ValueError("label out of range")
    logits, cache = _forward_cache(model, x)
    lp = log_softmax(logits, temperature)
    rows = np.arange(y.size)
    losses = -lp[rows, y]
    dz = np.exp(lp)
    dz[rows, y] -= 1.0
    dz /= temperature
    p = model.params
    grads = {}
    n = max(y.size, 1)
    if model.kind == "linear":
        dx = dz @ p["W"]
        if need_params:
            grads = {"W": dz.T @ x / n, "b": dz.sum(axis=0) / n}
    else:
        pre, act = cache
        dact = dz @ p["W2"]
        dpre = dact * (pre > 0)
        dx = dpre @ p["W1"]
        if need_params:
            grads = {
                "W2": dz.T @ act / n,
                "b2": dz.sum(axis=0) / n,
                "W1": dpre.T @ x / n,
                "b1": dpre.sum(axis=0) / n,
            }
    return losses, dx, grads


def loss(model: ToyModel, inputs, labels, temperature: float = 1.0) -> float:
    x = _as_batch(model, inputs)
    return float(np.mean(_backward(model, x, labels, temperature, False)[0]))


def per_sample_loss(model: ToyModel, inputs, labels, temperature: float = 1.0) -> np.ndarray:
    x = _as_batch(model, inputs)
    return _backward(model, x, labels, temperature, False)[0]


def input_gradient(model: ToyModel, inputs, labels, temperature: float = 1.0) -> np.ndarray:
    """Gradient of each sample's own cross-entropy w.r.t. its input.

    A single vector in gives a single vector out; a batch gives ``n x d``.
    """
    single = np.ndim(inputs) == 1
    x = _as_batch(model, inputs)
    dx = _backward(model, x, labels, temperature, False)[1]
    return dx[0] if single else dx


def parameter_gradients(model: ToyModel, inputs, labels) -> dict:
    """Gradient of the mean cross-entropy over the batch w.r.t. every parameter."""
    x = _as_batch(model, inputs)
    return _backward(model, x, labels, 1.0, True)[2]


def parse_epsilon(text) -> float:
    """Accept ``"3/255"``-style fractions as well as plain numbers."""
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        text = str(text).strip()
        try:
            value = float(Fraction(text))
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot parse epsilon {text!r}") from exc
    if value < 0:
        raise ValueError("epsilon must be >= 0")
    return value


@dataclass(frozen=True)
class AttackConfig:
    method: str = "pgd"
    epsilon: float = DEFAULT_EPSILON
    steps: int = DEFAULT_PGD_STEPS
    step_size: float | None = None  # None -> epsilon / 4
    random_start: bool = True
    seed: int = 0
    clip: tuple | None = None

    def __post_init__(self):
        if self.method not in ("pgd", "fgsm"):
            raise ValueError(f"unknown attack method {self.method!r}")
        object.__setattr__(self, "epsilon", parse_epsilon(self.epsilon))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 4


def _clip_box(x, clip):
    return x if clip is None else np.clip(x, clip[0], clip[1])


def _project(x0, x, eps):
    """Pull ``x`` into the closed eps-ball around ``x0``, exactly in floating point.

    ``x0 + delta`` can round one ulp past the boundary, so offending entries are
    stepped back toward ``x0`` until ``|x - x0| <= eps`` holds as computed.
    """
    x = np.clip(x, x0 - eps, x0 + eps)
    over = np.abs(x - x0) > eps
    while over.any():
        x[over] = np.nextafter(x[over], x0[over])
        over = np.abs(x - x0) > eps
    return x


def fgsm(model: ToyModel, x, y, epsilon: float, clip=None) -> np.ndarray:
    single = np.ndim(x) == 1
    x0 = _as_batch(model, x)
    g = input_gradient(model, x0, np.atleast_1d(y))
    out = _project(x0, _clip_box(x0 + epsilon * np.sign(g), clip), epsilon)
    return out[0] if single else out


def pgd(model: ToyModel, x, y, config: AttackConfig, rng=None) -> np.ndarray:
    """L-inf projected sign-gradient ascent on the cross-entropy, started at ``x``."""
    single = np.ndim(x) == 1
    x0 = _as_batch(model, x)
    y = np.atleast_1d(y)
    eps = config.epsilon
    if rng is None:
        rng = np.random.default_rng(config.seed)
    delta = np.zeros_like(x0)
    if config.random_start:
        delta = rng.uniform(-eps, eps, size=x0.shape)
    for _ in range(config.steps):
        g = input_gradient(model, _clip_box(x0 + delta, config.clip), y)
        delta = np.clip(delta + config.alpha * np.sign(g), -eps, eps)
    out = _project(x0, _clip_box(x0 + delta, config.clip), eps)
    return out[0] if single else out


def attack(model: ToyModel, x, y, config: AttackConfig, rng=None) -> np.ndarray:
    if config.method == "fgsm":
        return fgsm(model, x, y, config.epsilon, config.clip)
    return pgd(model, x, y, config, rng)


@dataclass
class TrainResult:
    model: ToyModel
    losses: list = field(default_factory=list)


def train(inputs, labels, mode: str = "erm", attack_config: AttackConfig | None = None,
          epochs: int = 100, lr: float = 0.1, seed: int = 0, kind: str = "mlp",
          hidden_dim: int = 32, batch_size: int = 64, model: ToyModel | None = None,
          num_classes: int | None = None) -> TrainResult:
    """Seeded mini-batch gradient descent on cross-entropy.

    ``mode="adversarial"`` replaces each batch by its attacked version (under the
    current parameters) before the update. Attack randomness uses its own stream,
    so an epsilon-0 adversarial run follows the ERM trajectory exactly.
    ``losses`` holds the clean mean training loss before training and after each epoch.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise EmptySplit("no training data")
    if mode not in ("erm", "adversarial"):
        raise ValueError(f"unknown training mode {mode!r}")
    if mode == "adversarial" and attack_config is None:
        attack_config = AttackConfig(seed=seed)
    k = num_classes or int(y.max()) + 1
    if model is None:
        model = init_model(kind, x.shape[1], k, hidden_dim, seed=seed)
    shuffle_rng = np.random.default_rng([seed, 1])
    attack_rng = np.random.default_rng([seed, 2])
    current = model
    losses = [loss(current, x, y)]
    n = x.shape[0]
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = x[idx], y[idx]
            if mode == "adversarial":
                xb = attack(current, xb, yb, attack_config, attack_rng)
            grads = _backward(current, xb, yb, 1.0, True)[2]
            current = replace(current, params={
                name: arr - lr * grads[name] for name, arr in current.params.items()})
        losses.append(loss(current, x, y))
    return TrainResult(current, losses)


def evaluate_adversarial(model: ToyModel, inputs, labels, config: AttackConfig,
                         cap: int = 128, seed: int = 0) -> tuple[float, float]:
    """Clean and adversarial accuracy on the same seeded subset of at most ``cap`` rows."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise EmptySplit("no samples to attack")
    idx = subsample_indices(x.shape[0], cap, seed)
    x, y = x[idx], y[idx]
    clean = np.argmax(forward(model, x), axis=1) == y
    x_adv = attack(model, x, y, config)
    adv = np.argmax(forward(model, x_adv), axis=1) == y
    return float(clean.mean()), float(adv.mean())


def predict_proba(model: ToyModel, inputs, temperature: float = 1.0) -> np.ndarray:
    return softmax(forward(model, inputs), temperature)


def model_to_dict(model: ToyModel) -> dict:
    return {
        "kind": model.kind,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "num_classes": model.num_classes,
        # repr of a python float round-trips exactly
        "params": {name: {"shape": list(a.shape), "values": [float(v) for v in a.ravel()]}
                   for name, a in sorted(model.params.items())},
    }


def model_from_dict(doc: dict) -> ToyModel:
    params = {name: np.array(p["values"], dtype=np.float64).reshape(p["shape"])
              for name, p in doc["params"].items()}
    return ToyModel(doc["kind"], int(doc["input_dim"]), int(doc["num_classes"]), params,
                    int(doc.get("hidden_dim", 0)))


def save_model(path, model: ToyModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> ToyModel:
    return model_from_dict(json.loads(Path(path).read_text()))
