"""Synthetic Gaussian-blob tasks and a three-run fixture pool.

The fixture mirrors the structure of a real evaluation: ID validation/test
splits, three shifted splits (two mean shifts and a noise "corruption"), two
OOD sources (pure noise and a different blob task), and an adversarial dump.
Features live on a pixel-like scale around 0.5 so that an L-inf budget of
3/255 is meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .runtime import AttackConfig, ToyModel, attack, forward, save_model, train
from .store import subsample_indices, write_features, write_manifest, write_split


@dataclass(frozen=True)
class BlobTask:
    means: np.ndarray  # K x d
    sigma: float

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng, shift=None, extra_noise: float = 0.0):
        y = rng.integers(0, self.num_classes, size=n)
        means = self.means if shift is None else self.means + shift
        x = means[y] + rng.normal(0.0, self.sigma, size=(n, self.dim))
        if extra_noise:
            x = x + rng.normal(0.0, extra_noise, size=x.shape)
        return x, y

    def bayes_model(self) -> ToyModel:
        """Posterior log-odds under equal priors and shared isotropic noise; calibrated on ID data."""
        s2 = self.sigma ** 2
        w = self.means / s2
        b = -0.5 * np.sum(self.means ** 2, axis=1) / s2
        return ToyModel("linear", self.dim, self.num_classes, {"W": w, "b": b})


def make_task(num_classes: int = 3, dim: int = 64, separation: float = 0.03,
              sigma: float = 0.12, seed: int = 0) -> BlobTask:
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(num_classes, dim))
    return BlobTask(0.5 + separation * signs, sigma)


@dataclass(frozen=True)
class FixtureData:
    task: BlobTask
    train: tuple
    splits: dict  # role -> (x, y); OOD labels are -1


def make_data(seed: int = 0, n_train: int = 1500, n_val: int = 1000, n_test: int = 2000,
              n_shift: int = 1000, n_ood: int = 500, **task_kw) -> FixtureData:
    task = make_task(seed=seed, **task_kw)
    rng = np.random.default_rng([seed, 100])
    d = task.dim
    splits = {
        "id_val": task.sample(n_val, rng),
        "id_test": task.sample(n_test, rng),
        "ds_val": task.sample(n_shift, rng, shift=rng.normal(0, 0.03, d)),
        "ds_test": task.sample(n_shift, rng, shift=rng.normal(0, 0.05, d)),
        "ds_c1": task.sample(n_shift, rng, extra_noise=0.08),
    }
    other = make_task(task.num_classes, d, task_kw.get("separation", 0.03), task.sigma,
                      seed=seed + 7919)
    x_other, _ = other.sample(n_ood, rng, shift=np.full(d, 0.1))
    x_noise = rng.normal(0.5, 0.3, size=(n_ood, d))
    splits["ood_noise"] = (x_noise, np.full(n_ood, -1))
    splits["ood_task"] = (x_other, np.full(n_ood, -1))
    train_xy = task.sample(n_train, rng)
    return FixtureData(task, train_xy, splits)


def fixture_models(data: FixtureData, seed: int = 0) -> dict:
    """The three fixture models: ERM MLP, adversarially trained MLP, Bayes-optimal linear."""
    x, y = data.train
    k = data.task.num_classes
    erm = train(x, y, "erm", epochs=150, lr=0.1, seed=seed, kind="mlp", hidden_dim=32,
                num_classes=k).model
    adv_cfg = AttackConfig("pgd", 3 / 255, steps=10, seed=seed)
    adv = train(x, y, "adversarial", adv_cfg, epochs=150, lr=0.1, seed=seed, kind="mlp",
                hidden_dim=32, num_classes=k).model
    return {
        "erm-mlp": ("baseline", erm),
        "adv-mlp": ("adversarial", adv),
        "bayes-linear": ("calibrated", data.task.bayes_model()),
    }


def write_run(directory, model_id: str, group: str, model: ToyModel, data: FixtureData,
              adv_cap: int = 128, adv_seed: int = 0,
              adv_config: AttackConfig = AttackConfig()) -> Path:
    """Dump logits, features, the model and an adversarial split; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_model(directory / "model.json", model)
    entries = []
    for role, (x, y) in data.splits.items():
        write_split(directory / f"{role}.hre", forward(model, x), y)
        write_features(directory / f"{role}.feat", x, y)
        entries.append({"role": role, "path": f"{role}.hre", "features": f"{role}.feat"})
    x, y = data.splits["id_test"]
    idx = subsample_indices(len(y), adv_cap, adv_seed)
    x_adv = attack(model, x[idx], y[idx], adv_config)
    write_split(directory / "adv_id.hre", forward(model, x_adv), y[idx])
    entries.append({"role": "adv_id", "path": "adv_id.hre", "source": "id_test",
                    "indices": [int(i) for i in idx]})
    path = directory / "manifest.json"
    write_manifest(path, model_id, group, model.num_classes, entries, model="model.json")
    return path


def build_fixture(out_dir, seed: int = 0, adversarial: str = "toy_attack") -> Path:
    """Write the three-run fixture pool and an evaluation plan; returns the plan path."""
    out_dir = Path(out_dir)
    data = make_data(seed)
    runs = []
    for model_id, (group, model) in fixture_models(data, seed).items():
        manifest = write_run(out_dir / model_id, model_id, group, model, data)
        runs.append(str(manifest.relative_to(out_dir)))
    write_features(out_dir / "train.feat", *data.train)
    write_features(out_dir / "id_test.feat", *data.splits["id_test"])
    plan = {
        "runs": runs,
        "score": {"weights": [0.2] * 5, "ece_bins": 15, "ece_max": 0.5},
        "detectors": {"enabled": ["max_softmax", "max_logit", "energy", "odin"]},
        "adversarial": adversarial,
        "attack": {"method": "pgd", "epsilon": 3 / 255, "steps": 10},
        "temperature": "fit_and_report_both",
        "seeds": {"subsample_seed": seed, "attack_seed": seed},
    }
    plan_path = out_dir / "plan.json"
    plan_path.write_text(json.dumps(plan, indent=2) + "\n")
    (out_dir / "pool.list").write_text("\n".join(runs) + "\n")
    return plan_path
