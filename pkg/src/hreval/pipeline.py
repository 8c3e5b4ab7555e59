"""End-to-end scoring of model runs into score cards and a pool metric table."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .analysis import MetricTable
from .detectors import DetectorConfig, detect
from .errors import AdvUnavailable, HREvalError
from .metrics import ScoreCard, ScoreConfig
from .posthoc import TemperatureScaler, apply_temperature, fit_temperature
from .runtime import AttackConfig, evaluate_adversarial
from .store import ModelRun, load_run, subsample

log = logging.getLogger(__name__)

ADV_MODES = ("external_dump", "toy_attack", "skip")
TEMPERATURE_MODES = ("none", "fit_and_report_both")
ID_CAP = 1024
ADV_CAP = 128


@dataclass
class EvaluationPlan:
    runs: list = field(default_factory=list)
    config: ScoreConfig = field(default_factory=ScoreConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    adversarial: str = "external_dump"
    attack: AttackConfig = field(default_factory=AttackConfig)
    temperature: str = "fit_and_report_both"
    subsample_seed: int = 0
    attack_seed: int = 0
    id_cap: int = ID_CAP
    adv_cap: int = ADV_CAP
    id_role: str = "id_test"

    def __post_init__(self):
        if self.adversarial not in ADV_MODES:
            raise ValueError(f"adversarial mode must be one of {ADV_MODES}")
        if self.temperature not in TEMPERATURE_MODES:
            raise ValueError(f"temperature mode must be one of {TEMPERATURE_MODES}")
        self.runs = [Path(p) for p in self.runs]

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "EvaluationPlan":
        doc = dict(doc)
        runs = [p if Path(p).is_absolute() else base / p for p in doc.pop("runs", [])]
        score = doc.pop("score", {})
        if "id_rescale" in score and score["id_rescale"] is not None:
            score["id_rescale"] = tuple(score["id_rescale"])
        det = doc.pop("detectors", {})
        if "enabled" in det:
            det["enabled"] = tuple(det["enabled"])
        attack = dict(doc.pop("attack", {}))
        if attack.get("clip") is not None:
            attack["clip"] = tuple(attack["clip"])
        seeds = doc.pop("seeds", {})
        return cls(runs=runs, config=ScoreConfig(**score), detectors=DetectorConfig(**det),
                   attack=AttackConfig(**attack), **seeds, **doc)

    @classmethod
    def from_file(cls, path) -> "EvaluationPlan":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)


@dataclass
class RunEvaluation:
    card: ScoreCard
    calibrated: ScoreCard | None = None
    scaler: TemperatureScaler | None = None

    @property
    def headline(self) -> ScoreCard:
        return self.calibrated if self.calibrated is not None else self.card

    def to_dict(self) -> dict:
        doc = {"model_id": self.card.model_id, "group": self.card.group,
               "cards": {"raw": self.card.to_dict()}}
        if self.calibrated is not None:
            doc["cards"]["temperature_scaled"] = self.calibrated.to_dict()
            doc["temperature"] = self.scaler.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunEvaluation":
        cards = doc["cards"]
        cal = cards.get("temperature_scaled")
        scaler = TemperatureScaler(**doc["temperature"]) if "temperature" in doc else None
        return cls(ScoreCard.from_dict(cards["raw"]),
                   ScoreCard.from_dict(cal) if cal is not None else None, scaler)


def _adversarial(run, plan, model, p_id, scale):
    """Return ``(p_adv, reference_accuracy)``; raises AdvUnavailable when it cannot be measured."""
    if plan.adversarial == "skip":
        raise AdvUnavailable("adversarial evaluation skipped by plan")
    if plan.adversarial == "external_dump":
        if not run.has_adv:
            raise AdvUnavailable(f"{run.model_id}: no adv_id split")
        adv = subsample(run.split("adv_id"), plan.adv_cap, plan.subsample_seed)
        return metrics.accuracy(adv.logits, adv.labels), p_id
    if model is None or plan.id_role not in run.features:
        raise AdvUnavailable(f"{run.model_id}: toy attack needs a model and raw {plan.id_role} features")
    x = run.features[plan.id_role]
    y = run.split(plan.id_role).labels
    target = model if scale == 1.0 else model.scaled(1.0 / scale)
    attack = replace(plan.attack, seed=plan.attack_seed)
    clean, adv = evaluate_adversarial(target, x, y, attack, plan.adv_cap, plan.subsample_seed)
    return adv, clean


def _detectors_for(run, plan, model) -> tuple[DetectorConfig, list]:
    flags = []
    enabled = list(plan.detectors.enabled)
    if "odin" in enabled:
        roles = [plan.detectors.id_role, *run.ood_roles]
        if model is None or any(r not in run.features for r in roles):
            enabled.remove("odin")
            flags.append("odin_unavailable")
    if not enabled:
        raise HREvalError(f"{run.model_id}: no usable OOD detector")
    return replace(plan.detectors, enabled=tuple(enabled)), flags


def _card(run, plan, model, temperature, base: ScoreCard | None = None) -> ScoreCard:
    cfg = plan.config
    scale = 1.0 if temperature is None else temperature
    flags = []

    id_split = subsample(run.split(plan.id_role), plan.id_cap, plan.subsample_seed)
    id_logits = id_split.logits.astype(np.float64)
    if base is None:
        p_id = metrics.accuracy(id_logits, id_split.labels)
        per_shift_p = {r: metrics.accuracy(run.split(r).logits, run.split(r).labels)
                       for r in run.ds_roles}
        s_id = metrics.score_id(p_id, cfg.id_rescale)
        s_ds = metrics.score_ds(p_id, list(per_shift_p.values()))
    else:
        # argmax is invariant to a positive temperature, so these carry over exactly
        p_id, per_shift_p, s_id, s_ds = base.p_id, base.per_shift_performance, base.s_id, base.s_ds

    def scaled(z):
        return z if temperature is None else apply_temperature(z, temperature)

    ece_id = metrics.ece(scaled(id_logits), id_split.labels, cfg.ece_bins)
    per_shift_ece = {r: metrics.ece(scaled(run.split(r).logits.astype(np.float64)),
                                    run.split(r).labels, cfg.ece_bins)
                     for r in run.ds_roles}
    s_cal = metrics.score_cal(ece_id, list(per_shift_ece.values()), cfg.ece_max)

    det_cfg, det_flags = _detectors_for(run, plan, model)
    flags += det_flags
    aurocs = detect(run, det_cfg, model, scale)
    s_ood = metrics.score_ood(aurocs.values())

    p_adv = p_ref = s_adv = None
    if base is not None and plan.adversarial == "external_dump":
        p_adv, p_ref, s_adv = base.p_adv, base.p_adv_reference, base.s_adv
        if s_adv is None:
            flags.append("adv_unavailable")
    else:
        try:
            p_adv, p_ref = _adversarial(run, plan, model, p_id, scale)
            s_adv = metrics.score_adv(p_adv, p_ref)
        except AdvUnavailable as exc:
            log.info("%s", exc)
            flags.append("adv_unavailable")
    if s_adv is None:
        flags.append("weights_renormalized")

    s_hr, used = metrics.assemble_scores(s_id, s_ds, s_adv, s_cal, s_ood, cfg.weights)
    return ScoreCard(
        model_id=run.model_id, group=run.group,
        s_id=s_id, s_ds=s_ds, s_adv=s_adv, s_cal=s_cal, s_ood=s_ood, s_hr=s_hr,
        weights=cfg.weights, weights_used=used,
        p_id=p_id, p_adv=p_adv, p_adv_reference=p_ref, ece_id=ece_id,
        per_shift_performance=dict(per_shift_p), per_shift_ece=per_shift_ece,
        per_detector_auroc=aurocs, temperature=temperature, flags=flags,
        meta={
            "ece_bins": cfg.ece_bins,
            "ece_binning": "equal-width, right-closed, L1",
            "ece_max": cfg.ece_max,
            "id_role": plan.id_role,
            "id_n": id_split.n,
            "id_rescale": list(cfg.id_rescale) if cfg.id_rescale else None,
            "num_shifts": run.N,
            "num_ood_sources": run.M,
            "detectors_run": list(aurocs),
            "adversarial_mode": plan.adversarial,
            "adversarial_epsilon": plan.attack.epsilon if plan.adversarial == "toy_attack" else None,
        },
    )


def evaluate_run(run: ModelRun, plan: EvaluationPlan, model=None) -> RunEvaluation:
    """Score one run; with temperature fitting on, also return the rescaled card.

    ``model`` defaults to the toy model referenced by the run manifest (if any).
    """
    if model is None:
        model = run.load_model()
    card = _card(run, plan, model, None)
    if plan.temperature == "none":
        return RunEvaluation(card)
    val = run.split("id_val")
    scaler = fit_temperature(val.logits, val.labels)
    calibrated = _card(run, plan, model, scaler.T, base=card)
    return RunEvaluation(card, calibrated, scaler)


@dataclass
class PoolResult:
    table: MetricTable
    evaluations: dict
    failures: list

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for mid, ev in self.evaluations.items():
            (out / f"{mid}.scorecard").write_text(json.dumps(ev.to_dict(), indent=2, sort_keys=True) + "\n")
        self.table.write_csv(out / "pool.metrics")
        (out / "pool.failures").write_text(json.dumps(self.failures, indent=2) + "\n")


def read_scorecard(path) -> RunEvaluation:
    return RunEvaluation.from_dict(json.loads(Path(path).read_text()))


def _evaluate_path(path, plan):
    try:
        run = load_run(path)
        return run.model_id, evaluate_run(run, plan), None
    except (HREvalError, ValueError, OSError) as exc:
        return None, None, {"run": str(path), "error": type(exc).__name__, "message": str(exc)}


def evaluate_pool(plan: EvaluationPlan, jobs: int = 1) -> PoolResult:
    """Score every run in the plan; failures are recorded instead of aborting the pool."""
    paths = sorted(plan.runs, key=str)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(lambda p: _evaluate_path(p, plan), paths))
    else:
        results = [_evaluate_path(p, plan) for p in paths]
    evaluations, failures = {}, []
    for path, (mid, ev, err) in zip(paths, results):
        if err is not None:
            failures.append(err)
        elif mid in evaluations:
            failures.append({"run": str(path), "error": "DuplicateModelId", "message": mid})
        else:
            evaluations[mid] = ev
    evaluations = dict(sorted(evaluations.items()))
    table = MetricTable.from_cards([ev.headline for ev in evaluations.values()])
    return PoolResult(table, evaluations, failures)

