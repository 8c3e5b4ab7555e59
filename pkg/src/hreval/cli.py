"""Command-line entry point: ``hreval <subcommand> ...``.

Exit status is 0 on success, 1 for bad input (including usage errors) and 2 for
unexpected internal failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import analysis, posthoc, runtime
from .errors import HREvalError
from .pipeline import EvaluationPlan, evaluate_pool, evaluate_run
from .store import load_run, read_features, save_run

log = logging.getLogger("hreval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_json(path, doc) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_score(args) -> int:
    plan = EvaluationPlan.from_file(args.plan)
    result = evaluate_pool(plan, jobs=args.jobs)
    result.write(args.out)
    for f in result.failures:
        print(f"failed: {f['run']}: {f['error']}: {f['message']}", file=sys.stderr)
    print(f"scored {len(result.table)} run(s), {len(result.failures)} failure(s) -> {args.out}")
    return 0 if len(result.table) or not plan.runs else 1


def cmd_calibrate(args) -> int:
    run = load_run(args.run)
    plan = EvaluationPlan.from_file(args.plan) if args.plan else EvaluationPlan()
    plan.temperature = "fit_and_report_both"
    ev = evaluate_run(run, plan)
    _write_json(args.out, ev.to_dict())
    return 0


def _read_pool(list_path):
    list_path = Path(list_path)
    runs = []
    for line in list_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        runs.append(load_run(p if p.is_absolute() else list_path.parent / p))
    return runs


def cmd_ensemble(args) -> int:
    pool = _read_pool(args.pool)
    spec = posthoc.random_ensemble_search(pool, args.k, args.trials, args.seed)
    _write_json(args.out, json.loads(spec.to_json()))
    if args.emit_run:
        run = posthoc.ensemble_run(spec, pool)
        save_run(run, args.emit_run)
    print(f"best of {args.trials}: {spec.member_ids} val_loss={spec.val_loss:.6f}")
    return 0


def _attack_config(args, seed):
    return runtime.AttackConfig(method=args.method, epsilon=args.eps, steps=args.steps,
                                step_size=args.step_size, random_start=not args.no_random_start,
                                seed=seed)


def cmd_attack(args) -> int:
    model = runtime.load_model(args.model)
    x, y = read_features(args.data)
    cfg = _attack_config(args, args.seed)
    clean, adv = runtime.evaluate_adversarial(model, x, y, cfg, cap=args.cap, seed=args.seed)
    report = {
        "method": cfg.method, "epsilon": cfg.epsilon, "steps": cfg.steps,
        "step_size": cfg.alpha, "random_start": cfg.random_start, "seed": args.seed,
        "n_evaluated": int(min(len(y), args.cap)),
        "clean_accuracy": clean, "adversarial_accuracy": adv,
        "s_adv": adv / clean if clean > 0 else None,
    }
    _write_json(args.out, report)
    return 0


def cmd_train_toy(args) -> int:
    x, y = read_features(args.data)
    cfg = _attack_config(args, args.seed) if args.mode == "adversarial" else None
    result = runtime.train(x, y, args.mode, cfg, epochs=args.epochs, lr=args.lr, seed=args.seed,
                           kind=args.kind, hidden_dim=args.hidden, batch_size=args.batch_size)
    runtime.save_model(args.out, result.model)
    print(f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; model -> {args.out}")
    return 0


def cmd_correlate(args) -> int:
    table = analysis.MetricTable.read_csv(args.metrics)
    r, r2 = analysis.correlation_matrix(table, centered=args.center_by == "group")
    analysis.write_correlations(args.out, r, r2)
    undefined = int(np.isnan(r).sum())
    print(f"{len(table)} rows, {undefined} undefined entr{'y' if undefined == 1 else 'ies'} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    tables = [analysis.MetricTable.read_csv(p) for p in args.metrics]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path, table in zip(args.metrics, tables):
        for group, delta in analysis.hr_improvement(table, args.baseline).items():
            rows.append({"table": str(path), "group": group, "hr_improvement": delta})
    if len(tables) > 1:
        for group, delta in analysis.average_hr_improvement(tables, args.baseline).items():
            rows.append({"table": "average", "group": group, "hr_improvement": delta})
    analysis.write_dict_rows(out / "hr_improvement.csv", rows, ["table", "group", "hr_improvement"])
    hist = []
    for path, table in zip(args.metrics, tables):
        hist += [{"table": str(path), **row} for row in analysis.score_histograms(table, args.bins)]
    analysis.write_dict_rows(out / "score_histograms.csv", hist,
                             ["table", "metric", "group", "bin_lo", "bin_hi", "count"])
    print(f"report -> {out}")
    return 0


def cmd_make_fixture(args) -> int:
    from .synthetic import build_fixture

    plan = build_fixture(args.out, seed=args.seed, adversarial=args.adversarial)
    print(f"fixture plan -> {plan}")
    return 0


def _add_attack_flags(p, eps_default="3/255"):
    p.add_argument("--method", choices=("pgd", "fgsm"), default="pgd")
    p.add_argument("--eps", default=eps_default, help="L-inf budget, e.g. 3/255 or 0.0118")
    p.add_argument("--steps", type=int, default=runtime.DEFAULT_PGD_STEPS)
    p.add_argument("--step-size", type=float, default=None, help="default: eps/4")
    p.add_argument("--no-random-start", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hreval", description="Holistic reliability evaluation of classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("score", help="score every run in an evaluation plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("calibrate", help="fit a temperature and emit both score cards")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan", default=None, help="optional plan supplying score/detector settings")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ensemble", help="best-of-N random weighted logit ensembles")
    p.add_argument("--pool", required=True, help="file listing one manifest path per line")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-run", default=None, help="also write the ensembled run here")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("attack", help="clean vs adversarial accuracy of a toy model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="raw-feature dump with labels")
    _add_attack_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=128)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train-toy", help="train a linear/MLP toy model")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("erm", "adversarial"), default="erm")
    _add_attack_flags(p)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--kind", choices=("linear", "mlp"), default="mlp")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("correlate", help="Pearson r / R^2 matrix between the five scores")
    p.add_argument("--metrics", required=True)
    p.add_argument("--center-by", choices=("group",), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("report", help="HR improvement over a baseline group and score histograms")
    p.add_argument("--metrics", required=True, action="append",
                   help="metric table; repeat to average improvements across tables")
    p.add_argument("--baseline", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-fixture", help="write the synthetic three-run fixture pool")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adversarial", choices=("toy_attack", "external_dump", "skip"),
                   default="toy_attack")
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (HREvalError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
