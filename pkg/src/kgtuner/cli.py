"""``kgtuner`` command line: train, search, analyze, eval."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .data import KnowledgeGraph, load_kg_dir, write_vocab
from .errors import ConfigValidationError, KGTunerError
from .evaluation import CSV_HEADER, evaluate
from .models import load_state, save_state
from .sampling import METHODS
from .space import (HpConfig, full_space, load_config_file, parse_key_values, sample_config,
                    space_by_name, validate)
from .toy import bundled_toy_kg
from .training.loop import TrainConfig, TrialBudget, train_trial
from .tuner import Budget, SearchSettings, run

logger = logging.getLogger("kgtuner")

OUTPUT_ROOT_ENV = "KGTUNER_OUTPUT_ROOT"
EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _out_dir(args, command: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_data(args) -> KnowledgeGraph:
    if args.toy:
        return bundled_toy_kg()
    if not args.data:
        raise KGTunerError("pass --data DIR (train.txt/valid.txt/test.txt) or --toy")
    return load_kg_dir(args.data)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _add_data_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--data", help="directory with train.txt, valid.txt, test.txt")
    g.add_argument("--toy", action="store_true", help="use the bundled toy dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")


def _add_trial_args(p, epochs: int):
    p.add_argument("--epochs", type=int, default=epochs, help="maximum epochs per trial")
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--patience", type=int, default=5)


def _resolve_train_config(args):
    """HP config from the file, then --set overrides; meta fields from file unless flagged."""
    if args.config:
        hp, meta = load_config_file(args.config)
    else:
        hp, meta = HpConfig(), {}
    if args.set:
        overrides = parse_key_values(args.set)
        hp = hp.replace(**{k: v for k, v in overrides.items() if k in full_space().names})
        meta.update({k: v for k, v in overrides.items() if k not in full_space().names})
    # drop conditional HPs whose parent was overridden away
    for name in ("gamma", "adv_weight", "reg_weight"):
        cond = full_space()[name].condition
        if name in hp and not cond.holds(hp):
            hp = hp.without(name)
    model = args.model or meta.get("model")
    if not model:
        raise KGTunerError("no model given (use --model or a 'model' field in the config file)")
    return hp, model, meta


def cmd_train(args) -> int:
    hp, model, meta = _resolve_train_config(args)
    bad = validate(hp, full_space())
    if bad:
        _emit({"error": "invalid configuration", "violations": [v.to_dict() for v in bad]})
        return EXIT_VALIDATION
    kg = _load_data(args)
    epochs = args.epochs if args.epochs is not None else int(meta.get("epochs", 400))
    tc = TrainConfig.from_hp(model, hp, epochs=epochs, seed=args.seed)
    budget = TrialBudget(eval_every=args.eval_every, patience=args.patience, max_seconds=args.max_seconds)
    res = train_trial(kg, tc, budget, keep_state=True)
    out = _out_dir(args, "train")
    result = {
        "model": tc.model.value,
        "config": hp.to_dict(),
        "seed": args.seed,
        "metric": res.metric,
        "best_epoch": res.best_epoch,
        "epochs_run": res.epochs_run,
        "diverged": res.diverged,
        "truncated": res.truncated,
        "seconds": res.seconds,
    }
    if not res.diverged:
        save_state(res.state, out / "checkpoint.bin")
        write_vocab(kg, out)
        result["valid"] = evaluate(tc.model, res.state, kg, "valid").to_dict()
        if len(kg.test):
            result["test"] = evaluate(tc.model, res.state, kg, "test").to_dict()
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(result)
    return EXIT_OK


def cmd_search(args) -> int:
    kg = _load_data(args)
    budget = Budget.parse(args.budget, args.stage1_fraction)
    settings = SearchSettings(
        model=args.model, seed=args.seed, algo=args.algo, sampler=args.sampler, ratio=args.ratio,
        tau=args.tau, tau_mode=args.tau_mode, n_candidates=args.candidates, epochs=args.epochs,
        eval_every=args.eval_every, patience=args.patience, final_epochs=args.final_epochs,
        workers=args.workers,
    )
    out = Path(args.resume) if args.resume else _out_dir(args, "search")
    report = run(kg, settings, budget, out, resume=bool(args.resume), final=not args.no_final)
    _emit({k: report[k] for k in ("best_config", "val_mrr", "test_metrics", "stage1_trials",
                                  "stage2_trials", "subgraph", "budget", "degraded")})
    return EXIT_OK


def cmd_analyze(args) -> int:
    handler = {"sweep": _analyze_sweep, "srcc": _analyze_srcc, "samplers": _analyze_samplers,
               "cost": _analyze_cost}[args.analysis]
    return handler(args)


def _analyze_sweep(args) -> int:
    kg = _load_data(args)
    space = space_by_name(args.space)
    anchors = analysis.gen_anchors(space, args.hp, args.anchors, args.seed)
    budget = TrialBudget(eval_every=args.eval_every, patience=args.patience)
    result = analysis.sweep(kg, anchors, args.model, args.epochs, args.seed, budget, args.workers)
    out = _out_dir(args, "analyze")
    path = out / f"sweep_{args.hp}.csv"
    analysis.write_sweep_csv(result, path)
    _emit({"hp": args.hp, "anchors": len(anchors), "values": list(anchors.values), "csv": str(path)})
    return EXIT_OK


def _analyze_srcc(args) -> int:
    result = analysis.read_sweep_csv(args.sweep, args.hp or Path(args.sweep).stem)
    out = _out_dir(args, "analyze")
    mat = analysis.srcc_matrix(result, args.textbook)
    with open(out / "srcc.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value_a", "value_b", "srcc"])
        for i, a in enumerate(result.values):
            for j, b in enumerate(result.values):
                if i < j:
                    w.writerow([a, b, repr(float(mat[i, j]))])
    hist = analysis.ranking_distribution(result)
    with open(out / "ranking.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value"] + [f"rank{r + 1}" for r in range(len(result.values))])
        for v, row in zip(result.values, hist):
            w.writerow([v] + [repr(float(x)) for x in row])
    _emit({"consistency": analysis.consistency(result, args.textbook), "values": list(result.values),
           "srcc_csv": str(out / "srcc.csv"), "ranking_csv": str(out / "ranking.csv")})
    return EXIT_OK


def _analyze_samplers(args) -> int:
    kg = _load_data(args)
    rng = np.random.default_rng(args.seed)
    space = space_by_name(args.space)
    probes = [sample_config(space, rng) for _ in range(args.probes)]
    budget = TrialBudget(eval_every=args.eval_every, patience=args.patience)
    result = analysis.compare_samplers(kg, args.model, probes, args.ratio, args.methods, args.seed,
                                       args.epochs, budget, args.textbook)
    out = _out_dir(args, "analyze")
    with open(out / "samplers.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "ratio", "srcc"])
        for method, entry in result["methods"].items():
            w.writerow([method, args.ratio, repr(entry["srcc"])])
    result["probes"] = [p.to_dict() for p in probes]
    (out / "samplers.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({m: e["srcc"] for m, e in result["methods"].items()})
    return EXIT_OK


def _analyze_cost(args) -> int:
    result = analysis.read_sweep_csv(args.sweep, args.hp or Path(args.sweep).stem)
    summary = analysis.cost_summary(result)
    out = _out_dir(args, "analyze")
    with open(out / "cost.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "mean_cost_per_kilo_iter", "std"])
        for v, s in summary.items():
            w.writerow([v, repr(s["mean"]), repr(s["std"])])
    _emit(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    kg = _load_data(args)
    state = load_state(args.checkpoint)
    result = evaluate(state.kind, state, kg, args.split)
    out = result.to_dict()
    out["csv"] = CSV_HEADER + "\n" + result.csv_row()
    _emit(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgtuner", description="Hyperparameter search for KG embeddings.")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _add_data_args(p)
    p.add_argument("--config", help="JSON or key=value HP file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.add_argument("--model")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--max-seconds", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="run the two-stage search")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--budget", default="trials:20", help="trials:N or seconds:S")
    p.add_argument("--stage1-fraction", type=float, default=0.5)
    p.add_argument("--algo", choices=("kgtuner", "random"), default="kgtuner")
    p.add_argument("--sampler", choices=METHODS, default="multi_rw")
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--tau-mode", choices=("quantile", "absolute"), default="quantile")
    p.add_argument("--candidates", type=int, default=512)
    _add_trial_args(p, 400)
    p.add_argument("--final-epochs", type=int, default=None)
    p.add_argument("--no-final", action="store_true", help="skip retraining the best config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", metavar="DIR", help="continue a checkpointed search")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("analyze", help="control-variate and sampler studies")
    asub = p.add_subparsers(dest="analysis", required=True)
    a = asub.add_parser("sweep")
    _add_data_args(a)
    a.add_argument("--model", required=True)
    a.add_argument("--hp", required=True)
    a.add_argument("--anchors", type=int, default=analysis.DEFAULT_ANCHORS)
    a.add_argument("--space", default="full")
    a.add_argument("--workers", type=int, default=1)
    _add_trial_args(a, 50)
    for name in ("srcc", "cost"):
        a = asub.add_parser(name)
        a.add_argument("--sweep", required=True, help="sweep CSV")
        a.add_argument("--hp")
        a.add_argument("--out")
        a.add_argument("--textbook", action="store_true", help="use Spearman's factor 6")
    a = asub.add_parser("samplers")
    _add_data_args(a)
    a.add_argument("--model", required=True)
    a.add_argument("--ratio", type=float, default=0.2)
    a.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    a.add_argument("--probes", type=int, default=10)
    a.add_argument("--space", default="decoupled")
    a.add_argument("--textbook", action="store_true")
    _add_trial_args(a, 50)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        _emit({"error": "invalid configuration", "violations": exc.violations})
        return EXIT_VALIDATION
    except (KGTunerError, ValueError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
