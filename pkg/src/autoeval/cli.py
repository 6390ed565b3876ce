"""Command-line front end: gen, extract, train, predict, baseline, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .baselines import BaselineConfig
from .data import DataError, load_corpus, manifest_accuracies, save_corpus
from .metaset import CorpusConfig, generate_corpus, load_corpus_config
from .regressor import ModelConfig, ModelFormatError, TrainConfig, load_model, predict_many, save_model, train
from .representation import GroupConfig, load_representations, save_representations

log = logging.getLogger("autoeval")

DEFAULT_SEED = 42


class CLIError(Exception):
    pass


def _echo(command: str, config: dict) -> None:
    print(json.dumps({"command": command, "config": config}, sort_keys=True), file=sys.stderr)


def _sidecar(path) -> Path:
    return Path(str(path) + ".meta.json")


def _write_sidecar(path, doc: dict) -> None:
    _sidecar(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen(args) -> None:
    overrides = dict(num_sets=args.num_sets, num_instances=args.num_instances,
                     num_categories=args.num_categories, seed=args.seed, id_prefix=args.id_prefix)
    if args.config:
        cfg = load_corpus_config(args.config, **overrides)
    else:
        kw = {k: v for k, v in overrides.items() if v is not None}
        kw.setdefault("seed", DEFAULT_SEED)
        cfg = CorpusConfig(**kw)
    _echo("gen", cfg.to_dict())
    manifest = save_corpus(generate_corpus(cfg), args.out)
    print(f"wrote {cfg.num_sets} meta-sets to {manifest}")


def _group_config(args) -> GroupConfig:
    groups = tuple(g.strip() for g in args.groups.split(",") if g.strip())
    kw = {"mode": args.mode, "groups": groups}
    if args.t_low is not None:
        kw["t_low"] = args.t_low
    if args.t_high is not None:
        kw["t_high"] = args.t_high
    return GroupConfig(**kw)


def cmd_extract(args) -> None:
    gcfg = _group_config(args)
    _echo("extract", {"data": str(args.data), "groups": gcfg.to_dict(), "seed": args.seed})
    corpus = sorted(load_corpus(args.data), key=lambda m: m.id)
    reps = harness.extract_all(corpus, gcfg)
    save_representations(args.out, [m.id for m in corpus], reps, gcfg)
    print(f"wrote {len(reps)} representations to {args.out}")


def cmd_train(args) -> None:
    ids, reps, gcfg = load_representations(args.reps)
    accs = manifest_accuracies(args.manifest)
    missing = [i for i in ids if i not in accs]
    if missing:
        raise CLIError(f"{len(missing)} representation ids lack manifest accuracies (first: {missing[0]!r})")
    ablate = set(args.ablate or ())
    mcfg = ModelConfig(reps[0].num_categories, gcfg.groups, use_mean="mean" not in ablate,
                       use_cov="cov" not in ablate, use_var="var" not in ablate, category_weight=args.lam)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    tcfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=seed)
    _echo("train", {"model": mcfg.to_dict(), "train": vars(tcfg), "groups": gcfg.to_dict()})
    model, trace = train(list(zip(reps, [accs[i] for i in ids])), tcfg, mcfg)
    save_model(model, args.model_out)
    trace_out = args.trace_out or str(args.model_out) + ".loss.csv"
    with open(trace_out, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for e, v in enumerate(trace):
            fh.write(f"{e},{v!r}\n")
    print(f"final loss {trace[-1]:.6g}; model written to {args.model_out}")


def cmd_predict(args) -> None:
    model = load_model(args.model)
    ids, reps, gcfg = load_representations(args.reps)
    if gcfg.groups != model.config.groups:
        raise CLIError(f"representations use groups {gcfg.groups}, model expects {model.config.groups}")
    _echo("predict", {"model": str(args.model), "reps": str(args.reps), "seed": args.seed})
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    ids = [ids[i] for i in order]
    preds = predict_many(model, [reps[i] for i in order])
    harness.write_predictions(args.out, ids, preds)
    _write_sidecar(args.out, {"source": "model", "model_config": model.config.to_dict(), "groups": gcfg.to_dict()})
    print(f"wrote {len(ids)} predictions to {args.out}")


def cmd_baseline(args) -> None:
    bcfg = BaselineConfig(args.method, tau1=args.tau1, tau2=args.tau2)
    _echo("baseline", {"method": bcfg.method, "tau1": bcfg.tau1, "tau2": bcfg.tau2, "seed": args.seed})
    corpus = sorted(load_corpus(args.data), key=lambda m: m.id)
    harness.write_predictions(args.out, [m.id for m in corpus], harness.baseline_predictions(corpus, bcfg))
    _write_sidecar(args.out, {"source": "baseline", "baseline": {"method": bcfg.method, "label": bcfg.label,
                                                                  "tau1": bcfg.tau1, "tau2": bcfg.tau2}})
    print(f"wrote {len(corpus)} {bcfg.label} predictions to {args.out}")


def _aligned(pred_path, truths: dict):
    ids, preds = harness.read_predictions(pred_path)
    if len(ids) != len(truths):
        raise CLIError(f"{pred_path}: {len(ids)} predictions but manifest lists {len(truths)} meta-sets")
    unknown = [i for i in ids if i not in truths]
    if unknown:
        raise CLIError(f"{pred_path}: prediction id {unknown[0]!r} not in manifest")
    return ids, preds, [truths[i] for i in ids]


def _sidecar_doc(path) -> dict:
    p = _sidecar(path)
    return json.loads(p.read_text(encoding="utf-8")) if p.exists() else {}


def cmd_eval(args) -> None:
    truths = manifest_accuracies(args.manifest)
    ids, preds, gt = _aligned(args.pred, truths)
    report = harness.evaluate(preds, gt, ids)
    report.config = _sidecar_doc(args.pred)
    if "model_config" in report.config:
        mc = report.config["model_config"]
        report.config.update({k: mc[k] for k in ("use_mean", "use_cov", "use_var")})
    report.config["seed"] = args.seed
    for bp in args.baseline_pred or ():
        b_ids, b_preds, b_gt = _aligned(bp, truths)
        r = harness.evaluate(b_preds, b_gt, b_ids)
        label = _sidecar_doc(bp).get("baseline", {}).get("label", Path(bp).stem)
        report.baselines.append({"method": label, "overall_rmse_pct": r.overall_rmse_pct,
                                 "category_rmse_pct": r.category_rmse_pct})
    _echo("eval", {"pred": str(args.pred), "manifest": str(args.manifest), "config": report.config})
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(report.table())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="run seed (default 42 where randomness is used)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="autoeval", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic meta-set corpus")
    g.add_argument("--config", type=Path, help="TOML corpus config")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--num-sets", type=int)
    g.add_argument("--num-instances", type=int)
    g.add_argument("--num-categories", type=int)
    g.add_argument("--id-prefix")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("extract", parents=[common], help="compute set representations")
    e.add_argument("--data", type=Path, required=True, help="corpus directory or manifest")
    e.add_argument("--groups", default="high,medium,low")
    e.add_argument("--mode", choices=("quantile", "fixed"), default="quantile")
    e.add_argument("--t-low", type=float)
    e.add_argument("--t-high", type=float)
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", parents=[common], help="train the accuracy regressor")
    t.add_argument("--reps", type=Path, required=True)
    t.add_argument("--manifest", type=Path, required=True)
    t.add_argument("--model-out", type=Path, required=True)
    t.add_argument("--trace-out", type=Path)
    t.add_argument("--ablate", action="append", choices=("mean", "cov", "var"))
    t.add_argument("--lambda", dest="lam", type=float, default=1.0)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=32)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="predict accuracies from representations")
    pr.add_argument("--model", type=Path, required=True)
    pr.add_argument("--reps", type=Path, required=True)
    pr.add_argument("--out", type=Path, required=True)
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("baseline", parents=[common], help="score-threshold baseline predictions")
    b.add_argument("--data", type=Path, required=True)
    b.add_argument("--method", choices=("ps", "es", "ac"), required=True)
    b.add_argument("--tau1", type=float, default=0.8)
    b.add_argument("--tau2", type=float, default=0.2)
    b.add_argument("--out", type=Path, required=True)
    b.set_defaults(func=cmd_baseline)

    ev = sub.add_parser("eval", parents=[common], help="RMSE report against a manifest")
    ev.add_argument("--pred", type=Path, required=True)
    ev.add_argument("--manifest", type=Path, required=True)
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--baseline-pred", type=Path, action="append", help="extra predictions CSV for comparison rows")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CLIError, DataError, ModelFormatError, ValueError, OSError) as exc:
        print(f"autoeval {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
