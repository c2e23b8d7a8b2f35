"""Command-line interface: train, quantize, predict, sweep, grid, order, codegen, report."""
from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np

from .codegen import CodegenConfig, emit_golden_vectors, write_source
from .data import load_dataset, save_dataset, synth_dataset
from .engine import CostModel, EngineConfig, predict_dynamic, predict_static
from .ensemble import build_flat, plan_memory
from .metrics import metric
from .model_io import load_model, save_model
from .policies import NEVER_STOP, PolicyConfig, calibrate_qwyc
from .quantizer import (compute_input_scale, quantize_ensemble, quantize_features,
                        rescale_thresholds, QuantSpec)
from .search import (GRID_COLUMNS, SWEEP_COLUMNS, GridSpace, default_thresholds,
                     grid_search, order_estimators, sweep_pareto,
                     threshold_sweep, train_quantized)
from .trainer import FitParams


def _parse_synth(spec: str, seed: int):
    kind, _, rest = spec.partition(":")
    kv = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            kv[key] = val
    return synth_dataset(
        kind,
        n=int(kv.get("n", 2000)),
        n_classes=int(kv.get("classes", 2)),
        n_features=int(kv.get("features", 8)),
        difficulty=float(kv.get("difficulty", 0.3)),
        seed=seed,
        minority_ratio=float(kv.get("minority", 0.1)),
    )


def _load_splits(args):
    if getattr(args, "synth", None):
        return _parse_synth(args.synth, args.seed)
    if getattr(args, "data", None):
        return load_dataset(args.data)
    raise SystemExit("need --data CSV or --synth SPEC")


def _load_flat(path, fold=False):
    trees, meta = load_model(path)
    return build_flat(trees, meta, fold_leaves=fold)


def _policy_from_args(args) -> PolicyConfig:
    kwargs = {"kind": args.policy, "normalized": not args.raw_scores}
    if args.policy == "qwyc":
        kwargs["eps_minus"] = args.eps_minus
        kwargs["eps_plus"] = args.eps_plus
    else:
        kwargs["threshold"] = args.threshold
    return PolicyConfig(**kwargs)


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_config(path) -> dict:
    with open(path) as fh:
        values = json.load(fh)
    return {k.replace("-", "_"): v for k, v in values.items()}


def cmd_train(args) -> int:
    splits = _load_splits(args)
    params = FitParams(
        n_estimators=args.estimators,
        max_depth=args.depth,
        feature_subsample=args.feature_subsample,
        bootstrap=not args.no_bootstrap,
        learning_rate=args.learning_rate,
        rng_seed=args.seed,
    )
    if args.input_bits or args.leaf_bits:
        if not (args.input_bits and args.leaf_bits):
            raise SystemExit("--input-bits and --leaf-bits go together")
        flat, _, _, _ = train_quantized(args.kind, splits, params,
                                        args.input_bits, args.leaf_bits,
                                        oversample=args.oversample)
    else:
        from .trainer import fit_gbt, fit_random_forest, oversample_minority

        data = splits.train
        if args.oversample:
            data = oversample_minority(data, np.random.default_rng(args.seed))
        fit = fit_random_forest if args.kind == "rf" else fit_gbt
        trees, meta = fit(data, params)
        flat = build_flat(trees, meta)
    path = _out_path(args, "model.json")
    save_model(flat, path)
    if args.dump_data:
        save_dataset(splits, _out_path(args, "data.csv"))
    print(f"wrote {path} ({flat.n_trees} trees, {flat.n_nodes} nodes)")
    return 0


def cmd_quantize(args) -> int:
    trees, meta = load_model(args.model)
    flat = build_flat(trees, meta)
    splits = _load_splits(args)
    if flat.is_quantized:
        raise SystemExit("model is already quantized")
    input_scale = compute_input_scale(splits.train.features)
    probe = QuantSpec(args.input_bits, 32, input_scale, 1.0)
    x_train = quantize_features(splits.train.features, probe)
    flat = rescale_thresholds(flat, probe)
    flat = quantize_ensemble(flat, x_train, args.input_bits, args.leaf_bits,
                             input_scale=input_scale)
    path = _out_path(args, "model_quantized.json")
    save_model(flat, path)
    print(f"wrote {path}")
    return 0


def cmd_predict(args) -> int:
    flat = _load_flat(args.model, fold=args.fold)
    splits = _load_splits(args)
    ds = splits.get(args.split)
    x = ds.features
    if flat.is_quantized:
        x = quantize_features(x, flat.meta.quant)
    policy = _policy_from_args(args) if args.policy else None
    cfg = EngineConfig(cores=args.cores, batch_size=args.batch, policy=policy,
                       cost_model=CostModel())
    rows = []
    preds = []
    for i in range(ds.n):
        if policy is None:
            cls, trace, cost = predict_static(flat, x[i], cfg)
        else:
            cls, trace, cost = predict_dynamic(flat, x[i], cfg)
        preds.append(cls)
        rows.append([i, cls, trace.trees_executed, trace.visited_nodes_total,
                     trace.policy_evaluations, cost.trees_cycles, cost.acc_cycles,
                     cost.policy_cycles, cost.total_cycles])
    path = _out_path(args, "traces.csv")
    _write_csv(path, ["input_id", "class", "trees", "visited_nodes", "policy_evals",
                      "trees_cycles", "acc_cycles", "policy_cycles", "total_cycles"],
               rows)
    score = metric(np.asarray(preds), ds.labels, args.metric,
                   n_classes=flat.meta.n_classes)
    print(f"{args.split} {args.metric}: {score:.4f}  ({ds.n} inferences; "
          f"traces in {path})")
    return 0


def cmd_sweep(args) -> int:
    flat = _load_flat(args.model, fold=args.fold)
    splits = _load_splits(args)
    if flat.is_quantized:
        from .data import Dataset, SplitDataset

        q = flat.meta.quant
        splits = SplitDataset(*(
            Dataset(quantize_features(splits.get(s).features, q),
                    splits.get(s).labels, s)
            for s in ("train", "val", "test")))
    normalized = (flat.meta.kind == "rf") and not args.raw_scores
    if args.thresholds == "default":
        thresholds = default_thresholds(flat, args.policy, splits.val,
                                        normalized=normalized)
    else:
        thresholds = [float(t) for t in args.thresholds.split(",")]
    cfg = EngineConfig(cores=args.cores, batch_size=args.batch)
    qwyc_eps = None
    if args.policy == "qwyc" and args.calibrate:
        qwyc_eps = calibrate_qwyc(flat, splits.val)
        print(f"calibrated eps_minus={qwyc_eps[0]:.6f} eps_plus={qwyc_eps[1]:.6f}")
    points = threshold_sweep(flat, args.policy, thresholds, cfg, splits,
                             metric_kind=args.metric, normalized=normalized,
                             qwyc_eps=qwyc_eps)
    path = _out_path(args, f"sweep_{args.policy}.csv")
    _write_csv(path, SWEEP_COLUMNS, [p.to_row() for p in points])
    front = sweep_pareto(points)
    print(f"wrote {path} ({len(points)} points, {len(front)} pareto-optimal)")
    return 0


def cmd_grid(args) -> int:
    splits = _load_splits(args)
    if args.full_scale:
        space = GridSpace.full_scale(kinds=tuple(args.kinds.split(",")))
    else:
        space = GridSpace(
            depths=_parse_range(args.depths),
            estimators=_parse_range(args.estimators),
            input_bits=[int(b) for b in args.input_bits_set.split(",")],
            leaf_bits=[int(b) for b in args.leaf_bits_set.split(",")],
            kinds=tuple(args.kinds.split(",")),
        )
    results = grid_search(space, splits, budget=args.budget,
                          metric_kind=args.metric, seed=args.seed)
    path = _out_path(args, "grid.csv")
    _write_csv(path, GRID_COLUMNS, [r.to_row() for r in results])
    seed_model = next(r for r in results if r.is_seed)
    model_path = _out_path(args, "seed_model.json")
    save_model(seed_model.model, model_path)
    print(f"wrote {path} ({len(results)} configs) and {model_path} "
          f"(val={seed_model.val_score:.4f})")
    return 0


def cmd_order(args) -> int:
    flat = _load_flat(args.model)
    validation = None
    if args.data or args.synth:
        splits = _load_splits(args)
        validation = splits.val
        if flat.is_quantized:
            from .data import Dataset

            validation = Dataset(
                quantize_features(validation.features, flat.meta.quant),
                validation.labels, "val")
    ordered = order_estimators(flat, args.strategy, validation=validation,
                               seed=args.seed)
    path = _out_path(args, "model_ordered.json")
    save_model(ordered, path)
    print(f"wrote {path} (strategy={args.strategy})")
    return 0


def cmd_codegen(args) -> int:
    flat = _load_flat(args.model, fold=args.fold)
    policy = _policy_from_args(args) if args.mode == "dynamic" else None
    cfg = CodegenConfig(mode=args.mode, policy=policy, batch=args.batch)
    paths = write_source(flat, cfg, args.out)
    rng = np.random.default_rng(args.seed)
    q = flat.meta.quant
    lo, hi = -(2 ** (q.input_bits - 1)), 2 ** (q.input_bits - 1) - 1
    inputs = [rng.integers(lo, hi + 1, size=flat.n_features) for _ in range(args.vectors)]
    vec_path = _out_path(args, "golden.csv")
    with open(vec_path, "w") as fh:
        fh.write(emit_golden_vectors(flat, inputs, cfg))
    plan = plan_memory(flat, l1_budget=args.l1_budget)
    with open(_out_path(args, "memory_plan.json"), "w") as fh:
        json.dump({"sizes": plan.sizes, "placement": plan.placement,
                   "l1_budget": plan.l1_budget, "l1_used": plan.l1_used},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {', '.join(sorted(paths))} and golden.csv "
          f"({args.vectors} vectors)")
    return 0


def cmd_report(args) -> int:
    curves = []
    pareto_rows = []
    grid_path = os.path.join(args.from_dir, "grid.csv")
    if os.path.exists(grid_path):
        with open(grid_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        records = [{"kind": r["kind"], "cost": float(r["model_bytes"]),
                    "select_score": float(r["val_score"]),
                    "report_score": float(r["test_score"]),
                    "label": f"{r['kind']}-d{r['max_depth']}-n{r['n_estimators']}"
                             f"-i{r['input_bits']}-l{r['leaf_bits']}"}
                   for r in rows]
        from .search import pareto_front

        front = pareto_front(records, "cost", "select_score")
        curves.append({"name": "static_grid",
                       "points": [{"x": p["cost"], "y": p["report_score"],
                                   "label": p["label"]} for p in front]})
        pareto_rows += [["grid", p["label"], p["cost"], p["select_score"],
                         p["report_score"]] for p in front]
    for sweep_path in sorted(glob.glob(os.path.join(args.from_dir, "sweep_*.csv"))):
        name = os.path.basename(sweep_path)[len("sweep_"):-len(".csv")]
        with open(sweep_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        from .search import SweepPoint

        points = [SweepPoint(threshold=float(r["threshold"]),
                             mean_visited_nodes=float(r["mean_visited_nodes"]),
                             mean_trees=float(r["mean_trees"]),
                             mean_total_cycles=float(r["mean_total_cycles"]),
                             score=float(r["score"]), split=r["split"])
                  for r in rows]
        front = sweep_pareto(points)
        curves.append({"name": f"dynamic_{name}",
                       "points": [{"x": p["report_cost"], "y": p["report_score"],
                                   "threshold": p["threshold"]} for p in front]})
        pareto_rows += [[f"sweep_{name}", p["threshold"], p["cost"],
                         p["select_score"], p["report_score"]] for p in front]
    if not curves:
        raise SystemExit(f"no grid.csv or sweep_*.csv under {args.from_dir}")
    _write_csv(_out_path(args, "pareto.csv"),
               ["source", "label", "cost", "val_score", "test_score"], pareto_rows)
    with open(_out_path(args, "plotdata.json"), "w") as fh:
        json.dump({"curves": curves}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote pareto.csv and plotdata.json ({len(curves)} curves)")
    return 0


def _parse_range(text: str):
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


def _add_common(sub) -> None:
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", help="JSON file with fallback argument values")
    sub.add_argument("--out", default=".", help="output directory")


def _add_data_args(sub) -> None:
    sub.add_argument("--data", help="dataset CSV (f0..fk,label,split)")
    sub.add_argument("--synth", help="synthetic spec, e.g. "
                                     "gaussian_blobs:n=5000,classes=3,features=8,difficulty=0.3")


def _add_policy_args(sub) -> None:
    sub.add_argument("--policy", choices=["max", "score_margin", "agg_max",
                                          "agg_score_margin", "qwyc"])
    sub.add_argument("--threshold", type=float, default=NEVER_STOP)
    sub.add_argument("--eps-minus", type=float, default=0.0)
    sub.add_argument("--eps-plus", type=float, default=1.0)
    sub.add_argument("--raw-scores", action="store_true",
                     help="compare raw accumulated scores (GBT logits)")


def build_parser():
    parser = argparse.ArgumentParser(prog="flatforest",
                                     description="Flattened tree-ensemble compiler "
                                                 "and adaptive inference harness")
    subs = parser.add_subparsers(dest="command", required=True)
    registry = {}

    original_add = subs.add_parser

    def add_parser(name, **kwargs):
        sub = original_add(name, **kwargs)
        registry[name] = sub
        return sub

    subs.add_parser = add_parser

    p = subs.add_parser("train", help="fit an RF/GBT (optionally quantized)")
    _add_data_args(p)
    p.add_argument("--kind", choices=["rf", "gbt"], default="rf")
    p.add_argument("--estimators", type=int, default=8)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--feature-subsample", type=float, default=1.0)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--oversample", action="store_true")
    p.add_argument("--input-bits", type=int, choices=[8, 16, 32])
    p.add_argument("--leaf-bits", type=int, choices=[8, 16, 32])
    p.add_argument("--dump-data", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("quantize", help="post-training quantization of a float model")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--input-bits", type=int, choices=[8, 16, 32], required=True)
    p.add_argument("--leaf-bits", type=int, choices=[8, 16, 32], required=True)
    _add_common(p)
    p.set_defaults(func=cmd_quantize)

    p = subs.add_parser("predict", help="run inference and dump traces")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--fold", action="store_true")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--metric", choices=["balanced_accuracy", "f1_binary"],
                   default="balanced_accuracy")
    _add_policy_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("sweep", help="threshold sweep for one policy")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--fold", action="store_true")
    p.add_argument("--policy", required=True,
                   choices=["max", "score_margin", "agg_max", "agg_score_margin", "qwyc"])
    p.add_argument("--thresholds", default="default")
    p.add_argument("--raw-scores", action="store_true",
                   help="compare summed scores instead of per-estimator means")
    p.add_argument("--calibrate", action="store_true",
                   help="qwyc: use calibrated (eps-, eps+) from the validation split")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--metric", choices=["balanced_accuracy", "f1_binary"],
                   default="balanced_accuracy")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("grid", help="hyper-parameter grid search")
    _add_data_args(p)
    p.add_argument("--kinds", default="rf")
    p.add_argument("--depths", default="1:8")
    p.add_argument("--estimators", default="1:16")
    p.add_argument("--input-bits-set", default="8,16,32")
    p.add_argument("--leaf-bits-set", default="8,16,32")
    p.add_argument("--full-scale", action="store_true",
                   help="depths 1:15, estimators 1:40")
    p.add_argument("--budget", type=int, default=512 * 1024)
    p.add_argument("--metric", choices=["balanced_accuracy", "f1_binary"],
                   default="balanced_accuracy")
    _add_common(p)
    p.set_defaults(func=cmd_grid)

    p = subs.add_parser("order", help="permute estimator execution order")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--strategy", required=True,
                   choices=["training", "random", "score", "qwyc_like"])
    _add_common(p)
    p.set_defaults(func=cmd_order)

    p = subs.add_parser("codegen", help="emit standalone C inference sources")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["static", "dynamic"], default="static")
    p.add_argument("--fold", action="store_true")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--vectors", type=int, default=20)
    p.add_argument("--l1-budget", type=int, default=64 * 1024)
    _add_policy_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_codegen)

    p = subs.add_parser("report", help="pareto extraction and plot data")
    p.add_argument("--from", dest="from_dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser, registry


def main(argv=None) -> int:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        # config values replace parser defaults; explicit flags still win
        registry[args.command].set_defaults(**_load_config(args.config))
        args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
