"""Experiment harness: grid search, threshold sweeps, Pareto fronts, ordering.

The sweep path is vectorized but takes the exact same fixed-point stopping
decisions as the per-sample engine; a dedicated test pins that equivalence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, SplitDataset
from .engine import EngineConfig, tree_view_deltas, unit_view_deltas
from .ensemble import FlatEnsemble, build_flat, structure_sizes
from .metrics import metric
from .policies import (FP_ONE, NEVER_STOP, PolicyConfig, qwyc_positive_score,
                       threshold_fixed_point)
from .quantizer import (QuantSpec, compute_input_scale, quantize_ensemble,
                        quantize_features)
from .trainer import FitParams, fit_gbt, fit_random_forest


@dataclass
class SweepPoint:
    threshold: float
    mean_visited_nodes: float
    mean_trees: float          # estimator units executed on average
    mean_total_cycles: float
    score: float
    split: str

    def to_row(self) -> list:
        return [self.split, self.threshold, self.mean_visited_nodes,
                self.mean_trees, self.mean_total_cycles, self.score]


SWEEP_COLUMNS = ["split", "threshold", "mean_visited_nodes", "mean_trees",
                 "mean_total_cycles", "score"]


@dataclass
class GridSpace:
    depths: Sequence[int]
    estimators: Sequence[int]
    input_bits: Sequence[int] = (8, 16, 32)
    leaf_bits: Sequence[int] = (8, 16, 32)
    kinds: Sequence[str] = ("rf",)

    def __post_init__(self) -> None:
        for name in ("depths", "estimators", "input_bits", "leaf_bits", "kinds"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"grid space has an empty {name} range")

    def configurations(self) -> list:
        """Every (kind, depth, n_estimators, input_bits, leaf_bits) tuple."""
        return [(k, d, n, ib, lb)
                for k in self.kinds
                for d in self.depths
                for n in self.estimators
                for ib in self.input_bits
                for lb in self.leaf_bits]

    @classmethod
    def full_scale(cls, kinds=("rf",)) -> "GridSpace":
        """The large search space: depths 1..15, estimators 1..40, 3x3 bits."""
        return cls(depths=range(1, 16), estimators=range(1, 41), kinds=kinds)

    @classmethod
    def desk_scale(cls, kinds=("rf",)) -> "GridSpace":
        return cls(depths=range(1, 9), estimators=range(1, 17), kinds=kinds)


@dataclass
class GridResult:
    kind: str
    max_depth: int
    n_estimators: int
    input_bits: int
    leaf_bits: int
    val_score: float
    test_score: float
    mean_visited_val: float
    mean_visited_test: float
    model_bytes: int
    model: FlatEnsemble
    is_seed: bool = False

    def to_row(self) -> list:
        return [self.kind, self.max_depth, self.n_estimators, self.input_bits,
                self.leaf_bits, self.val_score, self.test_score,
                self.mean_visited_val, self.mean_visited_test,
                self.model_bytes, int(self.is_seed)]


GRID_COLUMNS = ["kind", "max_depth", "n_estimators", "input_bits", "leaf_bits",
                "val_score", "test_score", "mean_visited_val",
                "mean_visited_test", "model_bytes", "is_seed"]


def _fit_kind(kind: str, data: Dataset, params: FitParams, n_classes: int):
    if kind == "rf":
        return fit_random_forest(data, params, n_classes=n_classes)
    if kind == "gbt":
        return fit_gbt(data, params, n_classes=n_classes)
    raise ValueError(f"unknown ensemble kind {kind!r}")


def train_quantized(kind: str, splits: SplitDataset, params: FitParams,
                    input_bits: int, leaf_bits: int, n_classes: Optional[int] = None,
                    oversample: bool = False):
    """Canonical quantization-aware pipeline: integerize inputs, fit, quantize.

    Returns (flat, quantized train/val/test feature matrices).
    """
    from .trainer import oversample_minority

    train = splits.train
    if n_classes is None:
        n_classes = int(np.max(train.labels)) + 1
    input_scale = compute_input_scale(train.features)
    probe = QuantSpec(input_bits, 32, input_scale, 1.0)
    x_train = quantize_features(train.features, probe)
    x_val = quantize_features(splits.val.features, probe)
    x_test = quantize_features(splits.test.features, probe)
    fit_data = Dataset(features=x_train, labels=train.labels, split="train")
    if oversample:
        fit_data = oversample_minority(fit_data, np.random.default_rng(params.rng_seed),
                                       n_classes=n_classes)
    trees, meta = _fit_kind(kind, fit_data, params, n_classes)
    flat = build_flat(trees, meta)
    flat = quantize_ensemble(flat, x_train, input_bits, leaf_bits,
                             input_scale=input_scale)
    return flat, x_train, x_val, x_test


def grid_search(space: GridSpace, splits: SplitDataset, budget: int,
                metric_kind: str = "balanced_accuracy", seed: int = 0,
                fit_defaults: Optional[dict] = None) -> list:
    """Train/evaluate every configuration under the memory budget.

    One model per (kind, depth, input_bits) is trained at the largest
    estimator count; smaller counts are exact prefixes because the fit
    consumes randomness strictly per estimator. The top validation scorer
    is tagged as the dynamic seed.
    """
    train, val, test = splits.train, splits.val, splits.test
    if min(train.n, val.n, test.n) == 0:
        raise ValueError("grid search needs non-empty train/val/test splits")
    n_classes = int(np.max(train.labels)) + 1
    fit_defaults = dict(fit_defaults or {})
    n_max = max(space.estimators)
    results: list[GridResult] = []
    n_feat = train.n_features

    for kind in space.kinds:
        for ib in space.input_bits:
            input_scale = compute_input_scale(train.features)
            probe = QuantSpec(ib, 32, input_scale, 1.0)
            x_tr = quantize_features(train.features, probe)
            x_val = quantize_features(val.features, probe)
            x_te = quantize_features(test.features, probe)
            fit_data = Dataset(features=x_tr, labels=train.labels, split="train")
            for depth in space.depths:
                params = FitParams(n_estimators=n_max, max_depth=depth,
                                   rng_seed=seed, **fit_defaults)
                trees, meta = _fit_kind(kind, fit_data, params, n_classes)
                full = build_flat(trees, meta)
                ut = full.trees_per_estimator
                # float-view deltas share leaf positions with every quantized
                # variant: floor()-truncated thresholds preserve all decisions
                d_tr, _ = tree_view_deltas(full, x_tr)
                d_val, v_val = tree_view_deltas(full, x_val)
                d_te, v_te = tree_view_deltas(full, x_te)
                cum_tr = np.cumsum(d_tr, axis=0)
                vis_val = np.cumsum(v_val.sum(axis=1))
                vis_te = np.cumsum(v_te.sum(axis=1))
                for n_est in space.estimators:
                    t_hi = n_est * ut
                    leaf_scale = float(np.max(np.abs(cum_tr[t_hi - 1])))
                    if leaf_scale <= 0:
                        continue
                    for lb in space.leaf_bits:
                        spec = QuantSpec(ib, lb, input_scale, leaf_scale)
                        prefix = _quantized_prefix(full, trees, n_est, spec)
                        bytes_ = sum(structure_sizes(prefix, spec, n_feat).values())
                        if bytes_ > budget:
                            continue
                        acc_val = _quantized_prefix_acc(full, d_val, t_hi, spec)
                        acc_te = _quantized_prefix_acc(full, d_te, t_hi, spec)
                        val_score = metric(np.argmax(acc_val, axis=1), val.labels,
                                           metric_kind, n_classes=n_classes)
                        test_score = metric(np.argmax(acc_te, axis=1), test.labels,
                                            metric_kind, n_classes=n_classes)
                        results.append(GridResult(
                            kind=kind, max_depth=depth, n_estimators=n_est,
                            input_bits=ib, leaf_bits=lb,
                            val_score=val_score, test_score=test_score,
                            mean_visited_val=float(vis_val[t_hi - 1]) / val.n,
                            mean_visited_test=float(vis_te[t_hi - 1]) / test.n,
                            model_bytes=bytes_, model=prefix))
    if not results:
        raise ValueError("no configuration fits the memory budget")
    best = int(np.argmax([r.val_score for r in results]))
    results[best].is_seed = True
    return results


def _quantized_prefix(full: FlatEnsemble, trees, n_est: int, spec: QuantSpec) -> FlatEnsemble:
    """Quantized model over the first n_est estimators of a fitted ensemble."""
    from dataclasses import replace

    from .quantizer import quantize_inputs_and_thresholds, quantize_leaves

    ut = full.trees_per_estimator
    meta = replace(full.meta, n_estimators=n_est, quant=None)
    prefix = build_flat(trees[:n_est * ut], meta)
    prefix = quantize_leaves(prefix, spec)
    return quantize_inputs_and_thresholds(prefix, spec)


def _quantized_prefix_acc(full: FlatEnsemble, float_deltas: np.ndarray,
                          t_hi: int, spec: QuantSpec) -> np.ndarray:
    """Integer accumulator for a prefix, from float per-tree view deltas."""
    from .quantizer import quantize_symmetric

    family_scalar = full.leaf_arity == 1
    sub = float_deltas[:t_hi]
    if full.meta.kind == "rf" and family_scalar:
        # delta rows are [p0, 1 - p0]; requantize p0 and rebuild the complement
        p0 = sub[:, :, 0]
        q0 = quantize_symmetric(p0, spec.leaf_scale, spec.leaf_bits)
        out = np.empty(sub.shape, dtype=np.int64)
        out[:, :, 0] = q0
        out[:, :, 1] = spec.leaf_unit - q0
        return out.sum(axis=0)
    q = quantize_symmetric(sub, spec.leaf_scale, spec.leaf_bits)
    return q.sum(axis=0)


def default_thresholds(flat: FlatEnsemble, policy_kind: str,
                       validation: Optional[Dataset] = None,
                       normalized: Optional[bool] = None) -> list:
    """Sweep grids, all ending with the never-stop sentinel: 0..1 in steps of
    0.05 for normalized RF policies; 0..N whole leaf-units for summed RF
    scores; a log-spaced grid over the observed validation score range for
    raw GBT scores."""
    if normalized is None:
        normalized = flat.meta.kind == "rf"
    if flat.meta.kind == "rf":
        if not normalized:
            unit = flat.leaf_unit
            return [float(u) * unit for u in range(flat.meta.n_estimators + 1)] \
                + [NEVER_STOP]
        grid = [round(0.05 * i, 2) for i in range(21)]
        return grid + [NEVER_STOP]
    if validation is None:
        raise ValueError("GBT threshold grids are derived from validation scores")
    x_val = validation.features
    acc = tree_view_deltas(flat, x_val)[0].sum(axis=0).astype(np.float64)
    if policy_kind in ("agg_max", "max"):
        observed = acc.max(axis=1)
    else:
        part = np.partition(acc, -2, axis=1)
        observed = part[:, -1] - part[:, -2]
    hi = float(observed.max())
    if hi <= 0:
        return [NEVER_STOP]
    lo = max(float(observed[observed > 0].min()), hi * 1e-3)
    grid = np.geomspace(lo, hi, 21).tolist()
    return grid + [NEVER_STOP]


def _policy_scores(flat: FlatEnsemble, kind: str, cum_units: np.ndarray,
                   tree_deltas: np.ndarray, boundaries: np.ndarray):
    """Score matrix (n_boundaries, n_samples) for one policy kind."""
    ut = flat.trees_per_estimator
    at = cum_units[boundaries - 1]                       # (nb, n, M)
    if kind == "agg_max":
        return at.max(axis=2)
    if kind == "agg_score_margin":
        part = np.partition(at, -2, axis=2)
        return part[:, :, -1] - part[:, :, -2]
    if kind in ("max", "score_margin"):
        last_tree = boundaries * ut - 1
        rows = tree_deltas[last_tree]                    # (nb, n, M)
        if kind == "max":
            return rows.max(axis=2)
        part = np.partition(rows, -2, axis=2)
        return part[:, :, -1] - part[:, :, -2]
    if kind == "qwyc":
        from .engine import _make_state

        nb, n = at.shape[0], at.shape[1]
        scores = np.empty((nb, n))
        for k in range(nb):
            e = int(boundaries[k])
            for i in range(n):
                scores[k, i] = qwyc_positive_score(
                    _make_state(flat, at[k, i], e * ut, e))
        return scores
    raise ValueError(f"unknown policy kind {kind!r}")


def _stop_matrix(flat: FlatEnsemble, policy: PolicyConfig, scores: np.ndarray,
                 boundaries: np.ndarray):
    """Mirror of policies._compare / _qwyc_fires over a score matrix."""
    integer_mode = flat.is_quantized
    e = boundaries[:, None]
    if policy.kind == "qwyc":
        pos = (policy.eps_plus < 1.0) & (scores >= policy.eps_plus)
        neg = (policy.eps_minus > 0.0) & (scores <= policy.eps_minus)
        return pos | neg, pos
    th = policy.threshold
    if not math.isfinite(th):
        return np.zeros(scores.shape, dtype=bool), None
    norm = e if policy.normalized else 1
    if integer_mode:
        if policy.normalized:
            if th > 2.0 ** 20:
                return np.zeros(scores.shape, dtype=bool), None
            rhs = threshold_fixed_point(th) * norm * int(flat.leaf_unit)
            return scores.astype(np.int64) * FP_ONE >= rhs, None
        return scores >= math.ceil(th), None
    if policy.normalized:
        return scores >= th * norm * 1.0, None
    return scores >= th, None


def threshold_sweep(flat: FlatEnsemble, policy_kind: str, thresholds: Sequence[float],
                    cfg: EngineConfig, data: SplitDataset,
                    metric_kind: str = "balanced_accuracy",
                    normalized: Optional[bool] = None,
                    qwyc_eps: Optional[tuple] = None) -> list:
    """One SweepPoint per (threshold, split), all from the same seed model.

    For QWYC, each threshold t is interpreted as the symmetric pair
    (eps_plus=t, eps_minus=1-t) unless an explicit calibrated pair is given,
    in which case the thresholds list is ignored beyond its first entry.
    """
    if len(thresholds) == 0:
        raise ValueError("thresholds must be non-empty")
    if policy_kind == "qwyc" and flat.meta.n_classes != 2:
        raise ValueError("qwyc sweeps need a binary model")
    if normalized is None:
        normalized = flat.meta.kind == "rf"
    n_classes = flat.meta.n_classes
    ut = flat.trees_per_estimator
    n_units = flat.meta.n_estimators
    b = cfg.batch_size
    triggers = n_units // b
    boundaries = np.arange(1, triggers + 1) * b
    points = []
    for split_name in ("val", "test"):
        ds = data.get(split_name)
        tree_deltas, tree_visited = tree_view_deltas(flat, ds.features)
        cum_units = np.cumsum(
            tree_deltas.reshape(n_units, ut, ds.n, n_classes).sum(axis=1), axis=0)
        vis_units = np.cumsum(
            tree_visited.reshape(n_units, ut, ds.n).sum(axis=1), axis=0)
        scores = (_policy_scores(flat, policy_kind, cum_units, tree_deltas, boundaries)
                  if triggers else np.zeros((0, ds.n)))
        cycle_ctx = _cycle_context(flat, tree_visited, cfg)
        for th in thresholds:
            if policy_kind == "qwyc":
                eps = qwyc_eps if qwyc_eps is not None else (1.0 - th, th)
                policy = PolicyConfig("qwyc", eps_minus=eps[0], eps_plus=eps[1],
                                      normalized=normalized)
            else:
                policy = PolicyConfig(policy_kind, threshold=th, normalized=normalized)
            stops, pos_fires = _stop_matrix(flat, policy, scores, boundaries)
            point = _sweep_point(flat, policy, stops, pos_fires, cum_units, vis_units,
                                 boundaries, ds, cycle_ctx, cfg, metric_kind, th,
                                 split_name)
            points.append(point)
            if policy_kind == "qwyc" and qwyc_eps is not None:
                break
    return points


def _sweep_point(flat, policy, stops, pos_fires, cum_units, vis_units, boundaries,
                 ds, cycle_ctx, cfg, metric_kind, th, split_name) -> SweepPoint:
    n = ds.n
    n_units = flat.meta.n_estimators
    if stops.shape[0]:
        any_stop = stops.any(axis=0)
        first = np.where(any_stop, np.argmax(stops, axis=0), -1)
        units_exec = np.where(any_stop, boundaries[np.clip(first, 0, None)], n_units)
        evals = np.where(any_stop, first + 1, stops.shape[0])
    else:
        any_stop = np.zeros(n, dtype=bool)
        first = np.full(n, -1)
        units_exec = np.full(n, n_units)
        evals = np.zeros(n, dtype=np.int64)

    final_acc = cum_units[units_exec - 1, np.arange(n)]
    classes = np.argmax(final_acc, axis=1)
    if policy.kind == "qwyc" and pos_fires is not None and any_stop.any():
        fired_pos = pos_fires[np.clip(first, 0, None), np.arange(n)]
        classes = np.where(any_stop, np.where(fired_pos, 1, 0), classes)

    visited = vis_units[units_exec - 1, np.arange(n)]
    cycles = _sweep_cycles(flat, cycle_ctx, units_exec, evals, cfg)
    score = metric(classes, ds.labels, metric_kind, n_classes=flat.meta.n_classes)
    return SweepPoint(
        threshold=float(th),
        mean_visited_nodes=float(visited.mean()),
        mean_trees=float(units_exec.mean()),
        mean_total_cycles=float(cycles.mean()),
        score=score,
        split=split_name,
    )


def _cycle_context(flat, tree_visited, cfg) -> dict:
    """Per-batch tree-section times shared by every threshold of a sweep."""
    model = cfg.cost_model
    n = tree_visited.shape[1]
    ut = flat.trees_per_estimator
    b = cfg.batch_size
    cores = cfg.cores
    triggers = flat.meta.n_estimators // b
    costs = tree_visited.astype(np.float64) * model.node_cost  # (T, n)

    batch_times = np.zeros((triggers, n))
    for k in range(triggers):
        lo, hi = k * b * ut, (k + 1) * b * ut
        per_core = np.zeros((cores, n))
        for t in range(lo, hi):
            per_core[t % cores] += costs[t]
        batch_times[k] = per_core.max(axis=0)
    cum_batch = np.cumsum(batch_times, axis=0) if triggers else np.zeros((0, n))

    tail_lo = triggers * b * ut
    per_core = np.zeros((cores, n))
    for t in range(tail_lo, flat.n_trees):
        per_core[t % cores] += costs[t]
    tail_time = per_core.max(axis=0) if flat.n_trees > tail_lo else np.zeros(n)
    return {"cum_batch": cum_batch, "tail_time": tail_time, "triggers": triggers, "n": n}


def _sweep_cycles(flat, ctx, units_exec, evals, cfg) -> np.ndarray:
    """Per-sample total cycles, identical to engine.simulate_cost."""
    model = cfg.cost_model
    n = ctx["n"]
    triggers = ctx["triggers"]
    cum_batch = ctx["cum_batch"]
    n_units = flat.meta.n_estimators
    stopped = units_exec < n_units
    k_idx = np.clip(units_exec // cfg.batch_size - 1, 0, None)
    trees_cycles = np.where(
        stopped,
        cum_batch[k_idx, np.arange(n)] if triggers else 0.0,
        (cum_batch[-1] if triggers else np.zeros(n)) + ctx["tail_time"],
    )
    trees_exec = units_exec * flat.trees_per_estimator
    acc_cycles = trees_exec * flat.leaf_arity * model.acc_cost
    policy_cycles = evals * model.policy_cost
    barrier_cycles = (2 * evals + 1) * model.barrier_cost
    return trees_cycles + acc_cycles + policy_cycles + barrier_cycles


def pareto_front(points: Sequence[dict], cost_key: str, select_key: str) -> list:
    """Non-dominated subset: minimize cost, maximize the selection score.

    A point is dominated when another has cost <= and score >= with at least
    one strict inequality; ties on both axes survive together.
    """
    if not points:
        return []
    order = sorted(range(len(points)),
                   key=lambda i: (points[i][cost_key], -points[i][select_key], i))
    kept: list[int] = []
    best = -math.inf
    i = 0
    while i < len(order):
        j = i
        cost = points[order[i]][cost_key]
        while j < len(order) and points[order[j]][cost_key] == cost:
            j += 1
        g_max = max(points[order[k]][select_key] for k in range(i, j))
        if g_max > best:
            kept.extend(order[k] for k in range(i, j)
                        if points[order[k]][select_key] == g_max)
            best = g_max
        i = j
    return [points[k] for k in sorted(kept)]


def pair_sweep_points(points: Sequence[SweepPoint], cost_axis: str = "mean_visited_nodes",
                      select_split: str = "val", report_split: str = "test") -> list:
    """Join per-split sweep points on threshold into pareto_front records."""
    by_split = {"val": {}, "test": {}}
    for p in points:
        by_split[p.split][p.threshold] = p
    records = []
    for th, sel in by_split[select_split].items():
        rep = by_split[report_split].get(th)
        if rep is None:
            continue
        records.append({
            "threshold": th,
            "cost": getattr(sel, cost_axis),
            "select_score": sel.score,
            "report_score": rep.score,
            "report_cost": getattr(rep, cost_axis),
        })
    return records


def sweep_pareto(points: Sequence[SweepPoint], cost_axis: str = "mean_visited_nodes",
                 select_split: str = "val", report_split: str = "test") -> list:
    """Pareto points picked on the selection split, reported on the other."""
    return pareto_front(pair_sweep_points(points, cost_axis, select_split, report_split),
                        "cost", "select_score")


def grid_pareto(results: Sequence[GridResult], cost_key: str = "model_bytes") -> list:
    records = [{
        "kind": r.kind, "max_depth": r.max_depth, "n_estimators": r.n_estimators,
        "input_bits": r.input_bits, "leaf_bits": r.leaf_bits,
        "cost": getattr(r, cost_key) if not isinstance(getattr(r, cost_key), float)
        else float(getattr(r, cost_key)),
        "select_score": r.val_score, "report_score": r.test_score,
    } for r in results]
    return pareto_front(records, "cost", "select_score")


# --- estimator ordering -----------------------------------------------------

ORDER_STRATEGIES = ("training", "random", "score", "qwyc_like")


def apply_estimator_order(flat: FlatEnsemble, perm: Sequence[int]) -> FlatEnsemble:
    """Reorder whole estimator units (GBT units keep their M trees together)."""
    from dataclasses import replace

    perm = np.asarray(perm)
    ut = flat.trees_per_estimator
    n_units = flat.n_trees // ut
    if sorted(perm.tolist()) != list(range(n_units)):
        raise ValueError("perm must be a permutation of the estimator indices")
    fidx_parts, alpha_parts, right_parts, roots = [], [], [], []
    offset = 0
    for u in perm:
        for k in range(ut):
            t = int(u) * ut + k
            lo, hi = flat.tree_bounds(t)
            roots.append(offset)
            fidx_parts.append(flat.fidx[lo:hi])
            alpha_parts.append(flat.alpha[lo:hi])
            right_parts.append(flat.right[lo:hi])
            offset += hi - lo
    return replace(
        flat,
        fidx=np.concatenate(fidx_parts),
        alpha=np.concatenate(alpha_parts),
        right=np.concatenate(right_parts),
        roots=np.asarray(roots, dtype=np.int32),
    )


def estimator_permutation(flat: FlatEnsemble, strategy: str,
                          validation: Optional[Dataset] = None,
                          seed: Optional[int] = None) -> np.ndarray:
    if strategy not in ORDER_STRATEGIES:
        raise ValueError(f"unknown ordering strategy {strategy!r}")
    n_units = flat.n_trees // flat.trees_per_estimator
    if strategy == "training":
        return np.arange(n_units)
    if strategy == "random":
        if seed is None:
            raise ValueError("random ordering needs a seed")
        return np.random.default_rng(seed).permutation(n_units)
    if validation is None or validation.n == 0:
        raise ValueError(f"{strategy} ordering needs validation data")
    units, visited = unit_view_deltas(flat, validation.features)
    if strategy == "score":
        acc = np.array([
            np.mean(np.argmax(units[u], axis=1) == validation.labels)
            for u in range(n_units)
        ])
        return np.lexsort((np.arange(n_units), -acc))
    return _qwyc_like_order(flat, units, visited)


def _qwyc_like_order(flat: FlatEnsemble, units: np.ndarray,
                     visited: np.ndarray) -> np.ndarray:
    """Greedy order minimizing visited nodes spent before predictions settle.

    A sample is settled once its running margin exceeds the largest swing the
    remaining estimators could produce, which fixes the final prediction.
    """
    n_units, n, m = units.shape
    gains = np.abs(units).max(axis=(1, 2)).astype(np.float64)
    if flat.meta.kind == "gbt":
        gains = gains * 2.0  # signed leaves can move two classes at once
    remaining = list(range(n_units))
    order: list[int] = []
    acc = np.zeros((n, m), dtype=units.dtype)
    active = np.ones(n, dtype=bool)

    def settled_after(candidate: int) -> np.ndarray:
        trial = acc + units[candidate]
        rest = gains[[u for u in remaining if u != candidate]].sum()
        part = np.partition(trial, -2, axis=1)
        margin = part[:, -1] - part[:, -2]
        return margin > rest

    while remaining and active.any():
        best_u, best_cost = None, None
        for u in remaining:
            mean_visited = float(visited[u][active].mean())
            newly = int(np.sum(settled_after(u) & active))
            cost = mean_visited / (1.0 + newly)
            if best_cost is None or cost < best_cost:
                best_u, best_cost = u, cost
        order.append(best_u)
        remaining.remove(best_u)
        acc = acc + units[best_u]
        active &= ~settled_after_done(acc, gains, remaining)
    order.extend(remaining)
    return np.asarray(order)


def settled_after_done(acc: np.ndarray, gains: np.ndarray, remaining: list) -> np.ndarray:
    rest = gains[remaining].sum() if remaining else 0.0
    part = np.partition(acc, -2, axis=1)
    margin = part[:, -1] - part[:, -2]
    return margin > rest


def order_estimators(flat: FlatEnsemble, strategy: str,
                     validation: Optional[Dataset] = None,
                     seed: Optional[int] = None) -> FlatEnsemble:
    """Same trees under a permuted execution order (see estimator_permutation)."""
    return apply_estimator_order(
        flat, estimator_permutation(flat, strategy, validation, seed))
