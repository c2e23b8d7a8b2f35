"""Static and dynamic ensemble inference with deterministic multi-core cost simulation.

Every tree contributes a per-class delta to the shared accumulator:

* multi-class RF: its leaf row;
* binary RF with scalar leaves: [p0, unit - p0] (the complement is implied);
* binary GBT: [0, logit];
* multi-class GBT: the tree's scalar into its class slot (slot = index % M).

Dynamic inference executes estimator units in batches of B, evaluating the
policy once per full batch (floor(units/B) opportunities); leftover units run
without a policy check, so a never-firing policy reproduces the static path
bit for bit. Cost is simulated by assigning trees to cores round-robin by
index and charging each batch the slowest core.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ensemble import LEAF_SENTINEL, FlatEnsemble
from .policies import PolicyConfig, ScoreState, policy_decide, qwyc_exit_class


@dataclass
class CostModel:
    """Abstract per-operation cycle costs; only ratios are meaningful."""

    node_cost: float = 1.0
    acc_cost: float = 1.0      # per accumulated class value
    policy_cost: float = 1.0   # per policy evaluation
    barrier_cost: float = 0.0


@dataclass
class CostReport:
    trees_cycles: float
    acc_cycles: float
    policy_cycles: float
    barrier_cycles: float
    total_cycles: float
    speedup_vs_1core: float


@dataclass
class EngineConfig:
    cores: int = 1
    batch_size: Optional[int] = None   # defaults to cores (B = C)
    policy: Optional[PolicyConfig] = None
    cost_model: CostModel = field(default_factory=CostModel)

    def __post_init__(self) -> None:
        if self.cores < 1:
            raise ValueError("cores must be >= 1")
        if self.batch_size is None:
            self.batch_size = self.cores
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class InferenceTrace:
    predicted_class: int
    final_acc: ScoreState
    trees_executed: int
    visited_nodes_total: int
    visited_nodes_per_tree: list
    policy_evaluations: int
    stopped_early: bool
    unit_trees: int = 1
    acc_per_tree: int = 1


def _check_input(flat: FlatEnsemble, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("input must be a 1-D feature vector")
    if x.shape[0] < flat.n_features:
        raise ValueError(f"input has {x.shape[0]} features, model reads up to "
                         f"{flat.n_features}")
    if flat.is_quantized and not np.issubdtype(x.dtype, np.integer):
        raise ValueError("quantized models take integer inputs "
                         "(quantize them with the model's QuantSpec)")
    return x


def eval_tree(flat: FlatEnsemble, tree_index: int, x: np.ndarray):
    """Walk one tree; returns (leaf row or folded scalar, visited internal nodes)."""
    x = _check_input(flat, x)
    start, end = flat.tree_bounds(tree_index)
    i = start
    visited = 0
    limit = flat.meta.max_depth + 1
    while flat.fidx[i] != LEAF_SENTINEL:
        if visited >= limit:
            raise ValueError(f"tree {tree_index}: walk exceeded {limit} steps "
                             f"(malformed offsets)")
        if x[flat.fidx[i]] > flat.alpha[i]:
            i += int(flat.right[i])
        else:
            i += 1
        if not (start <= i < end):
            raise ValueError(f"tree {tree_index}: offset left the tree segment")
        visited += 1
    if flat.folded:
        return flat.alpha[i], visited
    return flat.leaves[flat.right[i]], visited


def _family(flat: FlatEnsemble) -> str:
    if flat.meta.kind == "gbt":
        return "gbt_binary" if flat.meta.n_classes == 2 else "gbt_multi"
    return "rf_scalar" if flat.leaf_arity == 1 else "rf_multi"


def _acc_dtype(flat: FlatEnsemble):
    return np.int64 if flat.is_quantized else np.float64


def _view_delta(flat: FlatEnsemble, family: str, tree_index: int, payload) -> np.ndarray:
    m = flat.meta.n_classes
    delta = np.zeros(m, dtype=_acc_dtype(flat))
    if family == "rf_multi":
        delta[:] = payload
        return delta
    value = payload if np.ndim(payload) == 0 else payload[0]
    if family == "rf_scalar":
        delta[0] = value
        delta[1] = flat.leaf_unit - value
    elif family == "gbt_binary":
        delta[1] = value
    else:  # gbt_multi
        delta[tree_index % m] = value
    return delta


def _make_state(flat: FlatEnsemble, acc: np.ndarray, trees: int, estimators: int) -> ScoreState:
    q = flat.meta.quant
    return ScoreState(
        acc=acc.copy(),
        trees_executed=trees,
        estimators_executed=estimators,
        leaf_unit=flat.leaf_unit,
        raw_per_unit=1.0 if q is None else q.raw_per_unit,
        kind=flat.meta.kind,
    )


def output_probabilities(flat: FlatEnsemble, state: ScoreState) -> np.ndarray:
    """Probabilities for reporting only: mean leaf rows for RFs, softmax or
    logistic over raw scores for GBTs; never used inside the decision loop."""
    acc = np.asarray(state.acc, dtype=np.float64)
    if flat.meta.kind == "rf":
        total = acc.sum()
        return acc / total if total > 0 else np.full_like(acc, 1.0 / acc.shape[0])
    raw = acc * state.raw_per_unit
    if flat.meta.n_classes == 2:
        p1 = 1.0 / (1.0 + math.exp(-float(raw[1])))
        return np.array([1.0 - p1, p1])
    z = raw - raw.max()
    e = np.exp(z)
    return e / e.sum()


def _finish(flat, cfg, acc, visited, trees, evals, stopped, forced_class):
    cls = forced_class if forced_class is not None else int(np.argmax(acc))
    trace = InferenceTrace(
        predicted_class=cls,
        final_acc=_make_state(flat, acc, trees, max(1, trees // flat.trees_per_estimator)),
        trees_executed=trees,
        visited_nodes_total=int(sum(visited)),
        visited_nodes_per_tree=[int(v) for v in visited],
        policy_evaluations=evals,
        stopped_early=stopped,
        unit_trees=flat.trees_per_estimator,
        acc_per_tree=flat.leaf_arity,
    )
    report = simulate_cost(trace, cfg.cost_model, cfg.batch_size, cfg.cores)
    return cls, trace, report


def predict_static(flat: FlatEnsemble, x: np.ndarray, cfg: Optional[EngineConfig] = None):
    """Run every tree and take the argmax (lowest class index wins ties)."""
    cfg = cfg or EngineConfig()
    if cfg.policy is not None:
        raise ValueError("predict_static takes no policy; use predict_dynamic")
    family = _family(flat)
    acc = np.zeros(flat.meta.n_classes, dtype=_acc_dtype(flat))
    visited = []
    for t in range(flat.n_trees):
        payload, v = eval_tree(flat, t, x)
        acc += _view_delta(flat, family, t, payload)
        visited.append(v)
    return _finish(flat, cfg, acc, visited, flat.n_trees, 0, False, None)


def predict_dynamic(flat: FlatEnsemble, x: np.ndarray, cfg: EngineConfig):
    """Batched early-stopping inference (policy checked once per full batch)."""
    if cfg.policy is None:
        raise ValueError("predict_dynamic needs cfg.policy")
    policy = cfg.policy
    if policy.kind == "qwyc" and flat.meta.n_classes != 2:
        raise ValueError("qwyc applies to binary ensembles only")
    family = _family(flat)
    ut = flat.trees_per_estimator
    units = flat.meta.n_estimators
    b = cfg.batch_size
    triggers = units // b

    acc = np.zeros(flat.meta.n_classes, dtype=_acc_dtype(flat))
    visited = []
    t = 0
    evals = 0
    stopped = False
    forced_class = None
    last_delta = None

    def run_unit() -> None:
        nonlocal t, last_delta
        for _ in range(ut):
            payload, v = eval_tree(flat, t, x)
            last_delta = _view_delta(flat, family, t, payload)
            acc_add(last_delta)
            visited.append(v)
            t += 1

    def acc_add(delta) -> None:
        np.add(acc, delta, out=acc)

    for bt in range(triggers):
        for _ in range(b):
            run_unit()
        evals += 1
        state = _make_state(flat, acc, t, (bt + 1) * b)
        if policy_decide(policy, state, last_tree_p=last_delta):
            stopped = True
            if policy.kind == "qwyc":
                forced_class = qwyc_exit_class(policy, state)
            break
    if not stopped:
        while t < flat.n_trees:
            run_unit()
    return _finish(flat, cfg, acc, visited, t, evals, stopped, forced_class)


def predict_static_threaded(flat: FlatEnsemble, x: np.ndarray,
                            cfg: Optional[EngineConfig] = None):
    """Real-threads variant of predict_static: one worker per simulated core,
    trees assigned by index, accumulation under a mutex. Integer-mode results
    match the deterministic emulator exactly (integer addition commutes)."""
    cfg = cfg or EngineConfig()
    if cfg.policy is not None:
        raise ValueError("predict_static_threaded takes no policy")
    family = _family(flat)
    acc = np.zeros(flat.meta.n_classes, dtype=_acc_dtype(flat))
    visited = [0] * flat.n_trees
    lock = threading.Lock()
    errors = []

    def worker(core: int) -> None:
        try:
            for t in range(core, flat.n_trees, cfg.cores):
                payload, v = eval_tree(flat, t, x)
                delta = _view_delta(flat, family, t, payload)
                with lock:
                    np.add(acc, delta, out=acc)
                visited[t] = v
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(c,)) for c in range(cfg.cores)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return _finish(flat, cfg, acc, visited, flat.n_trees, 0, False, None)


def _tree_batch_bounds(trees_executed: int, policy_evals: int, batch_size: int,
                       unit_trees: int) -> list:
    per_batch = batch_size * unit_trees
    bounds = [(k * per_batch, (k + 1) * per_batch) for k in range(policy_evals)]
    done = policy_evals * per_batch
    if done < trees_executed:
        bounds.append((done, trees_executed))
    return bounds


def simulate_cost(trace: InferenceTrace, model: CostModel,
                  batch_size: int, cores: int) -> CostReport:
    """Deterministic emulation of C cores over the executed trees.

    Trees are statically assigned to core (index % C); each barrier-delimited
    batch costs as much as its slowest core. Accumulation is serialized
    (critical section) and policy evaluations run on one core.
    """
    costs = np.asarray(trace.visited_nodes_per_tree, dtype=np.float64) * model.node_cost
    bounds = _tree_batch_bounds(trace.trees_executed, trace.policy_evaluations,
                                batch_size, trace.unit_trees)
    trees_cycles = 0.0
    for lo, hi in bounds:
        per_core = np.zeros(cores)
        idx = np.arange(lo, hi)
        np.add.at(per_core, idx % cores, costs[lo:hi])
        trees_cycles += per_core.max() if idx.size else 0.0
    acc_cycles = trace.trees_executed * trace.acc_per_tree * model.acc_cost
    policy_cycles = trace.policy_evaluations * model.policy_cost
    barrier_cycles = (2 * trace.policy_evaluations + 1) * model.barrier_cost
    total = trees_cycles + acc_cycles + policy_cycles + barrier_cycles
    total_1core = costs.sum() + acc_cycles + policy_cycles + barrier_cycles
    return CostReport(
        trees_cycles=float(trees_cycles),
        acc_cycles=float(acc_cycles),
        policy_cycles=float(policy_cycles),
        barrier_cycles=float(barrier_cycles),
        total_cycles=float(total),
        speedup_vs_1core=float(total_1core / total) if total > 0 else 1.0,
    )


# --- vectorized batch paths (identical arithmetic, used by the harness) ---

def batch_leaf_nodes(flat: FlatEnsemble, X: np.ndarray):
    """Leaf node index and visited count per (tree, sample), fully vectorized."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError("X must be (n_samples, n_features)")
    if flat.is_quantized and not np.issubdtype(X.dtype, np.integer):
        raise ValueError("quantized models take integer inputs")
    n = X.shape[0]
    t_count = flat.n_trees
    leaf_pos = np.empty((t_count, n), dtype=np.int32)
    visited = np.zeros((t_count, n), dtype=np.int32)
    rows = np.arange(n)
    for t in range(t_count):
        start, _ = flat.tree_bounds(t)
        pos = np.full(n, start, dtype=np.int64)
        for _ in range(flat.meta.max_depth + 1):
            f = flat.fidx[pos]
            active = f != LEAF_SENTINEL
            if not active.any():
                break
            ap = pos[active]
            go_right = X[rows[active], f[active]] > flat.alpha[ap]
            pos[active] = ap + np.where(go_right, flat.right[ap], 1)
            visited[t][active] += 1
        if (flat.fidx[pos] != LEAF_SENTINEL).any():
            raise ValueError(f"tree {t}: walk exceeded the depth bound")
        leaf_pos[t] = pos
    return leaf_pos, visited


def tree_view_deltas(flat: FlatEnsemble, X: np.ndarray):
    """Per-tree accumulator deltas, shape (T, n, M), plus visited counts (T, n)."""
    leaf_pos, visited = batch_leaf_nodes(flat, X)
    t_count, n = leaf_pos.shape
    m = flat.meta.n_classes
    family = _family(flat)
    dtype = _acc_dtype(flat)
    if flat.folded:
        payload = flat.alpha[leaf_pos]                       # (T, n)
    elif flat.leaf_arity == 1:
        payload = flat.leaves[flat.right[leaf_pos], 0]       # (T, n)
    else:
        payload = flat.leaves[flat.right[leaf_pos]]          # (T, n, M)
    deltas = np.zeros((t_count, n, m), dtype=dtype)
    if family == "rf_multi":
        deltas[:] = payload
    elif family == "rf_scalar":
        deltas[:, :, 0] = payload
        deltas[:, :, 1] = flat.leaf_unit - payload
    elif family == "gbt_binary":
        deltas[:, :, 1] = payload
    else:
        for t in range(t_count):
            deltas[t, :, t % m] = payload[t]
    return deltas, visited


def unit_view_deltas(flat: FlatEnsemble, X: np.ndarray):
    """Per-estimator accumulator deltas (N, n, M) and visited counts (N, n)."""
    deltas, visited = tree_view_deltas(flat, X)
    ut = flat.trees_per_estimator
    n_units = flat.n_trees // ut
    shape = (n_units, ut) + deltas.shape[1:]
    return (deltas.reshape(shape).sum(axis=1),
            visited.reshape(n_units, ut, -1).sum(axis=1))


def accumulate_static(flat: FlatEnsemble, X: np.ndarray) -> np.ndarray:
    """Full-ensemble accumulator view per sample, shape (n, M)."""
    deltas, _ = tree_view_deltas(flat, X)
    return deltas.sum(axis=0)


def predict_static_batch(flat: FlatEnsemble, X: np.ndarray):
    """(classes, accumulators, visited-node totals) for a whole sample matrix."""
    deltas, visited = tree_view_deltas(flat, X)
    acc = deltas.sum(axis=0)
    return np.argmax(acc, axis=1), acc, visited.sum(axis=0)


def replay_prefix_scores(flat: FlatEnsemble, X: np.ndarray,
                         order: Optional[np.ndarray] = None):
    """QWYC prefix replay: positive-class score after each estimator, plus the
    full-ensemble prediction per sample. Scores use the same scalar routine as
    the live policy so calibration and execution see identical values."""
    from .policies import qwyc_positive_score

    units, _ = unit_view_deltas(flat, X)
    if order is not None:
        units = units[np.asarray(order)]
    cum = np.cumsum(units, axis=0)
    n_units, n, _ = cum.shape
    scores = np.empty((n_units, n), dtype=np.float64)
    for e in range(n_units):
        for i in range(n):
            state = _make_state(flat, cum[e, i], (e + 1) * flat.trees_per_estimator, e + 1)
            scores[e, i] = qwyc_positive_score(state)
    final_classes = np.argmax(cum[-1], axis=1)
    return scores, final_classes
