"""Early-stopping confidence policies and QWYC threshold calibration.

Aggregated policies score the running class-score accumulator; per-tree Max
and ScoreMargin score only the last executed tree. Normalized comparisons
divide by the number of executed estimators, implemented division-free in
integer mode: score * 2^16 >= round(t_h * 2^16) * executed * leaf_unit, so
quantized decisions are exact and match the emitted C code bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

FP_SHIFT = 16
FP_ONE = 1 << FP_SHIFT

POLICY_KINDS = ("max", "score_margin", "agg_max", "agg_score_margin", "qwyc")

NEVER_STOP = math.inf


@dataclass
class PolicyConfig:
    kind: str
    threshold: float = NEVER_STOP
    eps_minus: Optional[float] = None
    eps_plus: Optional[float] = None
    normalized: bool = True

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "qwyc":
            if self.eps_minus is None or self.eps_plus is None:
                raise ValueError("qwyc needs both eps_minus and eps_plus")
            if self.eps_minus > self.eps_plus:
                raise ValueError("qwyc requires eps_minus <= eps_plus")

    def to_dict(self) -> dict:
        return {
            "policy": self.kind,
            "threshold": self.threshold,
            "eps_minus": self.eps_minus,
            "eps_plus": self.eps_plus,
            "normalized": self.normalized,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(kind=d["policy"], threshold=float(d.get("threshold", NEVER_STOP)),
                   eps_minus=d.get("eps_minus"), eps_plus=d.get("eps_plus"),
                   normalized=bool(d.get("normalized", True)))


@dataclass
class ScoreState:
    """Accumulated class scores plus the context needed to interpret them."""

    acc: np.ndarray            # (M,) int64 in quantized mode, float64 otherwise
    trees_executed: int
    estimators_executed: int
    leaf_unit: float = 1.0     # accumulator value of a 1.0 output from one tree
    raw_per_unit: float = 1.0  # raw output units per accumulator step
    kind: str = "rf"

    @property
    def integer_mode(self) -> bool:
        return np.issubdtype(self.acc.dtype, np.integer)


def score_max(p) -> float:
    p = np.asarray(p)
    if p.size == 0:
        raise ValueError("score_max of an empty vector")
    return p.max()


def score_margin(p) -> float:
    """Largest minus second-largest entry; 0 when the top value is duplicated."""
    p = np.asarray(p)
    if p.size < 2:
        raise ValueError("score_margin needs at least 2 entries")
    top2 = np.partition(p, -2)[-2:]
    return top2[1] - top2[0]


def threshold_fixed_point(t_h: float) -> int:
    return int(np.copysign(np.floor(abs(t_h) * FP_ONE + 0.5), t_h))


def _compare(score, t_h: float, executed: int, state: ScoreState) -> bool:
    """score >= t_h, normalized by `executed` estimators when requested."""
    if not math.isfinite(t_h):
        return False
    if state.integer_mode:
        if t_h > 2.0 ** 20:
            return False
        return int(score) * FP_ONE >= threshold_fixed_point(t_h) * executed * int(state.leaf_unit)
    return score >= t_h * executed * state.leaf_unit


def _compare_raw(score, t_h: float, state: ScoreState) -> bool:
    """Unnormalized comparison in accumulator units (GBT raw logits)."""
    if not math.isfinite(t_h):
        return False
    if state.integer_mode:
        return int(score) >= math.ceil(t_h)
    return score >= t_h


def qwyc_positive_score(state: ScoreState) -> float:
    """Normalized positive-class confidence in [0, 1] used by both QWYC exits."""
    if state.acc.shape[0] != 2:
        raise ValueError("qwyc applies to binary ensembles only")
    pos_raw = float(state.acc[1]) * state.raw_per_unit
    if state.kind == "gbt":
        return 1.0 / (1.0 + math.exp(-pos_raw))
    return pos_raw / state.estimators_executed


def _qwyc_fires(cfg: PolicyConfig, p: float) -> tuple[bool, bool]:
    """Which QWYC exits fire; eps_plus=1 and eps_minus=0 are disabled sentinels."""
    stop_pos = cfg.eps_plus < 1.0 and p >= cfg.eps_plus
    stop_neg = cfg.eps_minus > 0.0 and p <= cfg.eps_minus
    return stop_pos, stop_neg


def qwyc_exit_class(cfg: PolicyConfig, state: ScoreState) -> int:
    """Class implied by whichever QWYC threshold fired (positive side wins ties)."""
    stop_pos, _ = _qwyc_fires(cfg, qwyc_positive_score(state))
    return 1 if stop_pos else 0


def policy_decide(cfg: PolicyConfig, state: ScoreState,
                  last_tree_p: Optional[np.ndarray] = None) -> bool:
    """True when the configured confidence score clears its threshold."""
    if state.trees_executed < 1:
        raise ValueError("policy evaluated before any tree was executed")
    if cfg.kind in ("max", "score_margin"):
        if last_tree_p is None:
            raise ValueError(f"{cfg.kind} needs the last executed tree's output")
        score = score_max(last_tree_p) if cfg.kind == "max" else score_margin(last_tree_p)
        if cfg.normalized:
            return _compare(score, cfg.threshold, 1, state)
        return _compare_raw(score, cfg.threshold, state)
    if cfg.kind == "agg_max":
        score = score_max(state.acc)
    elif cfg.kind == "agg_score_margin":
        score = score_margin(state.acc)
    elif cfg.kind == "qwyc":
        stop_pos, stop_neg = _qwyc_fires(cfg, qwyc_positive_score(state))
        return stop_pos or stop_neg
    else:  # pragma: no cover - POLICY_KINDS is closed
        raise ValueError(cfg.kind)
    if cfg.normalized:
        return _compare(score, cfg.threshold, state.estimators_executed, state)
    return _compare_raw(score, cfg.threshold, state)


def calibrate_qwyc(flat, validation, order: Optional[np.ndarray] = None):
    """Extract (eps_minus, eps_plus) preserving every full-ensemble validation prediction.

    Replays each sample's per-estimator prefix scores under the given order.
    eps_plus is the smallest observed positive-sample score exceeding every
    prefix score of negative-predicted samples (1.0 when no such value
    exists, disabling the positive exit); eps_minus mirrors it.
    """
    from .engine import replay_prefix_scores

    if flat.meta.n_classes != 2:
        raise ValueError("qwyc calibration applies to binary ensembles only")
    if validation.n == 0:
        raise ValueError("qwyc calibration needs a non-empty validation set")
    scores, final_classes = replay_prefix_scores(flat, validation.features, order)
    pos = final_classes == 1
    neg = ~pos
    neg_ceiling = scores[:, neg].max() if neg.any() else -math.inf
    pos_floor = scores[:, pos].min() if pos.any() else math.inf

    eps_plus = 1.0
    if pos.any():
        candidates = np.unique(scores[:, pos])
        valid = candidates[candidates > neg_ceiling]
        if valid.size:
            eps_plus = float(valid[0])
    eps_minus = 0.0
    if neg.any():
        candidates = np.unique(scores[:, neg])
        valid = candidates[candidates < pos_floor]
        if valid.size:
            eps_minus = float(valid[-1])
    return eps_minus, eps_plus
