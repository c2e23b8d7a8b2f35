"""Symmetric min-max quantization of inputs, thresholds and leaf values.

Inputs are integerized before training (quantization-aware), so thresholds
learned over integer features can be truncated with floor() without changing
any node decision. Leaf values are quantized post-training against the range
of the fully accumulated outputs, so integer accumulation fits a 32-bit
signed accumulator.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

VALID_BITS = (8, 16, 32)


def round_half_away(x):
    """round() with halves away from zero, the single rounding mode used everywhere."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass
class QuantSpec:
    input_bits: int
    leaf_bits: int
    input_scale: float
    leaf_scale: float

    def __post_init__(self) -> None:
        if self.input_bits not in VALID_BITS or self.leaf_bits not in VALID_BITS:
            raise ValueError(f"bit widths must be one of {VALID_BITS}")
        if not (self.input_scale > 0 and self.leaf_scale > 0):
            raise ValueError("quantization scales must be positive")

    @property
    def leaf_unit(self) -> int:
        """Integer accumulator value corresponding to a leaf output of 1.0."""
        return int(round_half_away(2.0 ** (self.leaf_bits - 1) / self.leaf_scale))

    @property
    def raw_per_unit(self) -> float:
        """Raw output units represented by one integer accumulator step."""
        return self.leaf_scale / 2.0 ** (self.leaf_bits - 1)

    def to_dict(self) -> dict:
        return {
            "input_bits": self.input_bits,
            "leaf_bits": self.leaf_bits,
            "input_scale": self.input_scale,
            "leaf_scale": self.leaf_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantSpec":
        return cls(
            input_bits=int(d["input_bits"]),
            leaf_bits=int(d["leaf_bits"]),
            input_scale=float(d["input_scale"]),
            leaf_scale=float(d["leaf_scale"]),
        )


def quantize_symmetric(x: Union[float, np.ndarray], scale: float, bits: int):
    """Map x to round(x * 2^(bits-1) / scale), clamped to the signed integer range."""
    if bits not in VALID_BITS:
        raise ValueError(f"bits must be one of {VALID_BITS}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize non-finite values")
    half = 2.0 ** (bits - 1)
    q = round_half_away(arr * half / scale)
    q = np.clip(q, -half, half - 1).astype(np.int64)
    if np.isscalar(x) or arr.ndim == 0:
        return int(q)
    return q


def compute_input_scale(features: np.ndarray) -> float:
    """max |x| over the training inputs."""
    scale = float(np.max(np.abs(features))) if features.size else 0.0
    if scale <= 0:
        raise ValueError("input scale is zero: all training features are 0")
    return scale


def quantize_features(features: np.ndarray, spec: QuantSpec) -> np.ndarray:
    return quantize_symmetric(features, spec.input_scale, spec.input_bits)


def quantize_inputs_and_thresholds(flat, spec: QuantSpec):
    """Truncate internal-node thresholds to integers with floor().

    Assumes inference inputs are integers from quantize_symmetric with the
    same spec; flooring then never moves any input across a threshold, for
    negative thresholds included.
    """
    if spec.input_scale <= 0:
        raise ValueError("spec is missing a positive input scale")
    from .ensemble import LEAF_SENTINEL  # local import: ensemble depends on this module

    internal = flat.fidx != LEAF_SENTINEL
    alpha = flat.alpha.astype(np.float64).copy()
    alpha[internal] = np.floor(alpha[internal])
    if np.all(alpha == np.floor(alpha)):
        alpha = alpha.astype(np.int64)
    return replace(flat, alpha=alpha, meta=replace(flat.meta, quant=spec))


def quantize_leaves(flat, spec: QuantSpec):
    """Quantize every leaf value against the accumulated-output scale."""
    from .ensemble import LEAF_SENTINEL

    if flat.folded:
        is_leaf = flat.fidx == LEAF_SENTINEL
        values = flat.alpha[is_leaf]
        if not np.any(values != 0):
            raise ValueError("leaf scale would be computed from all-zero leaves")
        alpha = flat.alpha.astype(np.float64).copy()
        alpha[is_leaf] = quantize_symmetric(values.astype(np.float64), spec.leaf_scale,
                                            spec.leaf_bits)
        if np.all(alpha == np.floor(alpha)):
            alpha = alpha.astype(np.int64)
        return replace(flat, alpha=alpha, meta=replace(flat.meta, quant=spec))

    if not np.any(flat.leaves != 0):
        raise ValueError("leaf scale would be computed from all-zero leaves")
    leaves = quantize_symmetric(np.asarray(flat.leaves, dtype=np.float64),
                                spec.leaf_scale, spec.leaf_bits)
    return replace(flat, leaves=leaves, meta=replace(flat.meta, quant=spec))


def compute_leaf_scale(flat, train_features: np.ndarray) -> float:
    """max |accumulated output| over training samples and classes, pre-quantization."""
    from .engine import accumulate_static

    acc = accumulate_static(flat, train_features)
    scale = float(np.max(np.abs(acc))) if acc.size else 0.0
    if scale <= 0:
        raise ValueError("leaf scale is zero: accumulated outputs are all 0")
    return scale


def quantize_ensemble(flat, train_features: np.ndarray, input_bits: int,
                      leaf_bits: int, input_scale: Optional[float] = None):
    """Full post-fit quantization: leaf mapping followed by threshold truncation.

    train_features must already be the integer inputs the model was fitted on;
    input_scale is the raw feature-domain scale those integers came from (it
    is recorded so future inputs quantize consistently).
    """
    spec = QuantSpec(
        input_bits=input_bits,
        leaf_bits=leaf_bits,
        input_scale=compute_input_scale(train_features) if input_scale is None
        else input_scale,
        leaf_scale=compute_leaf_scale(flat, train_features),
    )
    out = quantize_leaves(flat, spec)
    out = quantize_inputs_and_thresholds(out, spec)
    _check_accumulator_bound(out)
    return out


def rescale_thresholds(flat, spec: QuantSpec):
    """Map raw-unit thresholds into the integer input domain (post-training path).

    For models trained on raw floats rather than pre-quantized integers; the
    exact decision-preservation guarantee only covers the quantization-aware
    path, so borderline inputs may flip here.
    """
    from .ensemble import LEAF_SENTINEL

    internal = flat.fidx != LEAF_SENTINEL
    alpha = flat.alpha.astype(np.float64).copy()
    half = 2.0 ** (spec.input_bits - 1)
    alpha[internal] = alpha[internal] * half / spec.input_scale
    return replace(flat, alpha=alpha)


def _check_accumulator_bound(flat) -> None:
    q = flat.meta.quant
    if q is None:
        return
    per_slot_adds = flat.meta.n_estimators
    worst = per_slot_adds * 2 ** (q.leaf_bits - 1)
    if worst > 2 ** 31 - 1 and q.leaf_bits < 32:
        raise ValueError(
            f"worst-case accumulation {worst} exceeds the 32-bit accumulator; "
            f"reduce n_estimators or leaf bit-width"
        )


def dequantize_leaf(values, spec: QuantSpec):
    """Map quantized leaf values back to raw output units."""
    return np.asarray(values, dtype=np.float64) * spec.raw_per_unit
