"""Shared generators and independent oracles for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from flatforest.ensemble import EnsembleMeta, Internal, Leaf, TreeNode, build_flat
from flatforest.quantizer import QuantSpec, quantize_symmetric


def oracle_eval(node: TreeNode, x):
    """Recursive reference evaluation, independent of the flat engine."""
    while isinstance(node, Internal):
        node = node.right if x[node.feature] > node.threshold else node.left
    return node.values


def oracle_path(node: TreeNode, x):
    """Sequence of (feature, went_right) decisions plus the reached leaf values."""
    path = []
    while isinstance(node, Internal):
        right = x[node.feature] > node.threshold
        path.append((node.feature, bool(right)))
        node = node.right if right else node.left
    return path, node.values


def random_tree(rng, max_depth: int, n_features: int, leaf_factory,
                threshold_sampler) -> TreeNode:
    def grow(depth: int) -> TreeNode:
        if depth >= max_depth or rng.random() < 0.25 * depth:
            return Leaf(leaf_factory())
        return Internal(
            feature=int(rng.integers(0, n_features)),
            threshold=threshold_sampler(),
            left=grow(depth + 1),
            right=grow(depth + 1),
        )

    return grow(0)


def random_quantized_ensemble(rng, kind: str, n_estimators: int, n_classes: int,
                              max_depth: int, n_features: int,
                              input_bits: int = 8, leaf_bits: int = 16,
                              fold: bool | None = None):
    """Synthetic quantized flat ensemble with integer thresholds and leaves."""
    leaf_scale = float(n_estimators)
    spec = QuantSpec(input_bits, leaf_bits, input_scale=1.0, leaf_scale=leaf_scale)
    in_half = 2 ** (input_bits - 1)

    def threshold():
        # integer-domain threshold: quantization-aware models floor to ints
        return float(rng.integers(-in_half, in_half - 1))

    scalar_leaves = kind == "gbt" or n_classes == 2
    if kind == "gbt":
        def leaf_factory():
            v = float(rng.normal(0.0, 0.5))
            return (int(quantize_symmetric(v, leaf_scale, leaf_bits)),)
    elif scalar_leaves:
        def leaf_factory():
            return (int(quantize_symmetric(float(rng.random()), leaf_scale, leaf_bits)),)
    else:
        def leaf_factory():
            row = rng.dirichlet(np.ones(n_classes))
            return tuple(int(quantize_symmetric(float(p), leaf_scale, leaf_bits))
                         for p in row)

    meta = EnsembleMeta(kind=kind, n_estimators=n_estimators, n_classes=n_classes,
                        max_depth=max_depth, quant=spec)
    trees = [random_tree(rng, max_depth, n_features, leaf_factory, threshold)
             for _ in range(meta.expected_tree_count)]
    if fold is None:
        fold = scalar_leaves and bool(rng.integers(0, 2))
    return build_flat(trees, meta, fold_leaves=fold and scalar_leaves)


def random_inputs(rng, n: int, n_features: int, input_bits: int = 8) -> np.ndarray:
    half = 2 ** (input_bits - 1)
    return rng.integers(-half, half, size=(n, n_features))


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
