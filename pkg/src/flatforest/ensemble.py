"""Logical and flattened ensemble representations.

A model is first expressed as recursive trees (Internal/Leaf nodes), then
compiled into three flat arrays: NODES (fidx/alpha/right per node, laid out
per-tree in pre-order), ROOTS (start index of each tree) and LEAVES (one row
of output values per leaf, unless leaves are folded into the alpha field).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .quantizer import QuantSpec

LEAF_SENTINEL = -2
MAX_NODES = 1 << 16
ACCUMULATOR_BYTES = 4  # 32-bit signed accumulator
INDEX_BYTES = 2        # fidx and right are 16-bit fields


@dataclass(frozen=True)
class Leaf:
    """Terminal node: a tuple of output values (length M, or 1 when scalar)."""

    values: tuple


@dataclass(frozen=True)
class Internal:
    """Split node: go left when input[feature] <= threshold, else right."""

    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Internal, Leaf]
LogicalTree = TreeNode  # a tree is identified by its root node


def leaf(values: Sequence[float]) -> Leaf:
    return Leaf(tuple(float(v) for v in values))


@dataclass
class EnsembleMeta:
    kind: str                       # "rf" | "gbt"
    n_estimators: int
    n_classes: int
    max_depth: int
    task: str = "classification"
    quant: Optional[QuantSpec] = None

    def __post_init__(self) -> None:
        if self.kind not in ("rf", "gbt"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.n_estimators < 1 or self.n_classes < 1 or self.max_depth < 1:
            raise ValueError("n_estimators, n_classes and max_depth must all be >= 1")

    @property
    def trees_per_estimator(self) -> int:
        """Trees in one aggregation unit: M for multi-class GBTs, 1 otherwise."""
        if self.kind == "gbt" and self.task == "classification" and self.n_classes > 2:
            return self.n_classes
        return 1

    @property
    def expected_tree_count(self) -> int:
        return self.n_estimators * self.trees_per_estimator


class NodeRecord(NamedTuple):
    fidx: int
    alpha: float
    right: int


@dataclass
class FlatEnsemble:
    """Compiled ensemble: parallel node arrays plus roots and leaf rows.

    Layout invariants: nodes of tree t occupy [roots[t], roots[t+1]) in
    pre-order, so the left child of the internal node at index i is i+1 and
    the right child is i+right. Leaves carry fidx == LEAF_SENTINEL and reuse
    `right` as a LEAVES row index (or store their single value in `alpha`
    when folded).
    """

    fidx: np.ndarray            # (n_nodes,) int32
    alpha: np.ndarray           # (n_nodes,) float64, or int64 once quantized
    right: np.ndarray           # (n_nodes,) int32
    roots: np.ndarray           # (n_trees,) int32
    leaves: Optional[np.ndarray]  # (n_rows, leaf_arity), None when folded
    meta: EnsembleMeta

    @property
    def n_nodes(self) -> int:
        return int(self.fidx.shape[0])

    @property
    def n_trees(self) -> int:
        return int(self.roots.shape[0])

    @property
    def folded(self) -> bool:
        return self.leaves is None

    @property
    def leaf_arity(self) -> int:
        return 1 if self.leaves is None else int(self.leaves.shape[1])

    @property
    def is_quantized(self) -> bool:
        return self.meta.quant is not None

    @property
    def trees_per_estimator(self) -> int:
        return self.meta.trees_per_estimator

    @property
    def n_features(self) -> int:
        internal = self.fidx[self.fidx != LEAF_SENTINEL]
        return int(internal.max()) + 1 if internal.size else 1

    @property
    def leaf_unit(self):
        """Accumulator value representing an output of 1.0 from one tree."""
        q = self.meta.quant
        if q is None:
            return 1.0
        return q.leaf_unit

    def tree_bounds(self, t: int) -> tuple[int, int]:
        start = int(self.roots[t])
        end = int(self.roots[t + 1]) if t + 1 < self.n_trees else self.n_nodes
        return start, end

    def node(self, i: int) -> NodeRecord:
        return NodeRecord(int(self.fidx[i]), self.alpha[i].item(), int(self.right[i]))

    def copy(self) -> "FlatEnsemble":
        return FlatEnsemble(
            fidx=self.fidx.copy(),
            alpha=self.alpha.copy(),
            right=self.right.copy(),
            roots=self.roots.copy(),
            leaves=None if self.leaves is None else self.leaves.copy(),
            meta=replace(self.meta),
        )


def tree_depth(root: TreeNode) -> int:
    """Number of decisions on the longest root-to-leaf path (0 for a bare leaf)."""
    stack = [(root, 0)]
    depth = 0
    while stack:
        node, d = stack.pop()
        if isinstance(node, Leaf):
            depth = max(depth, d)
        else:
            stack.append((node.left, d + 1))
            stack.append((node.right, d + 1))
    return depth


def _leaf_arities(root: TreeNode) -> set:
    out = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            out.add(len(node.values))
        else:
            stack.append(node.left)
            stack.append(node.right)
    return out


def build_flat(trees: Sequence[TreeNode], meta: EnsembleMeta,
               fold_leaves: bool = False) -> FlatEnsemble:
    """Compile logical trees into the flat pre-order representation.

    When fold_leaves is set, each (necessarily single-valued) leaf stores its
    value in the alpha field and no LEAVES matrix is produced.
    """
    if len(trees) != meta.expected_tree_count:
        raise ValueError(
            f"expected {meta.expected_tree_count} trees for {meta.kind} "
            f"(N={meta.n_estimators}, M={meta.n_classes}), got {len(trees)}"
        )
    arities = set()
    for t, root in enumerate(trees):
        d = tree_depth(root)
        if d > meta.max_depth:
            raise ValueError(f"tree {t} has depth {d} > declared max_depth {meta.max_depth}")
        arities |= _leaf_arities(root)
    if len(arities) != 1:
        raise ValueError(f"inconsistent leaf arities across trees: {sorted(arities)}")
    arity = arities.pop()
    if meta.kind == "rf" and meta.task == "classification" and arity not in (1, meta.n_classes):
        raise ValueError(f"RF leaves must have {meta.n_classes} values (or 1 when scalar), got {arity}")
    if meta.kind == "gbt" and arity != 1:
        raise ValueError(f"GBT leaves must hold a single value, got {arity}")
    if fold_leaves and arity != 1:
        raise ValueError("leaf folding requires single-valued leaves")

    fidx: list[int] = []
    alpha: list[float] = []
    right: list[int] = []
    roots: list[int] = []
    rows: list[tuple] = []

    def emit(node: TreeNode) -> None:
        i = len(fidx)
        if isinstance(node, Leaf):
            fidx.append(LEAF_SENTINEL)
            if fold_leaves:
                alpha.append(node.values[0])
                right.append(0)
            else:
                alpha.append(0.0)
                right.append(len(rows))
                rows.append(node.values)
            return
        fidx.append(int(node.feature))
        alpha.append(float(node.threshold))
        right.append(0)
        emit(node.left)
        right[i] = len(fidx) - i
        emit(node.right)

    for root in trees:
        roots.append(len(fidx))
        emit(root)

    if len(fidx) > MAX_NODES:
        raise ValueError(f"ensemble has {len(fidx)} nodes, above the {MAX_NODES} limit")

    alpha_arr = np.asarray(alpha, dtype=np.float64)
    leaves_arr = None if fold_leaves else np.asarray(rows, dtype=np.float64)
    if meta.quant is not None:
        # quantized models must carry integer arrays so the engine and the
        # emitted C code take the exact fixed-point decision paths
        if np.all(alpha_arr == np.floor(alpha_arr)):
            alpha_arr = alpha_arr.astype(np.int64)
        if leaves_arr is not None and np.all(leaves_arr == np.floor(leaves_arr)):
            leaves_arr = leaves_arr.astype(np.int64)

    return FlatEnsemble(
        fidx=np.asarray(fidx, dtype=np.int32),
        alpha=alpha_arr,
        right=np.asarray(right, dtype=np.int32),
        roots=np.asarray(roots, dtype=np.int32),
        leaves=leaves_arr,
        meta=meta,
    )


def flat_to_trees(flat: FlatEnsemble) -> list[TreeNode]:
    """Reconstruct the recursive trees from a flat ensemble."""
    trees = []
    for t in range(flat.n_trees):
        start, end = flat.tree_bounds(t)

        def build(i: int) -> TreeNode:
            if flat.fidx[i] == LEAF_SENTINEL:
                if flat.folded:
                    return Leaf((flat.alpha[i].item(),))
                return Leaf(tuple(v.item() for v in flat.leaves[flat.right[i]]))
            return Internal(
                feature=int(flat.fidx[i]),
                threshold=flat.alpha[i].item(),
                left=build(i + 1),
                right=build(i + int(flat.right[i])),
            )

        trees.append(build(start))
        del start, end
    return trees


@dataclass
class Violation:
    rule: str
    node_index: Optional[int]
    message: str

    def __str__(self) -> str:
        where = f" at node {self.node_index}" if self.node_index is not None else ""
        return f"[{self.rule}]{where}: {self.message}"


def validate(flat: FlatEnsemble) -> list[Violation]:
    """Check every structural invariant; returns the (possibly empty) violation list."""
    out: list[Violation] = []
    n = flat.n_nodes
    if flat.n_trees == 0:
        out.append(Violation("roots-empty", None, "ensemble has no trees"))
        return out
    if n > MAX_NODES:
        out.append(Violation("node-count-overflow", None, f"{n} nodes exceeds {MAX_NODES}"))
    roots = flat.roots
    if roots[0] != 0:
        out.append(Violation("first-root-nonzero", int(roots[0]), "first root must be node 0"))
    for t in range(flat.n_trees - 1):
        if roots[t + 1] <= roots[t]:
            out.append(Violation("roots-not-increasing", int(roots[t + 1]),
                                 f"roots[{t + 1}] <= roots[{t}]"))
    if (roots < 0).any() or (roots >= n).any():
        out.append(Violation("roots-out-of-range", None, "root index outside node array"))
        return out

    n_rows = None if flat.leaves is None else flat.leaves.shape[0]

    def check(i: int, end: int, depth: int) -> int:
        """Validate the subtree at i against segment [i, end); returns its size."""
        if i >= end:
            out.append(Violation("tree-overrun", i, "subtree extends past the tree segment"))
            return 0
        if depth > flat.meta.max_depth:
            out.append(Violation("depth-exceeded", i,
                                 f"path depth {depth} > max_depth {flat.meta.max_depth}"))
        if flat.fidx[i] == LEAF_SENTINEL:
            if n_rows is not None and not (0 <= flat.right[i] < n_rows):
                out.append(Violation("leaf-row-out-of-range", i,
                                     f"row {int(flat.right[i])} not in [0, {n_rows})"))
            return 1
        if flat.fidx[i] < 0:
            out.append(Violation("bad-feature-index", i, f"fidx {int(flat.fidx[i])} < 0"))
        r = int(flat.right[i])
        if r < 2:
            out.append(Violation("right-offset-lt-2", i, f"internal node has right={r}"))
            return 1
        if i + r >= end:
            out.append(Violation("right-out-of-tree", i,
                                 f"right child {i + r} outside segment [{i}, {end})"))
            return 1
        left_size = check(i + 1, i + r, depth + 1)
        if left_size != r - 1:
            out.append(Violation("left-subtree-size-mismatch", i,
                                 f"left subtree has {left_size} nodes, right offset implies {r - 1}"))
        right_size = check(i + r, end, depth + 1)
        return 1 + left_size + right_size

    for t in range(flat.n_trees):
        start, end = flat.tree_bounds(t)
        size = check(start, end, 0)
        if size != end - start:
            out.append(Violation("tree-size-mismatch", start,
                                 f"tree {t} covers {size} nodes but segment holds {end - start}"))
    return out


@dataclass
class MemoryPlan:
    """Byte sizes and L1/L2 placement for the five runtime structures."""

    sizes: dict = field(default_factory=dict)       # name -> bytes
    placement: dict = field(default_factory=dict)   # name -> "L1" | "L2"
    l1_budget: int = 0

    @property
    def l1_used(self) -> int:
        return sum(s for k, s in self.sizes.items() if self.placement[k] == "L1")


def structure_sizes(flat: FlatEnsemble, quant: QuantSpec,
                    n_features: Optional[int] = None) -> dict:
    input_bytes = quant.input_bits // 8
    leaf_bytes = quant.leaf_bits // 8
    alpha_bytes = input_bytes
    if flat.folded:
        alpha_bytes = max(alpha_bytes, leaf_bytes)
    f = flat.n_features if n_features is None else n_features
    n_rows = 0 if flat.leaves is None else flat.leaves.shape[0]
    return {
        "INPUT": f * input_bytes,
        "P": flat.meta.n_classes * ACCUMULATOR_BYTES,
        "ROOTS": flat.n_trees * INDEX_BYTES,
        "NODES": flat.n_nodes * (2 * INDEX_BYTES + alpha_bytes),
        "LEAVES": n_rows * flat.leaf_arity * leaf_bytes,
    }


def place_structures(sizes: dict, l1_budget: int) -> dict:
    """Greedy placement: mandatory INPUT/P/ROOTS in L1, then LEAVES, then NODES."""
    mandatory = sizes["INPUT"] + sizes["P"] + sizes["ROOTS"]
    if mandatory > l1_budget:
        raise ValueError(f"L1 budget {l1_budget} B cannot hold the mandatory "
                         f"INPUT+P+ROOTS set ({mandatory} B)")
    placement = {"INPUT": "L1", "P": "L1", "ROOTS": "L1"}
    left = l1_budget - mandatory
    for name in ("LEAVES", "NODES"):
        if sizes[name] <= left:
            placement[name] = "L1"
            left -= sizes[name]
        else:
            placement[name] = "L2"
    return placement


def plan_memory(flat: FlatEnsemble, quant: Optional[QuantSpec] = None,
                l1_budget: int = 64 * 1024,
                n_features: Optional[int] = None) -> MemoryPlan:
    if quant is None:
        quant = flat.meta.quant
    if quant is None:
        raise ValueError("memory planning needs a QuantSpec (field widths are bit-width dependent)")
    sizes = structure_sizes(flat, quant, n_features)
    placement = place_structures(sizes, l1_budget)
    return MemoryPlan(sizes=sizes, placement=placement, l1_budget=l1_budget)
