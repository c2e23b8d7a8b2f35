"""Model interchange JSON: {meta: {...}, trees: [recursive {f,t,l,r} | {leaf: [...]}]}.

Also the import format for externally trained models. Quantized models
serialize integer thresholds/leaves plus the QuantSpec under meta.quant.
"""
from __future__ import annotations

import json
from typing import Union

from .ensemble import EnsembleMeta, FlatEnsemble, Internal, Leaf, TreeNode, flat_to_trees
from .quantizer import QuantSpec


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": list(node.values)}
    return {
        "f": node.feature,
        "t": node.threshold,
        "l": _node_to_dict(node.left),
        "r": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "leaf" in d:
        return Leaf(tuple(float(v) for v in d["leaf"]))
    for key in ("f", "t", "l", "r"):
        if key not in d:
            raise ValueError(f"tree node missing field {key!r}")
    return Internal(
        feature=int(d["f"]),
        threshold=float(d["t"]),
        left=_node_from_dict(d["l"]),
        right=_node_from_dict(d["r"]),
    )


def model_to_dict(trees, meta: EnsembleMeta) -> dict:
    return {
        "meta": {
            "kind": meta.kind,
            "n_estimators": meta.n_estimators,
            "n_classes": meta.n_classes,
            "max_depth": meta.max_depth,
            "task": meta.task,
            "quant": None if meta.quant is None else meta.quant.to_dict(),
        },
        "trees": [_node_to_dict(t) for t in trees],
    }


def model_from_dict(d: dict):
    m = d["meta"]
    quant = m.get("quant")
    meta = EnsembleMeta(
        kind=str(m["kind"]).lower(),
        n_estimators=int(m["n_estimators"]),
        n_classes=int(m["n_classes"]),
        max_depth=int(m["max_depth"]),
        task=m.get("task", "classification"),
        quant=None if quant is None else QuantSpec.from_dict(quant),
    )
    trees = [_node_from_dict(t) for t in d["trees"]]
    return trees, meta


def save_model(model: Union[FlatEnsemble, tuple], path) -> None:
    """Write a model (flat, or a (trees, meta) pair) as interchange JSON."""
    if isinstance(model, FlatEnsemble):
        trees, meta = flat_to_trees(model), model.meta
    else:
        trees, meta = model
    with open(path, "w") as fh:
        json.dump(model_to_dict(trees, meta), fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Read interchange JSON; returns (trees, meta)."""
    with open(path) as fh:
        return model_from_dict(json.load(fh))
