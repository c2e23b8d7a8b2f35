"""Scoring metrics: balanced accuracy and binary F1."""
from __future__ import annotations

from typing import Optional

import numpy as np

METRIC_KINDS = ("balanced_accuracy", "f1_binary")


def metric(preds, labels, kind: str, n_classes: Optional[int] = None) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have the same length")
    if kind == "balanced_accuracy":
        classes = np.arange(n_classes) if n_classes is not None else np.unique(labels)
        recalls = []
        for c in classes:
            mask = labels == c
            if not mask.any():
                raise ValueError(f"class {int(c)} absent from labels; "
                                 f"balanced accuracy undefined")
            recalls.append(np.mean(preds[mask] == c))
        return float(np.mean(recalls))
    if kind == "f1_binary":
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("f1_binary requires 0/1 labels")
        tp = int(np.sum((preds == 1) & (labels == 1)))
        fp = int(np.sum((preds == 1) & (labels == 0)))
        fn = int(np.sum((preds == 0) & (labels == 1)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if precision + recall == 0.0:
            return 0.0
        return 2.0 * precision * recall / (precision + recall)
    raise ValueError(f"unknown metric kind {kind!r}")
