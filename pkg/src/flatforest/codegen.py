"""Standalone C source emission for quantized flat ensembles.

Emits three files: model_data.h (NODES/ROOTS/LEAVES constant arrays plus
dimensions), inference.c (the traversal/accumulation loop, with the batched
policy loop in dynamic mode) and inference.h (the public predict API). The
output is integer-only, single-threaded and deterministic text.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import EngineConfig, predict_dynamic, predict_static
from .ensemble import FlatEnsemble, validate
from .policies import PolicyConfig, threshold_fixed_point

INT_TYPES = {8: "int8_t", 16: "int16_t", 32: "int32_t"}


@dataclass
class CodegenConfig:
    mode: str = "static"                  # "static" | "dynamic"
    policy: Optional[PolicyConfig] = None
    batch: int = 1
    emit_leaves: Optional[bool] = None    # derived from folding when None
    n_features: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in ("static", "dynamic"):
            raise ValueError(f"unknown codegen mode {self.mode!r}")
        if self.mode == "dynamic" and self.policy is None:
            raise ValueError("dynamic codegen needs an embedded policy")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


def _family(flat: FlatEnsemble) -> str:
    if flat.meta.kind == "gbt":
        return "gbt_binary" if flat.meta.n_classes == 2 else "gbt_multi"
    return "rf_scalar" if flat.leaf_arity == 1 else "rf_multi"


def _fmt_array(values: Sequence[str], per_line: int = 10, indent: str = "    ") -> str:
    lines = []
    for i in range(0, len(values), per_line):
        lines.append(indent + ", ".join(values[i:i + per_line]) + ",")
    if lines:
        lines[-1] = lines[-1].rstrip(",")
    return "\n".join(lines)


def _check_model(flat: FlatEnsemble, cfg: CodegenConfig) -> None:
    if not flat.is_quantized:
        raise ValueError("codegen is integer-only; quantize the model first")
    problems = validate(flat)
    if problems:
        raise ValueError(f"model fails validation: {problems[0]}")
    if cfg.mode == "dynamic" and cfg.policy.kind == "qwyc" and flat.meta.n_classes != 2:
        raise ValueError("qwyc policies apply to binary ensembles only")


def _input_len(flat: FlatEnsemble, cfg: CodegenConfig) -> int:
    n_feat = cfg.n_features or flat.n_features
    if n_feat < flat.n_features:
        raise ValueError(f"n_features={n_feat} but the model reads feature "
                         f"index {flat.n_features - 1}")
    return n_feat


def emit_source(flat: FlatEnsemble, cfg: CodegenConfig) -> dict:
    """Returns {filename: text} for model_data.h, inference.c and inference.h."""
    _check_model(flat, cfg)
    quant = flat.meta.quant
    n_feat = _input_len(flat, cfg)
    emit_leaves = (not flat.folded) if cfg.emit_leaves is None else cfg.emit_leaves
    if emit_leaves and flat.folded:
        raise ValueError("cannot emit a LEAVES array from a folded model")

    input_t = INT_TYPES[quant.input_bits]
    leaf_t = INT_TYPES[quant.leaf_bits]
    alpha_bits = max(quant.input_bits, quant.leaf_bits) if flat.folded else quant.input_bits
    alpha_t = INT_TYPES[alpha_bits]

    return {
        "inference.h": _emit_header(n_feat, input_t),
        "model_data.h": _emit_model_data(flat, cfg, alpha_t, leaf_t, emit_leaves),
        "inference.c": _emit_inference(flat, cfg, emit_leaves),
    }


def _emit_header(n_feat: int, input_t: str) -> str:
    return f"""#ifndef INFERENCE_H
#define INFERENCE_H

#include <stdint.h>

#define INPUT_LEN {n_feat}

typedef {input_t} input_t;

int predict(const input_t *input);
int predict_with_count(const input_t *input, int32_t *trees_executed);

#endif /* INFERENCE_H */
"""


def _emit_model_data(flat: FlatEnsemble, cfg: CodegenConfig, alpha_t: str,
                     leaf_t: str, emit_leaves: bool) -> str:
    meta = flat.meta
    nodes = [f"{{{int(flat.fidx[i])}, {int(flat.alpha[i])}, {int(flat.right[i])}}}"
             for i in range(flat.n_nodes)]
    roots = [str(int(r)) for r in flat.roots]
    out = [
        "#ifndef MODEL_DATA_H",
        "#define MODEL_DATA_H",
        "",
        "#include <stdint.h>",
        "",
        f"#define N_NODES {flat.n_nodes}",
        f"#define N_TREES {flat.n_trees}",
        f"#define N_ESTIMATORS {meta.n_estimators}",
        f"#define N_CLASSES {meta.n_classes}",
        f"#define TREES_PER_ESTIMATOR {flat.trees_per_estimator}",
        f"#define LEAF_UNIT INT64_C({int(flat.leaf_unit)})",
    ]
    if cfg.mode == "dynamic":
        out += [
            f"#define BATCH {cfg.batch}",
            f"#define POLICY_TRIGGERS {meta.n_estimators // cfg.batch}",
        ]
        out += _policy_defines(flat, cfg.policy)
    out += [
        "",
        f"typedef {alpha_t} alpha_t;",
    ]
    if emit_leaves:
        out.append(f"typedef {leaf_t} leaf_t;")
    out += [
        "",
        "typedef struct {",
        "    int16_t fidx;",
        "    alpha_t alpha;",
        "    uint16_t right;",
        "} node_t;",
        "",
        f"static const node_t NODES[N_NODES] = {{",
        _fmt_array(nodes, per_line=6),
        "};",
        "",
        f"static const uint16_t ROOTS[N_TREES] = {{",
        _fmt_array(roots, per_line=16),
        "};",
    ]
    if emit_leaves:
        rows = [
            "{" + ", ".join(str(int(v)) for v in flat.leaves[r]) + "}"
            for r in range(flat.leaves.shape[0])
        ]
        out += [
            "",
            f"#define N_LEAF_ROWS {flat.leaves.shape[0]}",
            f"#define LEAF_ARITY {flat.leaf_arity}",
            "",
            "static const leaf_t LEAVES[N_LEAF_ROWS][LEAF_ARITY] = {",
            _fmt_array(rows, per_line=4),
            "};",
        ]
    out += ["", "#endif /* MODEL_DATA_H */", ""]
    return "\n".join(out)


def _policy_defines(flat: FlatEnsemble, policy: PolicyConfig) -> list:
    defines = []
    if policy.kind == "qwyc":
        quant = flat.meta.quant
        ep, em = policy.eps_plus, policy.eps_minus
        defines.append(f"#define EPSP_ENABLED {int(ep < 1.0)}")
        defines.append(f"#define EPSM_ENABLED {int(em > 0.0)}")
        if flat.meta.kind == "gbt":
            hi = _logit_bound(ep, quant, math.ceil) if ep < 1.0 else 0
            lo = _logit_bound(em, quant, math.floor) if em > 0.0 else 0
            defines.append(f"#define QWYC_HI INT64_C({hi})")
            defines.append(f"#define QWYC_LO INT64_C({lo})")
        else:
            defines.append(f"#define EPSP_FP INT64_C({math.ceil(ep * 65536.0)})")
            defines.append(f"#define EPSM_FP INT64_C({math.floor(em * 65536.0)})")
    elif not math.isfinite(policy.threshold):
        pass  # never-stop sentinel: the policy block compiles to stop = 0
    elif policy.normalized:
        defines.append(f"#define TH_FP INT64_C({threshold_fixed_point(policy.threshold)})")
    else:
        defines.append(f"#define RAW_TH INT64_C({math.ceil(policy.threshold)})")
    return defines


def _logit_bound(eps: float, quant, rounder) -> int:
    logit = math.log(eps / (1.0 - eps))
    return int(rounder(logit / quant.raw_per_unit))


def _acc_decl(family: str, n_classes: int) -> list:
    if family == "rf_multi" or family == "gbt_multi":
        return ["    int32_t P[N_CLASSES] = {0};"]
    if family == "rf_scalar":
        return ["    int32_t P0 = 0;"]
    return ["    int32_t S = 0;"]


def _acc_code(family: str, flat: FlatEnsemble, track_last: bool) -> list:
    """Per-tree accumulation statements (leaf node pointer in `n`, index in `t`)."""
    lines = []
    if family == "rf_multi":
        lines.append("        for (int j = 0; j < N_CLASSES; j++) "
                     "P[j] += LEAVES[n->right][j];")
        if track_last:
            lines.append("        last_row = n->right;")
        return lines
    value = "n->alpha" if flat.folded else "LEAVES[n->right][0]"
    if family == "rf_scalar":
        lines.append(f"        P0 += {value};")
    elif family == "gbt_binary":
        lines.append(f"        S += {value};")
    else:  # gbt_multi
        lines.append(f"        P[t % N_CLASSES] += {value};")
    if track_last:
        lines.append(f"        last_v = {value};")
    return lines


def _views_code(family: str, executed: str) -> list:
    """int64 accumulator views v0/v1 (binary) or none (multi uses P directly)."""
    if family == "rf_scalar":
        return [f"    int64_t v0 = P0;",
                f"    int64_t v1 = (int64_t){executed} * LEAF_UNIT - P0;"]
    if family == "gbt_binary":
        return ["    int64_t v0 = 0;",
                "    int64_t v1 = S;"]
    return []


def _argmax_code(family: str, executed: str) -> list:
    if family in ("rf_multi", "gbt_multi"):
        return [
            "    int best = 0;",
            "    for (int j = 1; j < N_CLASSES; j++) {",
            "        if (P[j] > P[best]) best = j;",
            "    }",
            "    res = best;",
        ]
    return _views_code(family, executed) + [
        "    res = (v0 >= v1) ? 0 : 1;",
    ]


def _score_code(flat: FlatEnsemble, policy: PolicyConfig, family: str) -> list:
    """Sets int64_t `score` (and fires for qwyc) from the live accumulator."""
    kind = policy.kind
    if kind != "qwyc" and not math.isfinite(policy.threshold):
        return ["        stop = 0;"]
    if kind == "qwyc":
        lines = []
        if family == "rf_multi":
            lines.append("        int64_t v1 = P[1];")
        elif family == "rf_scalar":
            lines.append("        int64_t v1 = (int64_t)e * LEAF_UNIT - P0;")
        else:
            lines.append("        int64_t v1 = S;")
        if flat.meta.kind == "gbt":
            lines.append("        int stop_pos = EPSP_ENABLED && v1 >= QWYC_HI;")
            lines.append("        int stop_neg = EPSM_ENABLED && v1 <= QWYC_LO;")
        else:
            lines.append("        int stop_pos = EPSP_ENABLED && "
                         "v1 * INT64_C(65536) >= EPSP_FP * e * LEAF_UNIT;")
            lines.append("        int stop_neg = EPSM_ENABLED && "
                         "v1 * INT64_C(65536) <= EPSM_FP * e * LEAF_UNIT;")
        lines.append("        if (stop_pos || stop_neg) { stop = 1; "
                     "forced = stop_pos ? 1 : 0; }")
        return lines

    agg = kind in ("agg_max", "agg_score_margin")
    want_margin = kind in ("score_margin", "agg_score_margin")
    lines = []
    pair = None  # (a, b) expressions for two-value score views
    if agg:
        if family in ("rf_multi", "gbt_multi"):
            lines += [
                "        int64_t top = P[0], second = INT64_MIN;",
                "        for (int j = 1; j < N_CLASSES; j++) {",
                "            if (P[j] > top) { second = top; top = P[j]; }",
                "            else if (P[j] > second) { second = P[j]; }",
                "        }",
                f"        int64_t score = {'top - second' if want_margin else 'top'};",
            ]
        elif family == "rf_scalar":
            lines.append("        int64_t a = P0, b = (int64_t)e * LEAF_UNIT - P0;")
            pair = ("a", "b")
        else:
            pair = ("INT64_C(0)", "(int64_t)S")
    else:
        # per-tree kinds score only the last executed tree's output
        if family == "rf_multi":
            lines += [
                "        int64_t top = LEAVES[last_row][0], second = INT64_MIN;",
                "        for (int j = 1; j < N_CLASSES; j++) {",
                "            int64_t lv = LEAVES[last_row][j];",
                "            if (lv > top) { second = top; top = lv; }",
                "            else if (lv > second) { second = lv; }",
                "        }",
                f"        int64_t score = {'top - second' if want_margin else 'top'};",
            ]
        elif family == "rf_scalar":
            lines.append("        int64_t a = last_v, b = LEAF_UNIT - last_v;")
            pair = ("a", "b")
        elif family == "gbt_binary":
            pair = ("INT64_C(0)", "(int64_t)last_v")
        else:
            # the last tree's view is one value among M-1 zeros, so both the
            # max and the margin collapse to max(last_v, 0)
            lines.append("        int64_t score = last_v > 0 ? last_v : 0;")
    if pair is not None:
        a, b = pair
        if want_margin:
            lines.append(f"        int64_t score = {a} > {b} ? {a} - {b} : {b} - {a};")
        else:
            lines.append(f"        int64_t score = {a} > {b} ? {a} : {b};")
    norm_e = "e" if agg else "1"
    if policy.normalized:
        lines.append(f"        stop = score * INT64_C(65536) >= "
                     f"TH_FP * {norm_e} * LEAF_UNIT;")
    else:
        lines.append("        stop = score >= RAW_TH;")
    return lines


def _emit_inference(flat: FlatEnsemble, cfg: CodegenConfig, emit_leaves: bool) -> str:
    family = _family(flat)
    dynamic = cfg.mode == "dynamic"
    track_last = (dynamic and cfg.policy.kind in ("max", "score_margin")
                  and math.isfinite(cfg.policy.threshold))
    acc = _acc_code(family, flat, track_last)

    body = [
        '#include "inference.h"',
        '#include "model_data.h"',
        "",
        "static const node_t *walk_tree(int t, const input_t *input) {",
        "    const node_t *n = &NODES[ROOTS[t]];",
        "    while (n->fidx != -2) {",
        "        if (input[n->fidx] > n->alpha) n += n->right;",
        "        else n += 1;",
        "    }",
        "    return n;",
        "}",
        "",
        "int predict_with_count(const input_t *input, int32_t *trees_executed) {",
    ]
    body += _acc_decl(family, flat.meta.n_classes)
    if track_last:
        if family == "rf_multi":
            body.append("    uint16_t last_row = 0;")
        else:
            body.append("    int32_t last_v = 0;")
    body.append("    int res = 0;")

    if not dynamic:
        body += [
            "    for (int t = 0; t < N_TREES; t++) {",
            "        const node_t *n = walk_tree(t, input);",
        ]
        body += acc
        body += [
            "    }",
        ]
        body += _argmax_code(family, "N_ESTIMATORS")
        body += [
            "    if (trees_executed) *trees_executed = N_TREES;",
            "    return res;",
            "}",
        ]
    else:
        score_lines = _score_code(flat, cfg.policy, family)
        needs_e = any(re.search(r"\be\b", line) for line in score_lines)
        body += [
            "    int t = 0;",
            "    int stop = 0;",
            "    int forced = -1;",
            "    for (int bt = 0; bt < POLICY_TRIGGERS && !stop; bt++) {",
            "        for (int i = 0; i < BATCH * TREES_PER_ESTIMATOR; i++) {",
            "            const node_t *n = walk_tree(t, input);",
        ]
        body += ["    " + line for line in acc]
        body += [
            "            t++;",
            "        }",
        ]
        if needs_e:
            body.append("        int64_t e = (int64_t)(bt + 1) * BATCH;")
        body += score_lines
        body += [
            "    }",
            "    if (!stop) {",
            "        while (t < N_TREES) {",
            "            const node_t *n = walk_tree(t, input);",
        ]
        body += ["    " + line for line in acc]
        body += [
            "            t++;",
            "        }",
            "    }",
            "    if (forced >= 0) {",
            "        res = forced;",
            "    } else {",
        ]
        body += ["    " + line for line in
                 _argmax_code(family, "(t / TREES_PER_ESTIMATOR)")]
        body += [
            "    }",
            "    if (trees_executed) *trees_executed = t;",
            "    return res;",
            "}",
        ]
    body += [
        "",
        "int predict(const input_t *input) {",
        "    return predict_with_count(input, (int32_t *)0);",
        "}",
        "",
    ]
    if not emit_leaves and family == "rf_multi":
        raise ValueError("multi-class RF needs the LEAVES array")
    return "\n".join(body)


def emit_golden_vectors(flat: FlatEnsemble, inputs: Sequence[np.ndarray],
                        cfg: CodegenConfig) -> str:
    """CSV pairing inputs with the engine's class and trees-executed counts."""
    n_feat = _input_len(flat, cfg)
    header = ",".join([f"input_{i}" for i in range(n_feat)]
                      + ["expected_class", "expected_trees"])
    lines = [header]
    engine_cfg = EngineConfig(cores=1, batch_size=cfg.batch,
                              policy=cfg.policy if cfg.mode == "dynamic" else None)
    for x in inputs:
        x = np.asarray(x)
        if x.shape[0] != n_feat:
            raise ValueError(f"input has {x.shape[0]} features, expected {n_feat}")
        if cfg.mode == "dynamic":
            cls, trace, _ = predict_dynamic(flat, x, engine_cfg)
        else:
            cls, trace, _ = predict_static(flat, x, engine_cfg)
        lines.append(",".join([str(int(v)) for v in x]
                              + [str(cls), str(trace.trees_executed)]))
    return "\n".join(lines) + "\n"


def write_source(flat: FlatEnsemble, cfg: CodegenConfig, out_dir) -> dict:
    """Emit source files to a directory; returns {filename: path}."""
    import os

    files = emit_source(flat, cfg)
    paths = {}
    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        paths[name] = path
    return paths
