"""flatforest: tree ensembles compiled to flat arrays, quantized, executed
with early-stopping policies, and emitted as portable C."""

from .codegen import CodegenConfig, emit_golden_vectors, emit_source
from .data import Dataset, SplitDataset, load_dataset, save_dataset, synth_dataset
from .engine import (CostModel, CostReport, EngineConfig, InferenceTrace, eval_tree,
                     predict_dynamic, predict_static, predict_static_threaded,
                     simulate_cost)
from .ensemble import (EnsembleMeta, FlatEnsemble, Internal, Leaf, MemoryPlan,
                       NodeRecord, build_flat, flat_to_trees, plan_memory, validate)
from .metrics import metric
from .model_io import load_model, save_model
from .policies import (PolicyConfig, ScoreState, calibrate_qwyc, policy_decide,
                       score_margin, score_max)
from .quantizer import (QuantSpec, quantize_ensemble, quantize_features,
                        quantize_inputs_and_thresholds, quantize_leaves,
                        quantize_symmetric)
from .search import (GridSpace, SweepPoint, default_thresholds, grid_search,
                     order_estimators, pareto_front, threshold_sweep)
from .trainer import (FitParams, fit_gbt, fit_random_forest, fit_tree,
                      oversample_minority)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
