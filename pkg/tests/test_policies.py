import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatforest.data import Dataset
from flatforest.engine import predict_dynamic, EngineConfig
from flatforest.policies import (NEVER_STOP, PolicyConfig, ScoreState, calibrate_qwyc,
                                 policy_decide, qwyc_positive_score, score_margin,
                                 score_max)

from conftest import random_inputs, random_quantized_ensemble


def state(acc, trees=1, estimators=1, leaf_unit=1.0, kind="rf", raw_per_unit=1.0):
    return ScoreState(acc=np.asarray(acc), trees_executed=trees,
                      estimators_executed=estimators, leaf_unit=leaf_unit,
                      raw_per_unit=raw_per_unit, kind=kind)


class TestScores:
    def test_max_uncertain_four_class(self):
        assert score_max([0.5, 0.5, 0.0, 0.0]) == 0.5

    def test_max_uniform(self):
        assert score_max([0.25, 0.25, 0.25, 0.25]) == 0.25

    def test_max_one_hot(self):
        assert score_max([0, 0, 1]) == 1

    def test_margin_duplicated_top_is_zero(self):
        assert score_margin([0.5, 0.5, 0.0, 0.0]) == 0.0

    def test_margin_one_hot(self):
        assert score_margin([1, 0, 0]) == 1

    def test_margin_plain(self):
        assert score_margin([0.6, 0.3, 0.1]) == pytest.approx(0.3)

    def test_errors(self):
        with pytest.raises(ValueError):
            score_max([])
        with pytest.raises(ValueError):
            score_margin([1.0])

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
    @settings(max_examples=200)
    def test_margin_nonnegative_and_zero_iff_duplicated(self, p):
        m = score_margin(p)
        assert m >= 0
        top = max(p)
        assert (m == 0) == (sorted(p)[-2] == top)

    @given(st.floats(0, 1))
    @settings(max_examples=100)
    def test_binary_margin_transform(self, s):
        # on normalized binary vectors sm = 2 s - 1 for the winning side
        p = [s, 1.0 - s]
        assert score_margin(p) == pytest.approx(abs(2 * s - 1))


class TestPolicyDecide:
    def test_agg_margin_stops(self):
        cfg = PolicyConfig("agg_score_margin", threshold=0.5)
        assert policy_decide(cfg, state([0.9, 0.1]))

    def test_threshold_zero_always_stops(self):
        for kind in ("agg_max", "agg_score_margin"):
            cfg = PolicyConfig(kind, threshold=0.0)
            assert policy_decide(cfg, state([0.1, 0.05, 0.0], estimators=1))

    def test_never_stop_sentinel(self):
        cfg = PolicyConfig("agg_score_margin", threshold=NEVER_STOP)
        assert not policy_decide(cfg, state([1.0, 0.0]))

    def test_above_max_normalized_score_never_stops(self):
        cfg = PolicyConfig("agg_max", threshold=1.01)
        assert not policy_decide(cfg, state([1.0, 0.0], estimators=1))
        cfg = PolicyConfig("agg_max", threshold=1.0)
        assert policy_decide(cfg, state([1.0, 0.0], estimators=1))

    def test_per_tree_kinds_need_last_tree(self):
        cfg = PolicyConfig("score_margin", threshold=0.5)
        with pytest.raises(ValueError, match="last"):
            policy_decide(cfg, state([1.0, 0.0]))
        assert policy_decide(cfg, state([0.0, 0.0]), last_tree_p=np.array([0.9, 0.1]))

    def test_normalization_divides_by_estimators(self):
        cfg = PolicyConfig("agg_score_margin", threshold=0.5)
        # margin 0.8 over 2 estimators -> normalized 0.4 < 0.5
        assert not policy_decide(cfg, state([1.4, 0.6], estimators=2))
        assert policy_decide(cfg, state([1.8, 0.2], estimators=2))

    def test_agg_max_equals_agg_margin_under_transform_binary(self):
        # SM = 2 S - 1 on normalized 2-class accumulators: decisions match
        # when thresholds are mapped by t_h(SM) = 2 t_h(S) - 1. Dyadic grids
        # keep the transform exact in binary floating point.
        for k in range(0, 65):
            acc0 = k / 64.0
            accv = [acc0, 1.0 - acc0]
            for j in range(32, 65):
                th_s = j / 64.0
                a = policy_decide(PolicyConfig("agg_max", threshold=th_s),
                                  state(accv))
                b = policy_decide(PolicyConfig("agg_score_margin",
                                               threshold=2 * th_s - 1),
                                  state(accv))
                assert a == b

    def test_agg_max_equals_agg_margin_integer_mode(self, rng):
        # same equivalence, exact in the fixed-point path: S and SM relate by
        # SM = 2 S - e * U on 2-class integer accumulators
        for _ in range(200):
            unit = int(rng.integers(64, 257))
            e = int(rng.integers(1, 9))
            acc0 = int(rng.integers(0, e * unit + 1))
            accv = np.array([acc0, e * unit - acc0], dtype=np.int64)
            k = int(rng.integers(0, 65))
            th_s = k / 64.0
            a = policy_decide(PolicyConfig("agg_max", threshold=th_s),
                              state(accv, trees=e, estimators=e, leaf_unit=unit))
            b = policy_decide(PolicyConfig("agg_score_margin", threshold=2 * th_s - 1),
                              state(accv, trees=e, estimators=e, leaf_unit=unit))
            assert a == b

    def test_integer_mode_fixed_point_no_division(self):
        # integer accumulators with leaf_unit 100 over 3 estimators:
        # margin 150 vs threshold 0.5 -> 150 * 2^16 >= 32768 * 3 * 100
        st_int = state(np.array([250, 100], dtype=np.int64), trees=3,
                       estimators=3, leaf_unit=100)
        assert st_int.integer_mode
        assert policy_decide(PolicyConfig("agg_score_margin", 0.5), st_int)
        st_int2 = state(np.array([220, 120], dtype=np.int64), trees=3,
                        estimators=3, leaf_unit=100)
        assert not policy_decide(PolicyConfig("agg_score_margin", 0.5), st_int2)

    def test_scale_invariance_integer_mode(self, rng):
        # scaling acc and leaf_unit together never changes decisions
        for _ in range(100):
            acc = rng.integers(0, 400, size=3)
            unit = int(rng.integers(50, 200))
            e = int(rng.integers(1, 5))
            th = float(rng.random())
            for k in (1, 2, 5):
                a = policy_decide(PolicyConfig("agg_score_margin", th),
                                  state(acc.astype(np.int64), trees=e,
                                        estimators=e, leaf_unit=unit))
                b = policy_decide(PolicyConfig("agg_score_margin", th),
                                  state((acc * k).astype(np.int64), trees=e,
                                        estimators=e, leaf_unit=unit * k))
                assert a == b

    def test_raw_mode_scale_with_threshold(self):
        cfg = PolicyConfig("agg_max", threshold=3.0, normalized=False)
        cfg2 = PolicyConfig("agg_max", threshold=6.0, normalized=False)
        s1 = state(np.array([0.0, 3.5]), kind="gbt")
        s2 = state(np.array([0.0, 7.0]), kind="gbt")
        assert policy_decide(cfg, s1) == policy_decide(cfg2, s2)

    def test_qwyc_requires_binary(self):
        cfg = PolicyConfig("qwyc", eps_minus=0.2, eps_plus=0.8)
        with pytest.raises(ValueError, match="binary"):
            policy_decide(cfg, state([1.0, 0.0, 0.0]))

    def test_qwyc_two_sided(self):
        cfg = PolicyConfig("qwyc", eps_minus=0.2, eps_plus=0.8)
        assert policy_decide(cfg, state([0.1, 0.9]))      # p = 0.9 >= 0.8
        assert policy_decide(cfg, state([0.9, 0.1]))      # p = 0.1 <= 0.2
        assert not policy_decide(cfg, state([0.5, 0.5]))  # p = 0.5 in between

    def test_qwyc_disabled_sentinels(self):
        cfg = PolicyConfig("qwyc", eps_minus=0.0, eps_plus=1.0)
        assert not policy_decide(cfg, state([0.0, 1.0]))  # p = 1.0, exit disabled
        assert not policy_decide(cfg, state([1.0, 0.0]))  # p = 0.0, exit disabled


def _brute_force_qwyc_oracle(flat, x_val):
    """Replay every per-estimator prefix independently of the library path."""
    from flatforest.engine import unit_view_deltas, _make_state

    units, _ = unit_view_deltas(flat, x_val)
    cum = np.cumsum(units, axis=0)
    n_units, n, _ = cum.shape
    scores = np.zeros((n_units, n))
    for e in range(n_units):
        for i in range(n):
            scores[e, i] = qwyc_positive_score(
                _make_state(flat, cum[e, i], e + 1, e + 1))
    finals = np.argmax(cum[-1], axis=1)
    return scores, finals


class TestCalibrateQwyc:
    def _binary_model(self, rng, n_estimators=6):
        return random_quantized_ensemble(rng, "rf", n_estimators, 2, 4, 5, fold=False)

    def test_calibration_preserves_predictions(self, rng):
        flat = self._binary_model(rng)
        x = random_inputs(rng, 60, 5)
        val = Dataset(features=x, labels=np.zeros(60, dtype=np.int64), split="val")
        em, ep = calibrate_qwyc(flat, val)
        assert em <= ep
        scores, finals = _brute_force_qwyc_oracle(flat, x)
        # validity: any prefix crossing an enabled exit agrees with the final label
        for i in range(60):
            for e in range(scores.shape[0]):
                if ep < 1.0 and scores[e, i] >= ep:
                    assert finals[i] == 1
                if em > 0.0 and scores[e, i] <= em:
                    assert finals[i] == 0
        # replayed dynamic inference flips nothing
        cfg = EngineConfig(cores=1, batch_size=1,
                           policy=PolicyConfig("qwyc", eps_minus=em, eps_plus=ep))
        for i in range(60):
            cls, _, _ = predict_dynamic(flat, x[i], cfg)
            assert cls == finals[i]

    def test_eps_plus_is_smallest_valid_observed(self, rng):
        flat = self._binary_model(rng)
        x = random_inputs(rng, 40, 5)
        val = Dataset(features=x, labels=np.zeros(40, dtype=np.int64), split="val")
        em, ep = calibrate_qwyc(flat, val)
        scores, finals = _brute_force_qwyc_oracle(flat, x)
        pos = finals == 1
        neg = ~pos
        if pos.any() and ep < 1.0:
            neg_ceiling = scores[:, neg].max() if neg.any() else -np.inf
            candidates = np.unique(scores[:, pos])
            assert ep == float(candidates[candidates > neg_ceiling][0])

    def test_single_estimator_dynamic_equals_static(self, rng):
        flat = self._binary_model(rng, n_estimators=1)
        x = random_inputs(rng, 30, 5)
        val = Dataset(features=x, labels=np.zeros(30, dtype=np.int64), split="val")
        em, ep = calibrate_qwyc(flat, val)
        scores, finals = _brute_force_qwyc_oracle(flat, x)
        assert scores.shape[0] == 1
        if (finals == 1).any() and ep < 1.0:
            assert ep <= scores[0][finals == 1].max()

    def test_adversarial_sample_disables_exit(self):
        # hand-built 2-tree model where a negative-final sample first sees a
        # perfectly confident positive tree: the positive exit must shut off
        from flatforest.ensemble import EnsembleMeta, Internal, Leaf, build_flat
        from flatforest.quantizer import QuantSpec

        spec = QuantSpec(8, 8, 1.0, 2.0)
        t1 = Leaf((0,))            # P(class0) = 0 -> fully positive vote
        t2 = Leaf((64,))           # P(class0) = 1 in quantized units
        meta = EnsembleMeta("rf", 2, 2, 1, quant=spec)
        flat = build_flat([t1, t2], meta, fold_leaves=True)
        x = np.zeros((1, 1), dtype=np.int64)
        val = Dataset(features=x, labels=np.zeros(1, dtype=np.int64), split="val")
        # prefix 1: p = 1.0 (all-positive), final: p = 0.5 -> class 0
        em, ep = calibrate_qwyc(flat, val)
        assert ep == 1.0

    def test_requires_binary_and_data(self, rng):
        flat3 = random_quantized_ensemble(rng, "rf", 3, 3, 3, 4)
        val = Dataset(features=random_inputs(rng, 5, 4),
                      labels=np.zeros(5, dtype=np.int64), split="val")
        with pytest.raises(ValueError, match="binary"):
            calibrate_qwyc(flat3, val)
        flat2 = self._binary_model(rng)
        empty = Dataset(features=np.empty((0, 5), dtype=np.int64),
                        labels=np.empty(0, dtype=np.int64), split="val")
        with pytest.raises(ValueError, match="empty"):
            calibrate_qwyc(flat2, empty)


class TestGbtArgmaxInvariance:
    def test_raw_argmax_equals_converted_argmax(self, rng):
        # any strictly increasing per-class conversion preserves the argmax,
        # so confidence can be estimated on raw scores
        for _ in range(200):
            raw = rng.normal(size=int(rng.integers(2, 6)))
            softmax = np.exp(raw - raw.max())
            softmax /= softmax.sum()
            assert int(np.argmax(raw)) == int(np.argmax(softmax))
            assert int(np.argmax(raw)) == int(np.argmax(np.tanh(raw)))
        # binary: the logistic sign rule equals argmax of [0, s]
        for s in rng.normal(size=50):
            p1 = 1.0 / (1.0 + np.exp(-s))
            assert int(np.argmax([0.0, s])) == int(np.argmax([1.0 - p1, p1]))


class TestCalibrateWithOrder:
    def test_order_argument_matches_reordered_model(self, rng):
        from flatforest.search import apply_estimator_order

        flat = random_quantized_ensemble(rng, "rf", 6, 2, 4, 5, fold=False)
        x = random_inputs(rng, 40, 5)
        val = Dataset(features=x, labels=np.zeros(40, dtype=np.int64), split="val")
        perm = rng.permutation(6)
        via_arg = calibrate_qwyc(flat, val, order=perm)
        via_model = calibrate_qwyc(apply_estimator_order(flat, perm), val)
        assert via_arg == via_model
