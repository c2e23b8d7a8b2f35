import numpy as np
import pytest

from flatforest.data import load_dataset, save_dataset, synth_dataset
from flatforest.metrics import metric
from flatforest.trainer import fit_tree


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadDataset:
    def test_well_formed(self, tmp_path):
        path = write(tmp_path, "f0,f1,label,split\n"
                               "0.5,1.0,0,train\n"
                               "0.1,2.0,1,val\n"
                               "0.9,3.0,1,test\n")
        splits = load_dataset(path)
        assert splits.train.n == splits.val.n == splits.test.n == 1
        assert splits.train.features.tolist() == [[0.5, 1.0]]
        assert splits.val.labels.tolist() == [1]

    def test_missing_column_names_line(self, tmp_path):
        path = write(tmp_path, "f0,f1,label,split\n0.5,0,train\n")
        with pytest.raises(ValueError, match="line 2"):
            load_dataset(path)

    def test_label_out_of_range(self, tmp_path):
        path = write(tmp_path, "f0,label,split\n1.0,3,train\n")
        with pytest.raises(ValueError, match="label out of range"):
            load_dataset(path, schema={"n_classes": 3})

    def test_nan_rejected(self, tmp_path):
        path = write(tmp_path, "f0,label,split\nnan,0,train\n")
        with pytest.raises(ValueError, match="line 2"):
            load_dataset(path)

    def test_bad_split_value(self, tmp_path):
        path = write(tmp_path, "f0,label,split\n1.0,0,dev\n")
        with pytest.raises(ValueError, match="split"):
            load_dataset(path)

    def test_round_trip(self, tmp_path):
        splits = synth_dataset("gaussian_blobs", 120, 3, 4, 0.3, seed=7)
        path = tmp_path / "ds.csv"
        save_dataset(splits, path)
        again = load_dataset(path)
        for name in ("train", "val", "test"):
            assert np.array_equal(again.get(name).features, splits.get(name).features)
            assert np.array_equal(again.get(name).labels, splits.get(name).labels)


class TestSynth:
    def test_deterministic(self):
        a = synth_dataset("gaussian_blobs", 200, 3, 5, 0.4, seed=12)
        b = synth_dataset("gaussian_blobs", 200, 3, 5, 0.4, seed=12)
        for name in ("train", "val", "test"):
            assert np.array_equal(a.get(name).features, b.get(name).features)
            assert np.array_equal(a.get(name).labels, b.get(name).labels)

    def test_different_seeds_differ(self):
        a = synth_dataset("gaussian_blobs", 200, 3, 5, 0.4, seed=1)
        b = synth_dataset("gaussian_blobs", 200, 3, 5, 0.4, seed=2)
        assert not np.array_equal(a.train.features, b.train.features)

    def test_separable_blobs_reach_full_train_accuracy(self):
        # difficulty 0: a depth-F tree separates the classes almost perfectly
        splits = synth_dataset("gaussian_blobs", 300, 3, 4, 0.0, seed=5)
        tree = fit_tree(splits.train, "classification", max_depth=4, n_classes=3)

        def tree_pred(x):
            from flatforest.ensemble import Internal

            node = tree
            while isinstance(node, Internal):
                node = node.right if x[node.feature] > node.threshold else node.left
            return int(np.argmax(node.values))

        preds = np.array([tree_pred(x) for x in splits.train.features])
        assert np.mean(preds == splits.train.labels) >= 0.99

    def test_minority_ratio_counts(self):
        splits = synth_dataset("binary_imbalanced", 1000, 2, 4, 0.3, seed=3,
                               minority_ratio=0.1)
        labels = np.concatenate([splits.get(s).labels for s in ("train", "val", "test")])
        counts = np.bincount(labels)
        assert counts.tolist() == [900, 100]

    def test_every_split_has_every_class(self):
        splits = synth_dataset("gaussian_blobs", 90, 5, 4, 0.5, seed=9)
        for name in ("train", "val", "test"):
            assert set(np.unique(splits.get(name).labels)) == set(range(5))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            synth_dataset("mystery", 100, 2, 4, 0.5, seed=0)
        with pytest.raises(ValueError):
            synth_dataset("gaussian_blobs", 1, 2, 4, 0.5, seed=0)
        with pytest.raises(ValueError):
            synth_dataset("binary_imbalanced", 100, 3, 4, 0.5, seed=0)
        with pytest.raises(ValueError):
            synth_dataset("gaussian_blobs", 100, 2, 4, 1.5, seed=0)


class TestMetric:
    def test_balanced_accuracy_example(self):
        # recalls {0.5, 1.0} -> 0.75
        assert metric([0, 1, 1], [0, 0, 1], "balanced_accuracy") == pytest.approx(0.75)

    def test_perfect_scores(self):
        assert metric([0, 1, 2], [0, 1, 2], "balanced_accuracy") == 1.0
        assert metric([0, 1, 1], [0, 1, 1], "f1_binary") == 1.0

    def test_f1_example(self):
        # TP=1, FP=1, FN=0: precision 0.5, recall 1 -> 2/3
        assert metric([1, 1], [1, 0], "f1_binary") == pytest.approx(2 / 3)

    def test_absent_class_errors(self):
        with pytest.raises(ValueError, match="absent"):
            metric([0, 0], [0, 0], "balanced_accuracy", n_classes=2)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metric([0], [0, 1], "balanced_accuracy")

    def test_f1_requires_binary_labels(self):
        with pytest.raises(ValueError):
            metric([0, 1], [0, 2], "f1_binary")
