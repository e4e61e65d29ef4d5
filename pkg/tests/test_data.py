import json

import numpy as np
import pytest

from tabrebal import data as td
from tabrebal.errors import (
    DecodeError,
    DegenerateLabels,
    InsufficientClassRows,
    SchemaError,
)


def write_dataset(tmp_path, rows, metadata, header):
    csv_path = tmp_path / "raw.csv"
    meta_path = tmp_path / "meta.json"
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    with open(meta_path, "w") as fh:
        json.dump(metadata, fh)
    return csv_path, meta_path


BASIC_META = {
    "label": "y",
    "positive_class": "1",
    "variables": [{"name": "amount", "kind": "numerical"}],
}


class TestLoadRaw:
    def test_numerical_min_max_scaling(self, tmp_path):
        csv_path, meta_path = write_dataset(
            tmp_path, [[10, 0], [20, 1], [30, 0]], BASIC_META, ["amount", "y"]
        )
        ds = td.load_raw(csv_path, meta_path)
        assert np.allclose(ds.features[:, 0], [0.0, 0.5, 1.0])
        assert ds.meta[0].scale_min == 10 and ds.meta[0].scale_max == 30

    def test_categorical_one_hot_blocks(self, tmp_path):
        meta = {
            "label": "y",
            "positive_class": "1",
            "variables": [{"name": "color", "kind": "categorical", "categories": ["a", "b", "c"]}],
        }
        csv_path, meta_path = write_dataset(
            tmp_path, [["a", 0], ["b", 1], ["c", 0], ["b", 0]], meta, ["color", "y"]
        )
        ds = td.load_raw(csv_path, meta_path)
        assert ds.width == 3
        assert np.all(np.isin(ds.features, (0.0, 1.0)))
        assert np.allclose(ds.features.sum(axis=1), 1.0)

    def test_binary_yes_no_single_column(self, tmp_path):
        meta = {
            "label": "y",
            "positive_class": "1",
            "variables": [{"name": "flag", "kind": "binary", "values": ["no", "yes"]}],
        }
        csv_path, meta_path = write_dataset(
            tmp_path, [["yes", 1], ["no", 0], ["yes", 0]], meta, ["flag", "y"]
        )
        ds = td.load_raw(csv_path, meta_path)
        assert ds.width == 1
        assert ds.meta[0].width == 1
        assert np.array_equal(ds.features[:, 0], [1.0, 0.0, 1.0])

    def test_unknown_category_names_row_and_column(self, tmp_path):
        meta = {
            "label": "y",
            "positive_class": "1",
            "variables": [{"name": "color", "kind": "categorical", "categories": ["a", "b", "c"]}],
        }
        csv_path, meta_path = write_dataset(
            tmp_path, [["a", 0], ["z", 1], ["c", 0]], meta, ["color", "y"]
        )
        with pytest.raises(DecodeError, match="'color'.*row 3"):
            td.load_raw(csv_path, meta_path)

    def test_missing_value_is_rejected(self, tmp_path):
        csv_path, meta_path = write_dataset(
            tmp_path, [[10, 0], ["", 1]], BASIC_META, ["amount", "y"]
        )
        with pytest.raises(DecodeError, match="missing"):
            td.load_raw(csv_path, meta_path)

    def test_metadata_csv_mismatch(self, tmp_path):
        csv_path, meta_path = write_dataset(
            tmp_path, [[10, 5, 0]], BASIC_META, ["amount", "extra", "y"]
        )
        with pytest.raises(SchemaError, match="mismatch"):
            td.load_raw(csv_path, meta_path)

    def test_constant_numerical_column_maps_to_zero(self, tmp_path):
        csv_path, meta_path = write_dataset(
            tmp_path, [[7, 0], [7, 1]], BASIC_META, ["amount", "y"]
        )
        ds = td.load_raw(csv_path, meta_path)
        assert np.all(ds.features[:, 0] == 0.0)

    def test_two_category_variable_must_be_binary(self):
        with pytest.raises(SchemaError, match="binary"):
            td.VariableMeta(name="x", kind="categorical", categories=("a", "b"))


class TestRoundTrip:
    def test_decode_reproduces_raw_values(self, tmp_path):
        meta = {
            "label": "y",
            "positive_class": "pos",
            "variables": [
                {"name": "color", "kind": "categorical", "categories": ["a", "b", "c"]},
                {"name": "flag", "kind": "binary", "values": ["no", "yes"]},
                {"name": "amount", "kind": "numerical"},
            ],
        }
        raw_rows = [
            ["a", "yes", 12.5, "pos"],
            ["c", "no", -3.25, "neg"],
            ["b", "yes", 7.75, "pos"],
        ]
        csv_path, meta_path = write_dataset(tmp_path, raw_rows, meta, ["color", "flag", "amount", "y"])
        ds = td.load_raw(csv_path, meta_path)
        decoded = td.decode_rows(ds.features, ds.meta)
        for rec, raw in zip(decoded, raw_rows):
            assert rec["color"] == raw[0]
            assert rec["flag"] == raw[1]
            assert abs(rec["amount"] - raw[2]) < 1e-9

    def test_encoded_save_load_roundtrip(self, tmp_path):
        meta = {
            "label": "y",
            "positive_class": "1",
            "variables": [
                {"name": "color", "kind": "categorical", "categories": ["a", "b", "c"]},
                {"name": "amount", "kind": "numerical"},
            ],
        }
        csv_path, meta_path = write_dataset(
            tmp_path, [["a", 1.0, 0], ["b", 2.0, 1], ["c", 3.0, 1]], meta,
            ["color", "amount", "y"],
        )
        ds = td.load_raw(csv_path, meta_path)
        out_csv, out_meta = td.save_encoded(ds, tmp_path / "enc")
        again = td.load_encoded(out_csv, out_meta)
        assert np.array_equal(again.features, ds.features)
        assert np.array_equal(again.labels, ds.labels)
        # re-saving is byte identical
        first = out_csv.read_bytes()
        td.save_encoded(again, tmp_path / "enc")
        assert out_csv.read_bytes() == first


class TestComputeIr:
    def test_simple_ratio(self):
        labels = np.array([1] * 100 + [0] * 300)
        assert td.compute_ir(labels) == pytest.approx(1 / 3, abs=1e-4)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        labels = np.array([1] * 17 + [0] * 83)
        assert td.compute_ir(labels) == td.compute_ir(rng.permutation(labels))

    def test_single_class_raises(self):
        with pytest.raises(DegenerateLabels):
            td.compute_ir(np.zeros(10, dtype=int))


def _toy_dataset(n=100, minority=10, seed=0):
    rng = np.random.default_rng(seed)
    features = rng.random((n, 2))
    labels = np.zeros(n, dtype=int)
    labels[:minority] = 1
    meta = [
        td.VariableMeta(name="f0", kind="numerical"),
        td.VariableMeta(name="f1", kind="numerical"),
    ]
    return td.Dataset(name="toy", features=features, labels=labels, meta=meta)


class TestFolds:
    def test_stratified_minority_per_fold(self):
        ds = _toy_dataset(n=100, minority=10)
        folds = td.make_folds(ds, 10, seed=1)
        for f in range(10):
            test = folds.test_indices(f)
            assert np.sum(ds.labels[test] == 1) == 1
            assert len(test) == 10

    def test_two_folds_on_four_balanced_rows(self):
        ds = _toy_dataset(n=4, minority=2)
        folds = td.make_folds(ds, 2, seed=3)
        for f in range(2):
            test = folds.test_indices(f)
            assert np.sum(ds.labels[test] == 1) == 1
            assert np.sum(ds.labels[test] == 0) == 1

    def test_same_seed_identical_assignments(self):
        ds = _toy_dataset()
        a = td.make_folds(ds, 5, seed=9)
        b = td.make_folds(ds, 5, seed=9)
        assert np.array_equal(a.assignments, b.assignments)
        for f in range(5):
            assert np.array_equal(a.validation_indices(f), b.validation_indices(f))

    def test_union_is_everything_and_folds_disjoint(self):
        ds = _toy_dataset(n=97, minority=13)
        folds = td.make_folds(ds, 7, seed=2)
        seen = np.concatenate([folds.test_indices(f) for f in range(7)])
        assert sorted(seen.tolist()) == list(range(97))

    def test_validation_subset_of_training_part(self):
        ds = _toy_dataset(n=100, minority=20)
        folds = td.make_folds(ds, 5, validation_fraction=0.1, seed=4)
        for f in range(5):
            val = set(folds.validation_indices(f).tolist())
            train = set(folds.train_indices(f).tolist())
            assert val <= train
            assert val.isdisjoint(set(folds.test_indices(f).tolist()))
            main = set(folds.train_main_indices(f).tolist())
            assert main | val == train and main.isdisjoint(val)

    def test_class_too_small_raises(self):
        ds = _toy_dataset(n=20, minority=3)
        with pytest.raises(InsufficientClassRows):
            td.make_folds(ds, 5, seed=0)


MIXED_META = [
    td.VariableMeta(name="color", kind="categorical", categories=("a", "b", "c")),
    td.VariableMeta(name="flag", kind="binary", values=("0", "1")),
    td.VariableMeta(name="amount", kind="numerical"),
]


class TestDiscretize:
    def test_categorical_argmax(self):
        row = np.array([0.2, 0.5, 0.3, 0.9, 0.4])
        out = td.discretize(row, MIXED_META)
        assert np.array_equal(out[:3], [0, 1, 0])

    def test_binary_threshold(self):
        assert td.discretize(np.array([1, 0, 0, 0.49, 0.5]), MIXED_META)[3] == 0.0
        assert td.discretize(np.array([1, 0, 0, 0.51, 0.5]), MIXED_META)[3] == 1.0

    def test_numerical_clamp(self):
        assert td.discretize(np.array([1, 0, 0, 1, 1.2]), MIXED_META)[4] == 1.0
        assert td.discretize(np.array([1, 0, 0, 1, -0.2]), MIXED_META)[4] == 0.0

    def test_argmax_tie_breaks_to_lowest_index(self):
        out = td.discretize(np.array([0.4, 0.4, 0.2, 0, 0]), MIXED_META)
        assert np.array_equal(out[:3], [1, 0, 0])

    def test_idempotent_on_random_rows(self):
        rng = np.random.default_rng(11)
        rows = rng.uniform(-0.5, 1.5, size=(50, 5))
        once = td.discretize(rows, MIXED_META)
        twice = td.discretize(once, MIXED_META)
        assert np.array_equal(once, twice)
        assert td.validate_rows(once, MIXED_META)
