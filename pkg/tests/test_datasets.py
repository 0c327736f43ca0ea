import numpy as np
import pytest

from copulashift.datasets import (Dataset, MinMaxStats, MoonsConfig,
                                  batch_iterator, generate_moons,
                                  load_delimited, minmax_normalize,
                                  write_dataset)
from copulashift.errors import ContractViolation


class TestDataset:
    def test_basic_properties(self):
        ds = Dataset(np.zeros((4, 3)), np.array([0, 1, 0, 1]))
        assert len(ds) == 4
        assert ds.dim == 3
        assert ds.feature_names == ["f0", "f1", "f2"]

    def test_rejects_nan_features(self):
        x = np.zeros((3, 2))
        x[1, 1] = np.nan
        with pytest.raises(ContractViolation):
            Dataset(x, None)

    def test_rejects_label_length_mismatch(self):
        with pytest.raises(ContractViolation):
            Dataset(np.zeros((3, 2)), np.array([0, 1]))

    def test_rejects_unknown_domain(self):
        with pytest.raises(ContractViolation):
            Dataset(np.zeros((3, 2)), None, domain="validation")

    def test_subset_keeps_alignment(self):
        x = np.arange(12, dtype=np.float64).reshape(6, 2)
        y = np.arange(6)
        part = Dataset(x, y).subset([4, 1])
        np.testing.assert_array_equal(part.features, x[[4, 1]])
        np.testing.assert_array_equal(part.labels, [4, 1])

    def test_unlabeled_drops_labels(self):
        ds = Dataset(np.zeros((3, 2)), np.array([0, 1, 0]))
        assert ds.unlabeled().labels is None


class TestGenerateMoons:
    def test_shapes_and_labels(self):
        ds = generate_moons(MoonsConfig(n_per_class=100, seed=3))
        assert ds.features.shape == (200, 2)
        assert np.sum(ds.labels == 0) == 100
        assert np.sum(ds.labels == 1) == 100

    def test_noise_free_points_lie_on_the_arcs(self):
        # Class 0: x^2 + y^2 = 1; class 1: (x-1)^2 + (0.5-y)^2 = 1.
        ds = generate_moons(MoonsConfig(n_per_class=50, noise_sigma=0.0, seed=1))
        x, y = ds.features[:, 0], ds.features[:, 1]
        top = ds.labels == 0
        np.testing.assert_allclose(x[top] ** 2 + y[top] ** 2, 1.0, atol=1e-12)
        np.testing.assert_allclose((x[~top] - 1.0) ** 2 + (0.5 - y[~top]) ** 2,
                                   1.0, atol=1e-12)

    def test_stretch_scales_x_only(self):
        # Unscaling the x axis must land back on the unit arcs.
        ds = generate_moons(MoonsConfig(n_per_class=50, stretch=4.0,
                                        noise_sigma=0.0, seed=1))
        x, y = ds.features[:, 0] / 4.0, ds.features[:, 1]
        top = ds.labels == 0
        np.testing.assert_allclose(x[top] ** 2 + y[top] ** 2, 1.0, atol=1e-12)

    def test_deterministic_per_seed(self):
        a = generate_moons(MoonsConfig(seed=9))
        b = generate_moons(MoonsConfig(seed=9))
        c = generate_moons(MoonsConfig(seed=10))
        np.testing.assert_array_equal(a.features, b.features)
        assert not np.array_equal(a.features, c.features)

    def test_rejects_stretch_below_one(self):
        with pytest.raises(ContractViolation):
            MoonsConfig(stretch=0.5)


class TestDelimitedRoundTrip:
    def test_write_then_load_is_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        ds = Dataset(rng.normal(size=(20, 3)), rng.integers(0, 2, 20),
                     feature_names=["a", "b", "c"], label_name="cls")
        path = tmp_path / "round.csv"
        write_dataset(ds, path, header_note={"seed": 11})
        back = load_delimited(path, label_column="cls")
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.labels.dtype == np.int64
        assert back.feature_names == ["a", "b", "c"]

    def test_float_labels_stay_float(self, tmp_path):
        ds = Dataset(np.zeros((3, 1)), np.array([0.25, 0.5, 0.75]))
        path = tmp_path / "f.csv"
        write_dataset(ds, path)
        back = load_delimited(path, label_column="label")
        assert np.issubdtype(back.labels.dtype, np.floating)
        np.testing.assert_array_equal(back.labels, [0.25, 0.5, 0.75])

    def test_bad_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n3.0,oops\n")
        with pytest.raises(ContractViolation, match=r"row 3.*'b'"):
            load_delimited(path)

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ContractViolation, match="label column"):
            load_delimited(path, label_column="target")

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(ContractViolation, match="row 3"):
            load_delimited(path)

    def test_comment_lines_skipped(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("# note\na,b\n1,2\n")
        ds = load_delimited(path)
        assert ds.features.shape == (1, 2)


class TestMinMaxNormalize:
    def test_hand_computed_ranges(self):
        train = Dataset(np.array([[0.0, 10.0], [2.0, 30.0], [1.0, 20.0]]), None)
        other = Dataset(np.array([[4.0, 10.0]]), None)
        (n_train, n_other), stats = minmax_normalize(train, train, other)
        np.testing.assert_allclose(n_train.features,
                                   [[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]])
        # Values outside the fitted range extrapolate rather than clip.
        np.testing.assert_allclose(n_other.features, [[2.0, 0.0]])
        np.testing.assert_array_equal(stats.feature_min, [0.0, 10.0])
        np.testing.assert_array_equal(stats.feature_max, [2.0, 30.0])

    def test_constant_column_maps_to_zero(self):
        ds = Dataset(np.array([[5.0, 1.0], [5.0, 2.0]]), None)
        (norm,), _ = minmax_normalize(ds, ds)
        np.testing.assert_array_equal(norm.features[:, 0], [0.0, 0.0])

    def test_label_scaling_and_inverse(self):
        ds = Dataset(np.zeros((3, 1)), np.array([3.0, 5.0, 9.0]))
        (norm,), stats = minmax_normalize(ds, ds, scale_labels=True)
        np.testing.assert_allclose(norm.labels, [0.0, 1.0 / 3.0, 1.0])
        np.testing.assert_allclose(stats.denormalize_labels(norm.labels),
                                   [3.0, 5.0, 9.0])

    def test_integer_labels_pass_through_by_default(self):
        ds = Dataset(np.zeros((3, 1)), np.array([3, 5, 9]))
        (norm,), stats = minmax_normalize(ds, ds)
        np.testing.assert_array_equal(norm.labels, [3, 5, 9])
        assert not stats.scales_labels

    def test_dimension_mismatch(self):
        a = Dataset(np.zeros((2, 2)), None)
        b = Dataset(np.zeros((2, 3)), None)
        with pytest.raises(ContractViolation):
            minmax_normalize(a, b)


class TestBatchIterator:
    @staticmethod
    def _sizes(n, batch_size, seed=0, epoch=0):
        ds = Dataset(np.zeros((n, 1)), None)
        return [len(b) for b in batch_iterator(ds, batch_size, seed, epoch)]

    def test_even_remainder_kept(self):
        assert self._sizes(10, 4) == [4, 4, 2]

    def test_odd_remainder_trimmed(self):
        assert self._sizes(9, 4) == [4, 4]
        assert self._sizes(11, 4) == [4, 4, 2]

    def test_full_batch_with_odd_population(self):
        # batch_size beyond the sample count keeps all rows but one.
        assert self._sizes(461, 1024) == [460]

    def test_single_row_yields_nothing(self):
        assert self._sizes(1, 4) == []

    def test_indices_cover_without_duplicates(self):
        ds = Dataset(np.zeros((10, 1)), None)
        idx = np.concatenate(list(batch_iterator(ds, 4, seed=5, epoch=2)))
        assert len(np.unique(idx)) == len(idx) == 10

    def test_deterministic_per_seed_epoch(self):
        ds = Dataset(np.zeros((12, 1)), None)
        a = list(batch_iterator(ds, 4, seed=1, epoch=3))
        b = list(batch_iterator(ds, 4, seed=1, epoch=3))
        c = list(batch_iterator(ds, 4, seed=1, epoch=4))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_rejects_odd_batch_size(self):
        ds = Dataset(np.zeros((6, 1)), None)
        with pytest.raises(ContractViolation):
            list(batch_iterator(ds, 3, 0, 0))


class TestMinMaxStats:
    def test_identity_when_no_label_range(self):
        stats = MinMaxStats(np.zeros(2), np.ones(2))
        np.testing.assert_array_equal(stats.denormalize_labels([1.5, 2.0]),
                                      [1.5, 2.0])
