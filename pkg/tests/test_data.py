import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mintad.data import (DatasetFormatError, MixtureSpec, boundary_grid, inject_anomaly, load_feature_dataset,
                         make_feature_dataset, make_toy_2d, save_feature_dataset)


class TestToy2D:
    def test_default_mixture(self):
        ds = make_toy_2d(MixtureSpec())
        assert ds.points.shape == (1000, 2)
        for c, mean in enumerate(((-2.0, 0.0), (2.0, 0.0))):
            emp = ds.points[ds.class_labels == c].mean(axis=0)
            assert np.all(np.abs(emp - mean) < 0.1)

    def test_single_component_labels(self):
        ds = make_toy_2d(MixtureSpec(means=((1.0, 1.0),), n_per_class=20))
        assert np.all(ds.class_labels == 0)

    def test_same_seed_bit_identical(self):
        a, b = make_toy_2d(MixtureSpec(seed=5)), make_toy_2d(MixtureSpec(seed=5))
        assert np.array_equal(a.points, b.points)
        assert not np.array_equal(a.points, make_toy_2d(MixtureSpec(seed=6)).points)

    @pytest.mark.parametrize("seed", range(5))
    def test_mean_within_four_standard_errors(self, seed):
        spec = MixtureSpec(means=((0.5, -1.0), (3.0, 2.0), (-2.0, 1.0)), std=0.7, n_per_class=400, seed=seed)
        ds = make_toy_2d(spec)
        se = spec.std / np.sqrt(spec.n_per_class)
        for c, mean in enumerate(spec.means):
            emp = ds.points[ds.class_labels == c].mean(axis=0)
            assert np.all(np.abs(emp - mean) < 4 * se)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            MixtureSpec(means=())
        with pytest.raises(ValueError):
            MixtureSpec(std=0.0)

    def test_csv(self, tmp_path):
        ds = make_toy_2d(MixtureSpec(n_per_class=3))
        ds.to_csv(tmp_path / "toy.csv")
        rows = (tmp_path / "toy.csv").read_text().splitlines()
        assert rows[0] == "x,y,label" and len(rows) == 7


class TestBoundaryGrid:
    def test_constant(self):
        grid = boundary_grid(lambda p: np.full(len(p), 2.5), resolution=7)
        assert grid.shape == (7, 7) and np.all(grid == 2.5)

    def test_radial_score_is_point_symmetric(self):
        grid = boundary_grid(lambda p: np.hypot(p[:, 0], p[:, 1]), (-3, 3, -3, 3), 20)
        np.testing.assert_allclose(grid, grid[::-1, ::-1], atol=1e-12)

    def test_cell_centres_and_row_order(self):
        grid = boundary_grid(lambda p: p[:, 1] * 10 + p[:, 0], (0, 2, 0, 4), 2)
        # rows follow y (centres 1, 3), columns follow x (centres 0.5, 1.5)
        np.testing.assert_allclose(grid, [[10.5, 11.5], [30.5, 31.5]])

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            boundary_grid(lambda p: p[:, 0], resolution=1)


class TestFeatureDataset:
    def test_counts(self):
        ds = make_feature_dataset(3, 8, 14, 14, 64, 16, seed=0)
        assert len(ds) == 240 and ds.features.shape == (240, 8, 14, 14)
        has_mask = ds.masks.reshape(240, -1).any(axis=1)
        assert has_mask.sum() == 48
        assert np.array_equal(has_mask, ds.image_labels == 1)
        assert np.bincount(ds.labels).tolist() == [80, 80, 80]

    def test_no_anomalies(self):
        ds = make_feature_dataset(2, 3, 5, 5, 4, 0, seed=1)
        assert not ds.masks.any() and not ds.image_labels.any()

    def test_normals_are_mean_plus_noise(self):
        ds = make_feature_dataset(2, 4, 6, 6, 400, 0, seed=2, noise_std=0.3)
        for k in range(2):
            resid = ds.features[ds.labels == k] - ds.mean_fields[k]
            assert abs(resid.mean()) < 0.01
            assert abs(resid.std() - 0.3) < 0.01

    def test_anomalies_shift_exactly_the_mask(self):
        ds = make_feature_dataset(1, 4, 8, 8, 0, 20, seed=3, noise_std=0.2, shift_factor=5.0)
        clean = make_feature_dataset(1, 4, 8, 8, 0, 20, seed=3, noise_std=0.2, shift_factor=0.0)
        diff = ds.features - clean.features
        inside = ds.masks[:, None].repeat(4, axis=1).astype(bool)
        assert np.all(diff[~inside] == 0)
        np.testing.assert_allclose(np.abs(diff[inside]), 1.0, rtol=1e-12)

    def test_region_sides_between_two_and_five(self):
        ds = make_feature_dataset(2, 2, 14, 14, 0, 50, seed=4)
        for m in ds.masks:
            rows, cols = np.flatnonzero(m.any(axis=1)), np.flatnonzero(m.any(axis=0))
            assert 2 <= len(rows) <= 5 and 2 <= len(cols) <= 5
            assert m.sum() == len(rows) * len(cols)

    def test_splits_share_fields_not_noise(self):
        tr = make_feature_dataset(2, 3, 4, 4, 3, 0, seed=7, split="train")
        te = make_feature_dataset(2, 3, 4, 4, 3, 0, seed=7, split="test")
        assert np.array_equal(tr.mean_fields, te.mean_fields)
        assert not np.array_equal(tr.features, te.features)

    def test_deterministic(self):
        a = make_feature_dataset(2, 3, 4, 4, 3, 2, seed=9)
        b = make_feature_dataset(2, 3, 4, 4, 3, 2, seed=9)
        assert np.array_equal(a.features, b.features) and np.array_equal(a.masks, b.masks)

    def test_explicit_mean_fields(self):
        fields = np.zeros((2, 3, 4, 4))
        ds = make_feature_dataset(2, 3, 4, 4, 2, 0, seed=0, mean_fields=fields)
        assert np.array_equal(ds.mean_fields, fields)
        with pytest.raises(ValueError):
            make_feature_dataset(2, 3, 4, 4, 2, 0, seed=0, mean_fields=np.zeros((3, 3, 4, 4)))

    def test_rejects_empty_extent(self):
        with pytest.raises(ValueError):
            make_feature_dataset(1, 0, 4, 4, 1, 0, seed=0)

    def test_subset_and_normals(self):
        ds = make_feature_dataset(2, 2, 4, 4, 3, 2, seed=0)
        normals = ds.normals()
        assert len(normals) == 6 and not normals.image_labels.any()


class TestInjectAnomaly:
    def test_zero_shift_keeps_values_but_marks_region(self, rng):
        f = rng.normal(size=(3, 6, 6))
        out, mask = inject_anomaly(f, (1, 1, 4, 3), 0.0)
        assert np.array_equal(out, f) and mask.sum() == 6

    def test_mean_in_region(self):
        ds = make_feature_dataset(1, 4, 8, 8, 200, 0, seed=11, noise_std=0.2)
        total = 0.0
        for f in ds.features:
            out, mask = inject_anomaly(f, (2, 2, 5, 5), 5.0)
            total += (out - ds.mean_fields[0])[:, 2:5, 2:5].mean()
        assert abs(total / len(ds) - 5.0) < 0.02

    def test_full_grid(self, rng):
        _, mask = inject_anomaly(rng.normal(size=(2, 4, 5)), (0, 0, 4, 5), 1.0)
        assert mask.all()

    def test_empty_region(self, rng):
        with pytest.raises(ValueError, match="empty"):
            inject_anomaly(rng.normal(size=(2, 4, 4)), (1, 1, 1, 3), 1.0)

    def test_out_of_bounds_region(self, rng):
        with pytest.raises(ValueError):
            inject_anomaly(rng.normal(size=(2, 4, 4)), (2, 2, 5, 4), 1.0)

    def test_vector_shift(self, rng):
        f = rng.normal(size=(2, 4, 4))
        out, _ = inject_anomaly(f, (0, 0, 1, 1), [1.0, -2.0])
        np.testing.assert_allclose(out[:, 0, 0] - f[:, 0, 0], [1.0, -2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 5), st.integers(0, 5), st.integers(1, 3), st.integers(1, 3),
           st.floats(-10, 10, allow_nan=False), st.integers(0, 2**31))
    def test_outside_region_conserved(self, r0, c0, h, w, shift, seed):
        f = np.random.default_rng(seed).normal(size=(3, 8, 8))
        out, mask = inject_anomaly(f, (r0, c0, r0 + h, c0 + w), shift)
        outside = ~mask.astype(bool)
        assert np.array_equal(out[:, outside], f[:, outside])
        assert out[:, outside].sum() == f[:, outside].sum()


class TestContainer:
    def test_round_trip(self, tmp_path):
        ds = make_feature_dataset(2, 3, 4, 4, 2, 1, seed=0)
        save_feature_dataset(ds, tmp_path / "d.bin")
        back = load_feature_dataset(tmp_path / "d.bin")
        np.testing.assert_array_equal(back.features, ds.features.astype(np.float32))
        np.testing.assert_array_equal(back.masks, ds.masks)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.noise_std == ds.noise_std

    def test_payload_is_little_endian_f32(self, tmp_path):
        ds = make_feature_dataset(1, 1, 2, 2, 1, 0, seed=0)
        save_feature_dataset(ds, tmp_path / "d.bin")
        blob = (tmp_path / "d.bin").read_bytes()
        assert blob[:8] == b"MINTFEAT"
        assert ds.features.astype("<f4").tobytes() in blob

    def test_truncated(self, tmp_path):
        ds = make_feature_dataset(1, 2, 3, 3, 2, 0, seed=0)
        save_feature_dataset(ds, tmp_path / "d.bin")
        blob = (tmp_path / "d.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(blob[:-10])
        with pytest.raises(DatasetFormatError, match="truncated"):
            load_feature_dataset(tmp_path / "t.bin")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOTADATASET" * 3)
        with pytest.raises(DatasetFormatError):
            load_feature_dataset(tmp_path / "x.bin")
