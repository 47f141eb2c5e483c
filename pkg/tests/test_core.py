import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_set
from hybrid_ccnn.core import (Dataset, Lattice, ParameterPoint, Snapshot, SnapshotSet, global_fluctuations,
                              mean_density, normalize_global, normalize_per_site, site_fluctuations,
                              site_mean_density, zero_pad)
from hybrid_ccnn.errors import DataError

bit_stacks = arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5)),
                    elements=st.integers(0, 1))


class TestTypes:
    def test_lattice_default_and_validation(self):
        assert Lattice().shape == (13, 13)
        with pytest.raises(DataError):
            Lattice(0, 3)

    def test_snapshot_rejects_non_binary(self):
        with pytest.raises(DataError):
            Snapshot([[0, 2]])
        with pytest.raises(DataError):
            Snapshot([0, 1])

    def test_snapshot_is_read_only(self):
        s = Snapshot([[0, 1]])
        with pytest.raises(ValueError):
            s.bits[0, 0] = 1

    def test_set_requires_common_lattice(self):
        with pytest.raises(DataError):
            SnapshotSet(ParameterPoint(0, 0), [Snapshot([[0, 1]]), Snapshot([[0], [1]])])
        with pytest.raises(DataError):
            SnapshotSet(ParameterPoint(0, 0), [])

    def test_set_from_snapshots_round_trip(self):
        snaps = [Snapshot([[1, 0]]), Snapshot([[0, 1]])]
        s = SnapshotSet(ParameterPoint(1.0, 2.0), snaps)
        assert s.snapshots == snaps
        assert len(s) == 2

    def test_point_must_be_finite(self):
        with pytest.raises(DataError):
            ParameterPoint(float("nan"), 1.0)

    def test_dataset_grid_bijection(self):
        sets = [make_set([[[0]]], d, 1.0) for d in range(4)]
        Dataset(sets, grid=[[0, 1], [3, 2]])
        with pytest.raises(DataError):
            Dataset(sets, grid=[[0, 1], [1, 2]])

    def test_dataset_lookup(self):
        sets = [make_set([[[0]]], d, 1.5) for d in (0.5, 2.5)]
        ds = Dataset(sets, grid=[[1, 0]])
        assert ds.index_of(2.5, 1.5) == 1
        assert ds.grid_position(0) == (0, 1)
        with pytest.raises(DataError):
            ds.index_of(9.0, 1.5)


class TestDensities:
    def test_mean_density_trivial(self):
        assert mean_density(make_set(np.zeros((1, 2, 2)))) == 0.0
        assert mean_density(make_set(np.ones((1, 2, 2)))) == 1.0

    def test_mean_density_hand_count(self):
        s = make_set([[[1, 0], [0, 0]], [[1, 1], [0, 0]]])
        assert mean_density(s) == 0.375

    def test_site_mean_density(self):
        s = make_set([[[1, 0], [0, 0]], [[1, 1], [0, 0]]])
        np.testing.assert_array_equal(site_mean_density(s), [[1.0, 0.5], [0.0, 0.0]])

    def test_site_mean_single_snapshot(self, rng):
        b = rng.integers(0, 2, (1, 4, 3))
        np.testing.assert_array_equal(site_mean_density(make_set(b)), b[0].astype(float))

    def test_constant_checkerboard_set(self):
        cb = (np.indices((13, 13)).sum(0) % 2 == 0).astype(np.uint8)
        s = make_set(np.repeat(cb[None], 250, axis=0))
        np.testing.assert_array_equal(site_mean_density(s), cb.astype(float))


class TestNormalization:
    def test_global_examples(self):
        np.testing.assert_array_equal(normalize_global(Snapshot([[1, 0], [0, 1]]), 0.5), [[0.5, -0.5], [-0.5, 0.5]])
        np.testing.assert_array_equal(normalize_global(Snapshot([[0, 0], [0, 0]]), 0.0), np.zeros((2, 2)))
        np.testing.assert_array_equal(normalize_global(Snapshot([[1, 1], [0, 0]]), 0.5), [[0.5, 0.5], [-0.5, -0.5]])

    def test_global_rejects_bad_density(self):
        with pytest.raises(DataError):
            normalize_global(Snapshot([[1]]), 1.5)

    def test_per_site_examples(self):
        np.testing.assert_array_equal(normalize_per_site(Snapshot([[1, 0]]), [[0.5, 0.5]]), [[0.5, -0.5]])
        s = make_set([[[1, 0], [0, 0]], [[1, 1], [0, 0]]])
        out = [normalize_per_site(x, site_mean_density(s)) for x in s.snapshots]
        np.testing.assert_array_equal(out[0] + out[1], np.zeros((2, 2)))

    def test_per_site_single_snapshot_is_zero(self, rng):
        s = make_set(rng.integers(0, 2, (1, 3, 3)))
        np.testing.assert_array_equal(site_fluctuations(s), np.zeros((1, 3, 3)))

    def test_per_site_shape_mismatch(self):
        with pytest.raises(DataError):
            normalize_per_site(Snapshot([[1, 0]]), np.zeros((2, 2)))

    @settings(max_examples=50, deadline=None)
    @given(bit_stacks)
    def test_fluctuations_average_to_zero(self, bits):
        s = make_set(bits)
        assert abs(site_fluctuations(s).mean()) < 1e-12
        np.testing.assert_allclose(site_fluctuations(s).mean(axis=0), 0.0, atol=1e-12)
        assert abs(global_fluctuations(s).sum()) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(bit_stacks)
    def test_density_relations(self, bits):
        s = make_set(bits)
        nmap = site_mean_density(s)
        assert np.all((nmap >= 0) & (nmap <= 1))
        assert abs(mean_density(s) - nmap.mean()) < 1e-12


class TestZeroPad:
    def test_examples(self, rng):
        m = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(zero_pad(m, 0), m)
        np.testing.assert_array_equal(zero_pad([[3.0]], 1), [[0, 0, 0], [0, 3, 0], [0, 0, 0]])
        assert zero_pad(np.ones((2, 2)), 2).shape == (6, 6)

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            zero_pad(np.ones((2, 2)), -1)

    @given(st.integers(0, 3), st.integers(0, 3), st.integers(1, 4), st.integers(1, 4))
    def test_composition(self, a, b, h, w):
        m = np.arange(h * w, dtype=float).reshape(h, w) + 1
        np.testing.assert_array_equal(zero_pad(zero_pad(m, a), b), zero_pad(m, a + b))

    def test_batched(self, rng):
        m = rng.normal(size=(5, 3, 3))
        out = zero_pad(m, 2)
        assert out.shape == (5, 7, 7)
        np.testing.assert_array_equal(out[:, 2:5, 2:5], m)
