import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_ccnn import ccnn, d4
from hybrid_ccnn.errors import DataError, NumericalError
from oracles import central_difference, distinct_tuple_map, naive_conv_full


def small_model(seed=0, **kw):
    cfg = ccnn.CCNNConfig(**{"lattice_size": 5, "n_filters": 2, "filter_size": 3, "order": 3, **kw})
    return ccnn.init_model(cfg, seed)


class TestConvFull:
    def test_identity_kernel(self, rng):
        dn = rng.normal(size=(4, 4))
        np.testing.assert_array_equal(ccnn.conv_full(dn, [[1.0]]), dn)

    def test_constant_window(self):
        out = ccnn.conv_full(np.full((4, 4), 0.3), np.ones((2, 2)))
        assert out.shape == (5, 5)
        np.testing.assert_allclose(out[1:4, 1:4], 1.2, atol=1e-15)
        assert out[0, 0] == pytest.approx(0.3)

    def test_matches_loops(self, rng):
        dn = rng.normal(size=(5, 5))
        f = rng.normal(size=(3, 3))
        np.testing.assert_allclose(ccnn.conv_full(dn, f), naive_conv_full(dn, f), atol=1e-12)

    def test_rejects_rectangular_filter(self):
        with pytest.raises(DataError):
            ccnn.conv_full(np.ones((3, 3)), np.ones((2, 3)))


class TestCorrelatorMaps:
    def test_constant_input_counts(self):
        c = 0.4
        maps = ccnn.correlator_maps(np.full((5, 5), c), np.ones((2, 2)), 3)
        assert maps[1][2, 2] == pytest.approx(12 * c ** 2)
        assert maps[2][2, 2] == pytest.approx(24 * c ** 3)

    def test_single_pixel_filter(self, rng):
        f = np.zeros((3, 3))
        f[1, 2] = 0.7
        maps = ccnn.correlator_maps(rng.normal(size=(6, 6)), f, 3)
        np.testing.assert_allclose(maps[1], 0, atol=1e-14)
        np.testing.assert_allclose(maps[2], 0, atol=1e-14)

    @pytest.mark.parametrize("F", [2, 3])
    def test_distinct_tuple_enumeration(self, rng, F):
        dn = rng.normal(size=(6, 6))
        f = rng.uniform(size=(F, F))
        maps = ccnn.correlator_maps(dn, f, 3)
        for m in (1, 2, 3):
            ref = distinct_tuple_map(dn, f, m)
            np.testing.assert_allclose(maps[m - 1], ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())

    def test_order_out_of_range(self):
        with pytest.raises(DataError):
            ccnn.correlator_maps(np.ones((3, 3)), np.ones((2, 2)), 4)


class TestSymmetrization:
    def test_symmetric_inputs_give_eight_copies(self, rng):
        dn = d4.symmetrize(rng.normal(size=(5, 5)))
        f = d4.symmetrize(rng.uniform(size=(3, 3)))
        for m in (2, 3):
            np.testing.assert_allclose(ccnn.d4_symmetrized_maps(dn, f, m),
                                       8 * ccnn.correlator_maps(dn, f, m)[m - 1], rtol=1e-12, atol=1e-14)

    def test_symmetric_filter_gives_symmetric_map(self, rng):
        f = d4.symmetrize(rng.uniform(size=(3, 3)))
        C = ccnn.d4_symmetrized_maps(rng.normal(size=(6, 6)), f, 2)
        assert d4.is_symmetric(C, atol=1e-10)

    def test_equals_jointly_transformed_sum(self, rng):
        dn = rng.normal(size=(5, 5))
        f = rng.uniform(size=(3, 3))
        # sum over g of g.C[f o g](dn), with f o g realized by the inverse array move
        ref = sum(d4.apply(ccnn.correlator_maps(dn, d4.apply(f, d4.inverse(g)), 2)[1], g) for g in d4.ELEMENTS)
        np.testing.assert_allclose(ccnn.d4_symmetrized_maps(dn, f, 2), ref, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(0, 7))
    def test_pooled_feature_invariant(self, seed, g):
        r = np.random.default_rng(seed)
        dn = r.normal(size=(5, 5))
        f = r.uniform(size=(3, 3))
        w = d4.symmetrize(r.normal(size=(7, 7)))
        a = ccnn.spatial_pool(ccnn.d4_symmetrized_maps(dn, f, 3), w)
        b = ccnn.spatial_pool(ccnn.d4_symmetrized_maps(d4.apply(dn, g), f, 3), w)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))

    def test_non_square_rejected(self):
        with pytest.raises(DataError):
            ccnn.d4_symmetrized_maps(np.ones((3, 4)), np.ones((2, 2)), 2)


class TestSpatialPool:
    def test_examples(self, rng):
        assert ccnn.spatial_pool(np.full((3, 3), 2.0)) == 18.0
        assert ccnn.spatial_pool(rng.normal(size=(3, 3)), np.zeros((3, 3))) == 0.0
        c, w = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        ref = sum(c[i, j] * w[i, j] for i in range(4) for j in range(4))
        assert ccnn.spatial_pool(c, w) == pytest.approx(ref, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            ccnn.spatial_pool(np.ones((3, 3)), np.ones((2, 2)))


class TestBatchNorm:
    def test_train_mode_standardizes(self, rng):
        x = rng.normal(3.0, 2.0, size=(64, 4))
        st_ = ccnn.BatchNormState.fresh(4)
        out, _, _ = ccnn.batchnorm_apply(x, st_, "train")
        np.testing.assert_allclose(out.mean(0), 0, atol=1e-6)
        np.testing.assert_allclose(out.var(0), 1, atol=1e-5)

    def test_eval_identity_stats(self, rng):
        x = rng.normal(size=(5, 3))
        out, _, _ = ccnn.batchnorm_apply(x, ccnn.BatchNormState.fresh(3), "eval")
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-14)

    def test_momentum_update(self, rng):
        x = rng.normal(size=(10, 2))
        st_ = ccnn.BatchNormState(np.array([1.0, -1.0]), np.array([2.0, 0.5]))
        ccnn.batchnorm_apply(x, st_, "train")
        np.testing.assert_allclose(st_.running_mean, 0.9 * np.array([1.0, -1.0]) + 0.1 * x.mean(0))
        np.testing.assert_allclose(st_.running_var, 0.9 * np.array([2.0, 0.5]) + 0.1 * x.var(0, ddof=1))

    def test_no_update_when_disabled(self, rng):
        st_ = ccnn.BatchNormState.fresh(2)
        ccnn.batchnorm_apply(rng.normal(size=(4, 2)), st_, "train", update=False)
        np.testing.assert_array_equal(st_.running_mean, 0)

    def test_batch_of_one_rejected(self):
        with pytest.raises(DataError):
            ccnn.batchnorm_apply(np.ones((1, 2)), ccnn.BatchNormState.fresh(2), "train")


class TestModel:
    def test_constraints(self):
        m = small_model(1)
        assert m.filters.min() >= 0
        assert d4.is_symmetric(m.w, atol=0)
        assert m.feature_names() == ["c2_0", "c2_1", "c3_0", "c3_1"]
        m_nn = small_model(1, nonneg_beta=True)
        assert m_nn.beta.min() >= 0
        np.testing.assert_array_equal(small_model(1, uniform_w=True).w, np.ones((7, 7)))

    def test_order_validated(self):
        with pytest.raises(DataError):
            ccnn.CCNNConfig(order=1)
        with pytest.raises(DataError):
            ccnn.CCNNConfig(order=4)

    def test_zero_head_gives_half(self, rng):
        m = small_model()
        m.beta[:] = 0
        np.testing.assert_allclose(ccnn.forward(m, rng.normal(size=(3, 5, 5))), 0.5)

    def test_sigmoid_arithmetic(self):
        m = small_model()
        m.beta[:] = 0
        m.bias = -np.log(3.0)
        assert ccnn.forward(m, np.zeros((5, 5)))[0] == pytest.approx(0.75)

    def test_features_match_map_route(self, rng):
        m = small_model(2)
        dn = rng.normal(size=(5, 5))
        feats = ccnn.pooled_features(m, dn)[0]
        for mm in (2, 3):
            for a in range(2):
                ref = ccnn.spatial_pool(ccnn.d4_symmetrized_maps(dn, m.filters[a], mm), m.w)
                assert feats[(mm - 2) * 2 + a] == pytest.approx(ref, rel=1e-10)

    def test_unsymmetrized_features(self, rng):
        m = small_model(2, symmetrize=False)
        dn = rng.normal(size=(5, 5))
        feats = ccnn.pooled_features(m, dn, include_first=True)[0]
        ref = ccnn.spatial_pool(ccnn.correlator_maps(dn, m.filters[1], 3)[2], m.w)
        assert feats[2 * 2 + 1] == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_d4_invariance(self, rng, seed):
        m = small_model(seed)
        m.bn.running_mean = rng.normal(size=4)
        m.bn.running_var = rng.uniform(0.5, 2, size=4)
        m.beta = rng.normal(size=4)
        dn = rng.normal(size=(5, 5))
        base = ccnn.forward(m, dn)[0]
        for g in d4.ELEMENTS:
            assert abs(ccnn.forward(m, d4.apply(dn, g))[0] - base) < 1e-10

    def test_monotone_in_normalized_feature(self):
        m = small_model()
        m.beta = np.array([0.5, 0.0, 0.0, 0.0])
        y = ccnn.predict_from_features(m, np.array([[0, 0, 0, 0], [1, 0, 0, 0], [2, 0, 0, 0.0]]))
        assert np.all(np.diff(y) > 0) and np.all((y > 0) & (y < 1))

    def test_bad_shape_and_nonfinite(self):
        m = small_model()
        with pytest.raises(DataError):
            ccnn.forward(m, np.zeros((4, 4)))
        with pytest.raises(NumericalError):
            ccnn.forward(m, np.full((5, 5), np.nan))


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("uniform", [False, True])
    def test_finite_differences(self, seed, uniform):
        r = np.random.default_rng(seed)
        m = small_model(seed, uniform_w=uniform)
        m.beta = r.normal(size=4)
        x = r.normal(size=(6, 5, 5))
        y = r.integers(0, 2, 6)
        gamma = 0.05
        _, grads, _ = ccnn.loss_and_grads(m, x, y, gamma)

        def f(mm):
            return ccnn.loss_and_grads(mm, x, y, gamma, need_grads=False)[0]

        for key, g in grads.items():
            if uniform and key == "raw_w":
                np.testing.assert_array_equal(g, 0)
                continue
            idxs = [()] if g.ndim == 0 else [tuple(r.integers(0, s) for s in g.shape) for _ in range(4)]
            for idx in idxs:
                fd = central_difference(f, m, key, idx)
                assert g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7), (key, idx)

    def test_does_not_touch_running_stats(self, rng):
        m = small_model()
        before = m.bn.copy()
        ccnn.loss_and_grads(m, rng.normal(size=(4, 5, 5)), [0, 1, 0, 1], 0.0)
        np.testing.assert_array_equal(m.bn.running_mean, before.running_mean)

    def test_label_count_checked(self, rng):
        with pytest.raises(DataError):
            ccnn.loss_and_grads(small_model(), rng.normal(size=(3, 5, 5)), [0, 1], 0.0)


class TestCheckpoint:
    def test_round_trip_is_bit_faithful(self, tmp_path, rng):
        m = small_model(7)
        m.bias = 0.1 + 0.2
        m.bn.running_var = rng.uniform(size=4)
        m.metadata = {"target": "star"}
        path = ccnn.save_checkpoint(m, tmp_path / "m.json", prov={"seed": 7})
        back = ccnn.load_checkpoint(path)
        for k, v in m.params().items():
            np.testing.assert_array_equal(back.params()[k], v)
        np.testing.assert_array_equal(back.bn.running_var, m.bn.running_var)
        assert back.config == m.config and back.metadata == m.metadata
        x = rng.normal(size=(2, 5, 5))
        np.testing.assert_array_equal(ccnn.forward(back, x), ccnn.forward(m, x))
        assert json.loads(path.read_text())["provenance"] == {"seed": 7}

    def test_rejects_foreign_or_inconsistent(self, tmp_path):
        d = ccnn.model_to_dict(small_model())
        with pytest.raises(DataError):
            ccnn.model_from_dict({**d, "format": "other"})
        with pytest.raises(DataError):
            ccnn.model_from_dict({**d, "version": 99})
        with pytest.raises(DataError):
            ccnn.model_from_dict({**d, "beta": [0.0]})
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(DataError):
            ccnn.load_checkpoint(tmp_path / "bad.json")
