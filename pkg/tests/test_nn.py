import numpy as np
import pytest
from hypothesis import given, strategies as st

from avq360 import nn
from avq360.errors import DataError, NumericError, ValidationError


def weighted_sum_loss(seed, shape):
    """Fixed random linear functional: turns any op output into a scalar."""
    r = np.random.default_rng(seed).normal(size=shape)
    return r, lambda y: float((r * y).sum())


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 5, 5))
        w = np.zeros((3, 3, 1, 1))
        for i in range(3):
            w[i, i, 0, 0] = 1.0
        y = nn.conv2d(x, w)
        np.testing.assert_allclose(y, x, atol=1e-15)

    def test_all_ones_kernel_on_constant(self):
        x = np.full((1, 1, 6, 6), 2.5)
        w = np.ones((1, 1, 3, 3))
        y = nn.conv2d(x, w, stride=1, pad=0)
        np.testing.assert_allclose(y, 9 * 2.5, atol=1e-12)
        assert y.shape == (1, 1, 4, 4)

    def test_output_size_with_stride_and_pad(self):
        x = np.zeros((1, 2, 9, 7))
        w = np.zeros((4, 2, 3, 3))
        y = nn.conv2d(x, w, stride=2, pad=1)
        assert y.shape == (1, 4, 5, 4)

    def test_no_output_positions(self):
        with pytest.raises(ValidationError, match="no output positions"):
            nn.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_gradients_match_finite_differences(self, stride, pad):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3)) * 0.5
        b = rng.normal(size=4)
        y, cache = nn.conv2d_forward(x, w, b, stride, pad)
        r, loss = weighted_sum_loss(1, y.shape)
        gx, gw, gb = nn.conv2d_backward(r, cache)
        for arr, grad, f in [
            (x, gx, lambda v: loss(nn.conv2d(v, w, b, stride, pad))),
            (w, gw, lambda v: loss(nn.conv2d(x, v, b, stride, pad))),
            (b, gb, lambda v: loss(nn.conv2d(x, w, v, stride, pad))),
        ]:
            num = nn.numerical_gradient(f, arr)
            assert nn.gradient_rel_err(grad, num) < 1e-6


class TestMaxPool2:
    def test_constant_input(self):
        y = nn.maxpool2(np.full((1, 2, 4, 4), 3.0))
        np.testing.assert_allclose(y, 3.0)
        assert y.shape == (1, 2, 2, 2)

    def test_increasing_raster_picks_bottom_right(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        y = nn.maxpool2(x)
        np.testing.assert_allclose(y[0, 0], [[5, 7], [13, 15]])

    def test_odd_dims_rejected(self):
        with pytest.raises(ValidationError, match="even"):
            nn.maxpool2(np.zeros((1, 1, 3, 4)))

    def test_tie_routes_to_first_index(self):
        x = np.zeros((1, 1, 2, 2))
        y, cache = nn.maxpool2_forward(x)
        gx = nn.maxpool2_backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_allclose(gx[0, 0], [[1, 0], [0, 0]])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 3, 6, 4))
        y, cache = nn.maxpool2_forward(x)
        r, loss = weighted_sum_loss(2, y.shape)
        gx = nn.maxpool2_backward(r, cache)
        num = nn.numerical_gradient(lambda v: loss(nn.maxpool2(v)), x)
        assert nn.gradient_rel_err(gx, num) < 1e-6


class TestElementwiseOps:
    def test_relu_values(self):
        np.testing.assert_allclose(nn.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_relu_gradient(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 5)) + 0.1  # keep away from the kink
        y, cache = nn.relu_forward(x)
        r, loss = weighted_sum_loss(3, y.shape)
        g = nn.relu_backward(r, cache)
        num = nn.numerical_gradient(lambda v: loss(nn.relu(v)), x)
        assert nn.gradient_rel_err(g, num) < 1e-6

    def test_softmax_uniform_for_equal_logits(self):
        y = nn.softmax(np.zeros((3, 5)))
        np.testing.assert_allclose(y, 0.2, atol=1e-15)

    def test_softmax_shift_invariance_and_rows_sum(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(6, 7)) * 3
        y1 = nn.softmax(x)
        y2 = nn.softmax(x + 123.0)
        np.testing.assert_allclose(y1, y2, atol=1e-12)
        np.testing.assert_allclose(y1.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_gradient(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(3, 6))
        y = nn.softmax(x)
        r, loss = weighted_sum_loss(4, y.shape)
        g = nn.softmax_backward(r, y)
        num = nn.numerical_gradient(lambda v: loss(nn.softmax(v)), x)
        assert nn.gradient_rel_err(g, num) < 1e-6

    def test_sigmoid_stable_at_extremes(self):
        y = nn.sigmoid(np.array([-800.0, 0.0, 800.0]))
        np.testing.assert_allclose(y, [0.0, 0.5, 1.0], atol=1e-12)


class TestLinear:
    def test_gradients(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 4, 5))
        w = rng.normal(size=(5, 6))
        b = rng.normal(size=6)
        y, cache = nn.linear_forward(x, w, b)
        r, loss = weighted_sum_loss(5, y.shape)
        gx, gw, gb = nn.linear_backward(r, cache)
        assert nn.gradient_rel_err(
            gx, nn.numerical_gradient(lambda v: loss(nn.linear(v, w, b)), x)) < 1e-6
        assert nn.gradient_rel_err(
            gw, nn.numerical_gradient(lambda v: loss(nn.linear(x, v, b)), w)) < 1e-6
        assert nn.gradient_rel_err(
            gb, nn.numerical_gradient(lambda v: loss(nn.linear(x, w, v)), b)) < 1e-6

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            nn.linear(np.zeros((2, 3)), np.zeros((4, 5)))


class TestLayerNorm:
    def test_normalizes_last_dim(self):
        rng = np.random.default_rng(12)
        x = rng.normal(loc=5.0, scale=3.0, size=(4, 16))
        y = nn.layer_norm(x, np.ones(16), np.zeros(16))
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)  # eps-shifted

    def test_gradients(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(3, 8))
        gamma = rng.normal(size=8)
        beta = rng.normal(size=8)
        y, cache = nn.layer_norm_forward(x, gamma, beta)
        r, loss = weighted_sum_loss(6, y.shape)
        gx, ggamma, gbeta = nn.layer_norm_backward(r, cache)
        assert nn.gradient_rel_err(
            gx, nn.numerical_gradient(lambda v: loss(nn.layer_norm(v, gamma, beta)), x)
        ) < 1e-6
        assert nn.gradient_rel_err(
            ggamma,
            nn.numerical_gradient(lambda v: loss(nn.layer_norm(x, v, beta)), gamma),
        ) < 1e-6
        assert nn.gradient_rel_err(
            gbeta,
            nn.numerical_gradient(lambda v: loss(nn.layer_norm(x, gamma, v)), beta),
        ) < 1e-6


def make_mha_params(d, seed):
    rng = np.random.default_rng(seed)
    p = {}
    for key in ("wq", "wk", "wv", "wo"):
        p[key] = rng.normal(size=(d, d)) / np.sqrt(d)
    for key in ("bq", "bk", "bv", "bo"):
        p[key] = rng.normal(size=d) * 0.1
    return p


class TestMultiHeadAttention:
    def test_single_kv_token_ignores_queries(self):
        d = 8
        p = make_mha_params(d, 0)
        kv = np.random.default_rng(1).normal(size=(1, d))
        q_a = np.random.default_rng(2).normal(size=(4, d))
        q_b = np.random.default_rng(3).normal(size=(4, d))
        y_a = nn.multi_head_attention(q_a, kv, p, heads=2)
        y_b = nn.multi_head_attention(q_b, kv, p, heads=2)
        np.testing.assert_allclose(y_a, y_b, atol=1e-12)
        expected = (kv @ p["wv"] + p["bv"]) @ p["wo"] + p["bo"]
        np.testing.assert_allclose(y_a, np.repeat(expected, 4, axis=0), atol=1e-12)

    def test_kv_permutation_invariance(self):
        d = 8
        p = make_mha_params(d, 4)
        rng = np.random.default_rng(5)
        q = rng.normal(size=(3, d))
        kv = rng.normal(size=(6, d))
        perm = rng.permutation(6)
        y1 = nn.multi_head_attention(q, kv, p, heads=4)
        y2 = nn.multi_head_attention(q, kv[perm], p, heads=4)
        np.testing.assert_allclose(y1, y2, atol=1e-12)

    def test_outputs_are_convex_combinations_per_head(self):
        d = 8
        heads = 2
        hd = d // heads
        p = make_mha_params(d, 6)
        rng = np.random.default_rng(7)
        q_in = rng.normal(size=(5, d))
        kv_in = rng.normal(size=(4, d))
        y, cache = nn.mha_forward(q_in, kv_in, p, heads)
        _, _, _, _, vh, attn, o, *_ = cache
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)
        oh = o.reshape(5, heads, hd).transpose(1, 0, 2)
        for h in range(heads):
            vmin = vh[h].min(axis=0) - 1e-12
            vmax = vh[h].max(axis=0) + 1e-12
            assert np.all(oh[h] >= vmin) and np.all(oh[h] <= vmax)

    def test_dim_mismatch(self):
        p = make_mha_params(8, 8)
        with pytest.raises(ValidationError):
            nn.multi_head_attention(np.zeros((2, 8)), np.zeros((2, 6)), p, heads=2)
        with pytest.raises(ValidationError, match="divisible"):
            nn.multi_head_attention(np.zeros((2, 6)), np.zeros((2, 6)), p, heads=4)

    def test_gradients_two_heads_four_tokens(self):
        d = 8
        heads = 2
        p = make_mha_params(d, 9)
        rng = np.random.default_rng(10)
        q_in = rng.normal(size=(4, d))
        kv_in = rng.normal(size=(4, d))
        y, cache = nn.mha_forward(q_in, kv_in, p, heads)
        r, loss = weighted_sum_loss(11, y.shape)
        gq, gkv, grads = nn.mha_backward(r, cache)

        assert nn.gradient_rel_err(
            gq,
            nn.numerical_gradient(
                lambda v: loss(nn.multi_head_attention(v, kv_in, p, heads)), q_in),
        ) < 1e-5
        assert nn.gradient_rel_err(
            gkv,
            nn.numerical_gradient(
                lambda v: loss(nn.multi_head_attention(q_in, v, p, heads)), kv_in),
        ) < 1e-5
        for key in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            def f(v, key=key):
                trial = dict(p)
                trial[key] = v
                return loss(nn.multi_head_attention(q_in, kv_in, trial, heads))

            num = nn.numerical_gradient(f, p[key])
            assert nn.gradient_rel_err(grads[key], num) < 1e-5, key

    def test_self_attention_gradient_shares_input(self):
        # q_in is kv_in: total input grad is the sum of both paths
        d = 8
        p = make_mha_params(d, 12)
        x = np.random.default_rng(13).normal(size=(3, d))
        y, cache = nn.mha_forward(x, x, p, heads=2)
        r, loss = weighted_sum_loss(14, y.shape)
        gq, gkv, _ = nn.mha_backward(r, cache)
        num = nn.numerical_gradient(
            lambda v: loss(nn.multi_head_attention(v, v, p, 2)), x)
        assert nn.gradient_rel_err(gq + gkv, num) < 1e-5


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        store = nn.ParamStore()
        store.register("w", np.array([1.0, -2.0]))
        state = nn.adam_init(store, lr=0.1)
        nn.adam_step(store, state)
        np.testing.assert_allclose(store.params["w"], [1.0, -2.0])
        assert state.step == 1

    def test_first_step_closed_form(self):
        # with constant gradient g the first update is -lr*g/(|g|+eps)
        store = nn.ParamStore()
        store.register("w", np.array([0.5]))
        state = nn.adam_init(store, lr=1e-3)
        g = 0.37
        store.add_grad("w", np.array([g]))
        nn.adam_step(store, state)
        expected = 0.5 - 1e-3 * g / (abs(g) + state.eps)
        assert store.params["w"][0] == pytest.approx(expected, rel=1e-12)

    def test_deterministic_over_100_steps(self):
        def run():
            store = nn.ParamStore()
            rng = np.random.default_rng(0)
            store.register("w", rng.normal(size=(4, 4)))
            state = nn.adam_init(store, lr=1e-3)
            for k in range(100):
                store.zero_grads()
                store.add_grad("w", np.sin(store.params["w"] + k).astype(np.float64))
                nn.adam_step(store, state)
            return store.params["w"].copy()

        a, b = run(), run()
        assert a.tobytes() == b.tobytes()

    def test_missing_gradient_errors(self):
        store = nn.ParamStore()
        store.register("w", np.zeros(2))
        state = nn.adam_init(store)
        del store.grads["w"]
        with pytest.raises(NumericError, match="missing gradient"):
            nn.adam_step(store, state)


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = nn.ParamStore()
        store.register("w", np.zeros(2))
        with pytest.raises(ValidationError, match="duplicate"):
            store.register("w", np.zeros(2))

    def test_load_state_shape_mismatch(self):
        store = nn.ParamStore()
        store.register("w", np.zeros((2, 2)))
        with pytest.raises(DataError, match="shape mismatch"):
            store.load_state({"w": np.zeros(3)})

    def test_load_state_name_mismatch(self):
        store = nn.ParamStore()
        store.register("w", np.zeros(2))
        with pytest.raises(DataError, match="mismatch"):
            store.load_state({"v": np.zeros(2)})


class TestFiniteChecks:
    def test_nan_trips_error(self):
        x = np.array([[1.0, np.nan]])
        with pytest.raises(NumericError, match="non-finite"):
            nn.linear(x, np.eye(2))

    def test_can_be_disabled(self):
        x = np.array([[1.0, np.nan]])
        prev = nn.set_finite_checks(False)
        try:
            y = nn.linear(x, np.eye(2))
            assert np.isnan(y).any()
        finally:
            nn.set_finite_checks(prev)


class TestCheckpointFormat:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(20)
        tensors = {
            "a.w": rng.normal(size=(3, 4)).astype(np.float32),
            "b": np.float32(7.0),
            "c.vec": rng.normal(size=5).astype(np.float32),
        }
        path = tmp_path / "m.avqc"
        nn.write_checkpoint(path, tensors)
        out = nn.read_checkpoint(path)
        assert set(out) == set(tensors)
        np.testing.assert_array_equal(out["a.w"], tensors["a.w"])
        assert out["b"].shape == ()
        assert float(out["b"]) == 7.0
        assert path.read_bytes()[:4] == b"AVQC"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.avqc"
        path.write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(DataError, match="magic"):
            nn.read_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "t.avqc"
        nn.write_checkpoint(path, {"w": np.zeros((4, 4), dtype=np.float32)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError):
            nn.read_checkpoint(path)


class TestInit:
    @given(st.integers(0, 2 ** 31 - 1))
    def test_kaiming_uniform_bounds(self, seed):
        rng = np.random.default_rng(seed)
        w = nn.kaiming_uniform(rng, (16, 9), fan_in=9)
        bound = np.sqrt(6.0 / 9.0)
        assert np.all(np.abs(w) <= bound)
