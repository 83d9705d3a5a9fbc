import math

import numpy as np
import pytest

from cif_scd.errors import ConfigError, InvalidLabel, ShapeMismatch
from cif_scd.nn import (
    Adam,
    AmsConfig,
    CausalSelfAttention,
    Conv1d,
    FFN,
    LayerNorm,
    Linear,
    Sgd,
    Tensor,
    TransformerLayer,
    WarmupHold,
    ams_posteriors,
    amsoftmax_loss,
    bce_loss,
    load_checkpoint,
    save_checkpoint,
)
from cif_scd.nn import tensor as T
from oracles import finite_difference_check


def rng_for(seed):
    return np.random.default_rng(seed)


class TestPrimitives:
    def test_add_mul_broadcast_grads(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
        b = Tensor(np.array([10.0, 20.0]), requires_grad=True)
        loss = T.tsum((x + b) * 2.0)
        loss.backward()
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 2.0))
        np.testing.assert_array_equal(b.grad, np.full(2, 4.0))

    def test_matmul_grads(self):
        a = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        w = Tensor(np.array([[3.0], [5.0]]), requires_grad=True)
        loss = T.tsum(a @ w)
        loss.backward()
        np.testing.assert_array_equal(a.grad, [[3.0, 5.0]])
        np.testing.assert_array_equal(w.grad, [[1.0], [2.0]])

    def test_reused_node_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x  # dy/dx = 2x
        loss = y + y
        loss.backward()
        assert x.grad == pytest.approx(12.0)

    @pytest.mark.parametrize(
        "op",
        [
            T.relu,
            T.sigmoid,
            T.exp,
            T.absolute,
            lambda t: T.log(t + 5.0),
            lambda t: T.power(t + 5.0, 0.5),
            lambda t: T.softmax(t, axis=-1),
            lambda t: T.log_softmax(t, axis=-1),
            lambda t: T.clip(t, -0.8, 0.8),
            lambda t: T.pad_rows(t, 1, 2),
            lambda t: T.rows(t, 1, 3),
            lambda t: T.cols(t, 0, 2),
            lambda t: T.transpose2d(t),
            lambda t: T.reshape(t, (2, 6)),
            lambda t: T.l2_normalize_rows(t),
            lambda t: T.tmean(t, axis=0),
            lambda t: T.tsum(t, axis=1, keepdims=True),
            lambda t: T.mean_pool_rows(t, 2),
        ],
    )
    def test_pointwise_and_shaping_gradients(self, op):
        rng = rng_for(0)
        x = Tensor(rng.uniform(-2, 2, size=(4, 3)), requires_grad=True)
        proj = rng.standard_normal(op(x).data.shape)

        def build():
            return T.tsum(op(x) * Tensor(proj))

        assert finite_difference_check(build, [x], rng=rng) < 1e-6

    def test_concat_gradients(self):
        rng = rng_for(1)
        a = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        proj = rng.standard_normal((3, 6))

        def build():
            return T.tsum(T.concat([a, b], axis=1) * Tensor(proj))

        assert finite_difference_check(build, [a, b], rng=rng) < 1e-6

    def test_softmax_rows_sum_to_one(self):
        rng = rng_for(2)
        y = T.softmax(Tensor(rng.standard_normal((5, 7))), axis=-1)
        np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(5), atol=1e-12)

    def test_backward_needs_scalar(self):
        with pytest.raises(ValueError):
            Tensor(np.ones(3), requires_grad=True).backward()


class TestLinear:
    def test_identity(self):
        fc = Linear(3, 3, rng_for(0))
        fc.weight.data = np.eye(3)
        fc.bias.data = np.zeros(3)
        x = rng_for(1).standard_normal((4, 3))
        np.testing.assert_array_equal(fc(Tensor(x)).data, x)

    def test_relu_affine_example(self):
        fc = Linear(1, 1, rng_for(0), activation="relu")
        fc.weight.data = np.array([[3.0]])
        fc.bias.data = np.array([1.0])
        assert fc(Tensor([[2.0]])).data.tolist() == [[7.0]]
        fc.bias.data = np.array([-7.0])
        assert fc(Tensor([[2.0]])).data.tolist() == [[0.0]]

    def test_gradients(self):
        rng = rng_for(3)
        fc = Linear(8, 5, rng, activation="relu")
        x = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
        proj = rng.standard_normal((4, 5))

        def build():
            return T.tsum(fc(x) * Tensor(proj))

        worst = finite_difference_check(build, [x, fc.weight, fc.bias], rng=rng)
        assert worst < 1e-5


class TestConv1d:
    def test_identity_tap(self):
        conv = Conv1d(3, 3, 3, rng_for(0))
        conv.weight.data = np.zeros((9, 3))
        conv.weight.data[3:6] = np.eye(3)  # middle tap passes input through
        conv.bias.data = np.zeros(3)
        x = rng_for(1).standard_normal((5, 3))
        np.testing.assert_allclose(conv(Tensor(x)).data, x, atol=1e-15)

    def test_hand_convolution(self):
        conv = Conv1d(1, 1, 3, rng_for(0))
        conv.weight.data = np.array([[-1.0], [0.0], [1.0]])
        conv.bias.data = np.zeros(1)
        out = conv(Tensor([[1.0], [2.0], [4.0]]))
        np.testing.assert_allclose(out.data.ravel(), [2.0, 3.0, -2.0], atol=1e-15)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            Conv1d(2, 2, 4, rng_for(0))

    @pytest.mark.parametrize("kernel", [3, 5])
    def test_gradients(self, kernel):
        rng = rng_for(4)
        conv = Conv1d(3, 2, kernel, rng)
        x = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        proj = rng.standard_normal((6, 2))

        def build():
            return T.tsum(conv(x) * Tensor(proj))

        worst = finite_difference_check(build, [x, conv.weight, conv.bias], rng=rng)
        assert worst < 1e-5


class TestCausalAttention:
    def test_single_position_is_value_projection(self):
        rng = rng_for(5)
        attn = CausalSelfAttention(6, 2, rng)
        x = rng.standard_normal((1, 6))
        expected = (x @ attn.wv.weight.data + attn.wv.bias.data) \
            @ attn.wo.weight.data + attn.wo.bias.data
        np.testing.assert_allclose(attn(Tensor(x)).data, expected, atol=1e-12)

    def test_attention_rows_are_causal_and_normalized(self):
        rng = rng_for(6)
        attn = CausalSelfAttention(8, 2, rng)
        weights = attn.attention_weights(Tensor(rng.standard_normal((5, 8))))
        assert weights.shape == (2, 5, 5)
        np.testing.assert_allclose(weights.sum(axis=-1), np.ones((2, 5)), atol=1e-6)
        for h in range(2):
            upper = np.triu(weights[h], k=1)
            np.testing.assert_array_equal(upper, np.zeros_like(upper))

    def test_future_positions_do_not_leak(self):
        rng = rng_for(7)
        attn = CausalSelfAttention(8, 2, rng)
        x = rng.standard_normal((6, 8))
        base = attn(Tensor(x)).data.copy()
        bumped = x.copy()
        bumped[4] += 10.0
        out = attn(Tensor(bumped)).data
        np.testing.assert_array_equal(out[:4], base[:4])
        assert not np.allclose(out[4:], base[4:])

    def test_heads_must_divide_dim(self):
        with pytest.raises(ConfigError):
            CausalSelfAttention(7, 2, rng_for(0))

    def test_gradients(self):
        rng = rng_for(8)
        attn = CausalSelfAttention(8, 2, rng)
        x = Tensor(rng.standard_normal((5, 8)), requires_grad=True)
        proj = rng.standard_normal((5, 8))

        def build():
            return T.tsum(attn(x) * Tensor(proj))

        params = [x] + attn.parameters()
        assert finite_difference_check(build, params, rng=rng) < 1e-4


class TestLayerNormAndBlocks:
    def test_layer_norm_normalizes(self):
        rng = rng_for(9)
        ln = LayerNorm(6)
        out = ln(Tensor(rng.standard_normal((4, 6)) * 3 + 1)).data
        np.testing.assert_allclose(out.mean(axis=-1), np.zeros(4), atol=1e-9)
        np.testing.assert_allclose(out.std(axis=-1), np.ones(4), atol=1e-3)

    def test_layer_norm_gradients(self):
        rng = rng_for(10)
        ln = LayerNorm(5)
        x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        proj = rng.standard_normal((3, 5))

        def build():
            return T.tsum(ln(x) * Tensor(proj))

        assert finite_difference_check(build, [x, ln.gamma, ln.beta], rng=rng) < 1e-5

    def test_ffn_gradients(self):
        rng = rng_for(11)
        ffn = FFN(4, 8, rng)
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        proj = rng.standard_normal((3, 4))

        def build():
            return T.tsum(ffn(x) * Tensor(proj))

        assert finite_difference_check(build, [x] + ffn.parameters(), rng=rng) < 1e-5

    def test_transformer_layer_gradients(self):
        rng = rng_for(12)
        layer = TransformerLayer(4, 2, 8, rng)
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        proj = rng.standard_normal((4, 4))

        def build():
            return T.tsum(layer(x) * Tensor(proj))

        params = [x] + layer.parameters()
        assert finite_difference_check(build, params, rng=rng) < 1e-4


class TestAmsoftmax:
    def test_zero_margin_unit_scale_is_cosine_softmax(self):
        rng = rng_for(13)
        emb = rng.standard_normal((6, 8))
        weights = rng.standard_normal((4, 8))
        labels = rng.integers(0, 4, size=6)
        cfg = AmsConfig(margin=0.0, scale=1.0, num_classes=4)
        loss = amsoftmax_loss(Tensor(emb), labels, Tensor(weights), cfg)

        e = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        w = weights / np.linalg.norm(weights, axis=1, keepdims=True)
        logits = e @ w.T
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        expected = -logp[np.arange(6), labels].mean()
        assert loss.item() == pytest.approx(expected, abs=1e-9)

    def test_single_class_certain_event(self):
        rng = rng_for(14)
        cfg = AmsConfig(margin=0.2, scale=30.0, num_classes=1)
        loss = amsoftmax_loss(
            Tensor(rng.standard_normal((3, 4))), [0, 0, 0],
            Tensor(rng.standard_normal((1, 4))), cfg,
        )
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_invalid_label(self):
        cfg = AmsConfig(num_classes=4)
        with pytest.raises(InvalidLabel):
            amsoftmax_loss(Tensor(np.ones((2, 3))), [0, 4],
                           Tensor(np.ones((4, 3))), cfg)

    def test_margin_increases_loss(self):
        rng = rng_for(15)
        emb = Tensor(rng.standard_normal((5, 8)))
        weights = Tensor(rng.standard_normal((4, 8)))
        labels = [0, 1, 2, 3, 0]
        plain = amsoftmax_loss(emb, labels, weights, AmsConfig(0.0, 30.0, 4))
        margined = amsoftmax_loss(emb, labels, weights, AmsConfig(0.3, 30.0, 4))
        assert margined.item() > plain.item()

    def test_gradients(self):
        rng = rng_for(16)
        emb = Tensor(rng.standard_normal((6, 8)), requires_grad=True)
        weights = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
        labels = rng.integers(0, 4, size=6)
        cfg = AmsConfig(margin=0.2, scale=30.0, num_classes=4)

        def build():
            return amsoftmax_loss(emb, labels, weights, cfg)

        assert finite_difference_check(build, [emb, weights], rng=rng) < 1e-4

    def test_posteriors_rows_sum_to_one(self):
        rng = rng_for(17)
        post = ams_posteriors(rng.standard_normal((5, 8)),
                              rng.standard_normal((4, 8)), 30.0)
        np.testing.assert_allclose(post.sum(axis=1), np.ones(5), atol=1e-6)


class TestBce:
    def test_half_score(self):
        loss = bce_loss(Tensor(np.array([0.5])), [1])
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_clamp_bounds_saturated_scores(self):
        loss = bce_loss(Tensor(np.array([1.0, 0.0])), [1, 0])
        assert loss.item() <= -math.log(1.0 - 1e-7) + 1e-12
        assert np.isfinite(loss.item())

    def test_gradients(self):
        rng = rng_for(18)
        scores = Tensor(rng.uniform(0.1, 0.9, size=8), requires_grad=True)
        targets = rng.integers(0, 2, size=8)

        def build():
            return bce_loss(scores, targets)

        assert finite_difference_check(build, [scores], rng=rng) < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            bce_loss(Tensor(np.ones(3) * 0.5), [1, 0])


class TestOptim:
    def test_warmup_schedule(self):
        sched = WarmupHold(1e-3, 10)
        assert sched.lr(0) == pytest.approx(1e-4)
        assert sched.lr(9) == pytest.approx(1e-3)
        assert sched.lr(500) == pytest.approx(1e-3)

    def test_sgd_momentum_step(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Sgd([p], WarmupHold(0.1, 0), momentum=0.5)
        p.grad = np.array([2.0])
        opt.step()
        assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.0)
        p.grad = np.array([2.0])
        opt.step()  # velocity = 0.5 * 2 + 2 = 3
        assert p.data[0] == pytest.approx(0.8 - 0.1 * 3.0)

    def test_adam_first_step_moves_by_lr(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([p], WarmupHold(0.01, 0))
        p.grad = np.array([123.0])
        opt.step()
        # bias-corrected first step is lr * g / (|g| + eps)
        assert p.data[0] == pytest.approx(1.0 - 0.01, rel=1e-6)

    def test_training_is_deterministic(self):
        def run():
            rng = rng_for(21)
            fc = Linear(4, 1, rng)
            opt = Adam(fc.parameters(), WarmupHold(1e-2, 5))
            data = rng_for(22).standard_normal((8, 4))
            for _ in range(20):
                loss = T.tsum(T.power(fc(Tensor(data)), 2.0))
                opt.zero_grad()
                loss.backward()
                opt.step()
            return fc.weight.data.copy(), fc.bias.data.copy()

        w1, b1 = run()
        w2, b2 = run()
        np.testing.assert_array_equal(w1, w2)
        np.testing.assert_array_equal(b1, b2)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = rng_for(23)
        arrays = {
            "layer.weight": rng.standard_normal((3, 4)),
            "layer.bias": rng.standard_normal(4),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays, seed=7, config={"dim": 4})
        loaded, header = load_checkpoint(path)
        assert header["seed"] == 7
        assert header["config"] == {"dim": 4}
        for name, value in arrays.items():
            np.testing.assert_array_equal(loaded[name], value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"w": np.ones((4, 4))})
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_module_state_round_trip(self, tmp_path):
        fc = Linear(3, 2, rng_for(24))
        path = tmp_path / "fc.ckpt"
        save_checkpoint(path, fc.state_arrays())
        fresh = Linear(3, 2, rng_for(99))
        arrays, _ = load_checkpoint(path)
        fresh.load_state_arrays(arrays)
        np.testing.assert_array_equal(fresh.weight.data, fc.weight.data)

    def test_missing_parameter(self, tmp_path):
        fc = Linear(3, 2, rng_for(25))
        with pytest.raises(KeyError):
            fc.load_state_arrays({"weight": fc.weight.data})
