import numpy as np
import pytest

from conftest import numeric_grad
from rhythmseg.errors import ConfigurationError, ContractError, DimensionError
from rhythmseg.tensor import (
    ConvSpec,
    Tape,
    Tensor,
    add,
    backward,
    concat_channels,
    conv1d,
    conv1d_transpose,
    dropout,
    index,
    layer_norm,
    matmul,
    max_pool2,
    mean_all,
    mul,
    relu,
    scale,
    softmax,
    sum_all,
)


def conv_oracle(x, w, b, dilation, padding):
    """Direct nested-loop dilated cross-correlation for one (time, channels) sequence."""
    k, cin, cout = w.shape
    total = (k - 1) * dilation
    left = {"causal": total, "same": total // 2, "none": 0}[padding]
    right = {"causal": 0, "same": total - total // 2, "none": 0}[padding]
    xp = np.vstack([np.zeros((left, cin)), x, np.zeros((right, cin))])
    T = len(xp) - total
    out = np.zeros((T, cout))
    for t in range(T):
        for o in range(cout):
            acc = b[o]
            for j in range(k):
                for c in range(cin):
                    acc += w[j, c, o] * xp[t + j * dilation, c]
            out[t, o] = acc
    return out


def grad_check(build, arrays, atol=1e-7, rtol=1e-6):
    """Compare tape gradients of ``sum(build(*tensors) * probe)`` with central differences."""
    tape = Tape()
    leaves = [tape.param(f"a{i}", a) for i, a in enumerate(arrays)]
    out = build(*leaves)
    probe = np.random.default_rng(7).standard_normal(out.shape)
    loss = sum_all(mul(out, Tensor(probe))) if out.shape else out
    grads = backward(loss, tape)

    def value():
        res = build(*[Tensor(a) for a in arrays]).data
        return float((res * probe).sum()) if res.shape else float(res)

    for i, a in enumerate(arrays):
        np.testing.assert_allclose(grads[f"a{i}"], numeric_grad(value, a), atol=atol, rtol=rtol)


class TestTensor:
    def test_rank_limit(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((1, 2, 3, 4)))

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((0, 3)))

    def test_detached_ops_record_nothing(self):
        out = relu(Tensor([[1.0, -1.0]]))
        assert out.tape is None

    def test_backward_needs_scalar(self):
        tape = Tape()
        x = tape.param("x", np.ones((2, 2)))
        with pytest.raises(ContractError):
            backward(relu(x), tape)

    def test_unreachable_param_gets_zeros(self):
        tape = Tape()
        x = tape.param("x", np.ones((2, 2)))
        tape.param("unused", np.ones(3))
        g = backward(sum_all(x), tape)
        assert np.array_equal(g["unused"], np.zeros(3))
        assert np.array_equal(g["x"], np.ones((2, 2)))

    def test_fan_out_accumulates(self):
        tape = Tape()
        x = tape.param("x", np.array([[2.0]]))
        g = backward(sum_all(add(x, x, scale(x, 3.0))), tape)
        assert g["x"][0, 0] == pytest.approx(5.0)

    def test_mixed_tapes_rejected(self):
        a = Tape().param("a", np.ones((2, 1)))
        b = Tape().param("b", np.ones((2, 1)))
        with pytest.raises(ContractError):
            add(a, b)

    def test_mark_reports_intermediate(self):
        tape = Tape()
        x = tape.param("x", np.array([[1.0, -2.0]]))
        h = tape.mark(relu(x), "h")
        g = backward(sum_all(scale(h, 2.0)), tape)
        assert np.array_equal(g["h"], [[2.0, 2.0]])


class TestConv:
    @pytest.mark.parametrize("padding", ["causal", "same", "none"])
    @pytest.mark.parametrize("k,d", [(1, 1), (2, 1), (3, 2), (10, 1), (2, 8)])
    def test_matches_nested_loop(self, rng, padding, k, d):
        x = rng.standard_normal((24, 3))
        w = rng.standard_normal((k, 3, 2))
        b = rng.standard_normal(2)
        out = conv1d(Tensor(x), Tensor(w), Tensor(b), ConvSpec(k, d, padding=padding))
        np.testing.assert_allclose(out.data, conv_oracle(x, w, b, d, padding), atol=1e-12)

    def test_causal_preserves_length(self, rng):
        out = conv1d(Tensor(rng.standard_normal((2, 50, 4))), Tensor(rng.standard_normal((3, 4, 5))),
                     Tensor(np.zeros(5)), ConvSpec(3, 4))
        assert out.shape == (2, 50, 5)

    def test_causal_ignores_future(self, rng):
        x = rng.standard_normal((40, 2))
        w, b = Tensor(rng.standard_normal((3, 2, 2))), Tensor(np.zeros(2))
        spec = ConvSpec(3, 2)
        y0 = conv1d(Tensor(x), w, b, spec).data
        x[25:] = rng.standard_normal((15, 2))
        y1 = conv1d(Tensor(x), w, b, spec).data
        np.testing.assert_array_equal(y0[:25], y1[:25])

    def test_kernel_tap_orientation(self):
        # causal output t = w[k-1] x[t] + w[k-2] x[t-d] + ...
        x = np.zeros((8, 1))
        x[3] = 1.0
        w = np.arange(1.0, 4.0).reshape(3, 1, 1)
        out = conv1d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), ConvSpec(3, 2)).data[:, 0]
        assert out[3] == 3.0 and out[5] == 2.0 and out[7] == 1.0

    def test_gradients(self, rng):
        spec = ConvSpec(3, 2, padding="same")
        grad_check(lambda x, w, b: conv1d(x, w, b, spec),
                   [rng.standard_normal((2, 9, 3)), rng.standard_normal((3, 3, 2)), rng.standard_normal(2)])

    def test_strided_gradients(self, rng):
        spec = ConvSpec(3, 1, stride=2, padding="none")
        grad_check(lambda x, w, b: conv1d(x, w, b, spec),
                   [rng.standard_normal((11, 2)), rng.standard_normal((3, 2, 2)), rng.standard_normal(2)])

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError) as err:
            conv1d(Tensor(np.ones((5, 2))), Tensor(np.ones((3, 3, 1))), Tensor(np.zeros(1)), ConvSpec(3))
        assert err.value.axis == "channels"

    def test_bad_padding(self):
        with pytest.raises(ConfigurationError):
            ConvSpec(3, padding="reflect")

    def test_too_short(self):
        with pytest.raises(DimensionError):
            conv1d(Tensor(np.ones((2, 1))), Tensor(np.ones((5, 1, 1))), Tensor(np.zeros(1)),
                   ConvSpec(5, padding="none"))


class TestTransposedConv:
    def test_oracle(self, rng):
        x = rng.standard_normal((5, 3))
        w = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal(4)
        out = conv1d_transpose(Tensor(x), Tensor(w), Tensor(b), 2).data
        ref = np.zeros((10, 4))
        for t in range(5):
            for j in range(2):
                ref[2 * t + j] = x[t] @ w[j] + b
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_gradients(self, rng):
        grad_check(lambda x, w, b: conv1d_transpose(x, w, b, 2),
                   [rng.standard_normal((2, 4, 3)), rng.standard_normal((2, 3, 2)), rng.standard_normal(2)])

    def test_stride_must_equal_kernel(self, rng):
        with pytest.raises(ConfigurationError):
            conv1d_transpose(Tensor(np.ones((4, 1))), Tensor(np.ones((3, 1, 1))), Tensor(np.zeros(1)), 2)


class TestPool:
    def test_even(self):
        x = np.array([[1.0], [3.0], [2.0], [0.0]])
        y = max_pool2(Tensor(x))
        assert y.data[:, 0].tolist() == [3.0, 2.0]
        assert y.meta["padded"] is False

    def test_odd_replicates_last(self):
        y = max_pool2(Tensor(np.array([[1.0], [3.0], [-5.0]])))
        assert y.data[:, 0].tolist() == [3.0, -5.0]
        assert y.meta["padded"] is True

    @pytest.mark.parametrize("T", [8, 9])
    def test_gradients(self, rng, T):
        grad_check(max_pool2, [rng.standard_normal((2, T, 3))])


class TestElementwise:
    def test_layer_norm_normalizes(self, rng):
        y = layer_norm(Tensor(rng.standard_normal((6, 8)) * 5 + 2), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-3)

    def test_layer_norm_gradients(self, rng):
        grad_check(layer_norm, [rng.standard_normal((2, 5, 4)), rng.standard_normal(4), rng.standard_normal(4)])

    def test_softmax_rows(self, rng):
        s = softmax(Tensor(rng.standard_normal((7, 5)) * 50)).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0)
        assert np.all(s >= 0)

    def test_softmax_gradients(self, rng):
        grad_check(softmax, [rng.standard_normal((4, 3))])

    def test_relu_gradients(self, rng):
        grad_check(relu, [rng.standard_normal((5, 3)) + 0.01])

    def test_matmul_gradients(self, rng):
        grad_check(matmul, [rng.standard_normal((2, 4, 3)), rng.standard_normal((3, 5))])
        grad_check(lambda a, b: matmul(a, b, transpose_b=True),
                   [rng.standard_normal((2, 4, 3)), rng.standard_normal((2, 6, 3))])

    def test_concat_gradients(self, rng):
        grad_check(lambda a, b: concat_channels([a, b]),
                   [rng.standard_normal((4, 2)), rng.standard_normal((4, 3))])

    def test_concat_time_mismatch(self):
        with pytest.raises(DimensionError) as err:
            concat_channels([Tensor(np.ones((4, 2))), Tensor(np.ones((5, 2)))])
        assert err.value.axis == "time"

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.ones((4, 2))), Tensor(np.ones((4, 3))))

    def test_index_and_mean(self, rng):
        grad_check(lambda x: mean_all(index(x, (slice(1, 4), 2))), [rng.standard_normal((5, 3))])

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal((5, 3)))
        assert dropout(x, 0.5, rng, training=False) is x

    def test_dropout_scales_kept_units(self, rng):
        y = dropout(Tensor(np.ones((1000, 4))), 0.25, rng).data
        kept = y[y > 0]
        np.testing.assert_allclose(kept, 1 / 0.75)
        assert abs(len(kept) / y.size - 0.75) < 0.03

    def test_dropout_needs_rng(self):
        with pytest.raises(ContractError):
            dropout(Tensor(np.ones((2, 2))), 0.5, None)
