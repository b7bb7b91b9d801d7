import numpy as np
import pytest

from ipp3d import autodiff as ad
from ipp3d.autodiff import Tensor, backward
from ipp3d.errors import ShapeError

from fdcheck import assert_grads_close, numeric_grads


def _fd_check(build_loss, tensors, step=1e-5, rtol=1e-4, atol=1e-6):
    """Compare backward() gradients against central differences for each leaf."""
    loss = build_loss()
    backward(loss)
    analytic = [t.grad.copy() for t in tensors]
    for t in tensors:
        t.zero_grad()

    def f():
        return float(build_loss().data)

    numeric = numeric_grads(f, [t.data for t in tensors], step=step)
    for got, want, t in zip(analytic, numeric, tensors):
        assert_grads_close(got, want, rtol=rtol, atol=atol, label=f"shape {t.shape}")


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    x = np.arange(6.0).reshape(2, 3)
    out = ad.matmul(Tensor(np.eye(2)), Tensor(x))
    assert np.array_equal(out.data, x)


def test_matmul_hand_arithmetic():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_gradient_fd():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    _fd_check(lambda: ad.sum_all(ad.matmul(a, b)), [a, b])


def test_matmul_batched_gradient_fd():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    _fd_check(lambda: ad.sum_all(ad.matmul(a, b)), [a, b])


def test_matmul_batched_shared_weight_fd():
    rng = np.random.default_rng(2)
    a = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    _fd_check(lambda: ad.sum_all(ad.matmul(a, w)), [a, w])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# ---------------------------------------------------------------- softmax


def test_softmax_uniform_row():
    out = ad.softmax_rows(Tensor([[2.0, 2.0, 2.0, 2.0]]))
    assert np.allclose(out.data, 0.25)


def test_softmax_hand_values():
    out = ad.softmax_rows(Tensor([[0.0, np.log(3.0)]]))
    assert np.allclose(out.data, [[0.25, 0.75]])


def test_softmax_extreme_inputs_stable():
    out = ad.softmax_rows(Tensor([[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]]))
    assert np.all(np.isfinite(out.data))
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 6))
    a = ad.softmax_rows(Tensor(x))
    b = ad.softmax_rows(Tensor(x + 137.0))
    assert np.allclose(a.data, b.data, atol=1e-12)


def test_softmax_gradient_fd():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w = rng.normal(size=(3, 5))  # fixed projection so the loss is non-trivial
    _fd_check(lambda: ad.sum_all(ad.mul(ad.softmax_rows(x), Tensor(w))), [x])


# ---------------------------------------------------------------- layer_norm


def test_layer_norm_constant_row_zero():
    g = Tensor(np.ones(4))
    b = Tensor(np.zeros(4))
    out = ad.layer_norm(Tensor([[3.0, 3.0, 3.0, 3.0]]), g, b)
    assert np.allclose(out.data, 0.0)


def test_layer_norm_two_values():
    g = Tensor(np.ones(2))
    b = Tensor(np.zeros(2))
    out = ad.layer_norm(Tensor([[1.0, 3.0]]), g, b)
    # variance 1, epsilon 1e-5 in the denominator
    want = 1.0 / np.sqrt(1.0 + 1e-5)
    assert np.allclose(out.data, [[-want, want]], atol=1e-9)


def test_layer_norm_gradient_fd():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    g = Tensor(rng.normal(size=6), requires_grad=True)
    b = Tensor(rng.normal(size=6), requires_grad=True)
    w = rng.normal(size=(4, 6))
    _fd_check(lambda: ad.sum_all(ad.mul(ad.layer_norm(x, g, b), Tensor(w))), [x, g, b])


# ---------------------------------------------------------------- elementwise and misc


def test_add_bias_and_gradients_fd():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    _fd_check(lambda: ad.sum_all(ad.add(x, b)), [x, b])


def test_mul_relu_tanh_exp_log_fd():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(4, 4)) + 0.1, requires_grad=True)
    y = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

    def loss():
        a = ad.mul(ad.tanh(x), ad.relu(y))
        b = ad.exp(ad.scale(x, 0.3))
        c = ad.log(ad.add_scalar(ad.mul(x, x), 1.0))
        return ad.mean_all(ad.add(ad.add(a, b), c))

    _fd_check(loss, [x, y])


def test_xlogx_fd_and_zero_convention():
    rng = np.random.default_rng(77)
    x = Tensor(rng.uniform(0.05, 2.0, size=(4, 4)), requires_grad=True)
    _fd_check(lambda: ad.sum_all(ad.xlogx(x)), [x])
    z = Tensor(np.array([[0.0, 0.5]]), requires_grad=True)
    out = ad.xlogx(z)
    assert out.data[0, 0] == 0.0
    backward(ad.sum_all(out))
    assert z.grad[0, 0] == 0.0


def test_minimum_and_clamp_fd():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    y = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    _fd_check(lambda: ad.sum_all(ad.minimum(x, y)), [x, y])
    _fd_check(lambda: ad.sum_all(ad.clamp(x, -0.5, 0.5)), [x])


def test_concat_fd():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    y = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 6))
    _fd_check(lambda: ad.sum_all(ad.mul(ad.concat([x, y], axis=-1), Tensor(w))), [x, y])


def test_gather_and_set_rows_fd():
    rng = np.random.default_rng(10)
    x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    rows = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    idx = np.array([1, 4])
    _fd_check(lambda: ad.sum_all(ad.gather_rows(x, np.array([0, 2, 2, 5]))), [x])
    _fd_check(lambda: ad.sum_all(ad.set_rows(x, idx, rows)), [x, rows])


def test_gather_rows_batched_fd():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    idx = np.array([[0, 3], [4, 4]])
    _fd_check(lambda: ad.sum_all(ad.gather_rows(x, idx)), [x])


def test_take_along_last_fd():
    rng = np.random.default_rng(12)
    x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    idx = np.array([0, 5, 2, 2])
    _fd_check(lambda: ad.sum_all(ad.take_along_last(x, idx)), [x])


def test_split_merge_heads_roundtrip_and_fd():
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
    split = ad.split_heads(x, 2)
    assert split.shape == (2, 5, 3)
    merged = ad.merge_heads(split, 2, batched=False)
    assert np.allclose(merged.data, x.data)
    w = rng.normal(size=(2, 5, 3))
    _fd_check(lambda: ad.sum_all(ad.mul(ad.split_heads(x, 2), Tensor(w))), [x])

    xb = Tensor(rng.normal(size=(2, 4, 6)), requires_grad=True)
    sb = ad.split_heads(xb, 3)
    assert sb.shape == (6, 4, 2)
    mb = ad.merge_heads(sb, 3, batched=True)
    assert np.allclose(mb.data, xb.data)
    wb = rng.normal(size=(6, 4, 2))
    _fd_check(lambda: ad.sum_all(ad.mul(ad.split_heads(xb, 3), Tensor(wb))), [xb])


def test_reductions_fd():
    rng = np.random.default_rng(14)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    _fd_check(lambda: ad.mean_all(x), [x])
    _fd_check(lambda: ad.sum_all(ad.mul(ad.sum_last(x), ad.sum_last(x))), [x])


def test_reshape_transpose_fd():
    rng = np.random.default_rng(15)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(4, 3))
    v = rng.normal(size=12)
    _fd_check(lambda: ad.sum_all(ad.mul(ad.transpose_last2(x), Tensor(w))), [x])
    _fd_check(lambda: ad.sum_all(ad.mul(ad.reshape(x, (12,)), Tensor(v))), [x])


# ---------------------------------------------------------------- backward semantics


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_composite_graph_fd():
    # matmul -> softmax -> layer_norm chain on a 4x4 instance.
    rng = np.random.default_rng(16)
    w1 = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    g = Tensor(rng.normal(size=4), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    x = rng.normal(size=(4, 4))
    proj = rng.normal(size=(4, 4))

    def loss():
        h = ad.matmul(Tensor(x), w1)
        s = ad.softmax_rows(h)
        y = ad.layer_norm(s, g, b)
        return ad.mean_all(ad.mul(y, Tensor(proj)))

    _fd_check(loss, [w1, g, b])


def test_disjoint_graphs_do_not_contaminate():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = Tensor(np.ones((2, 2)), requires_grad=True)
    backward(ad.sum_all(ad.mul(x, x)))
    assert y.grad is None
    assert np.allclose(x.grad, 2.0)


def test_repeated_backward_is_an_error():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = ad.sum_all(x)
    backward(loss)
    with pytest.raises(RuntimeError):
        backward(loss)


def test_backward_rejects_nonscalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ad.mul(x, x))


def test_backward_deterministic():
    rng = np.random.default_rng(17)
    data = rng.normal(size=(4, 4))
    grads = []
    for _ in range(2):
        x = Tensor(data.copy(), requires_grad=True)
        backward(ad.sum_all(ad.softmax_rows(ad.matmul(x, x))))
        grads.append(x.grad.copy())
    assert np.array_equal(grads[0], grads[1])


def test_no_grad_skips_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.no_grad():
        out = ad.mul(x, x)
    assert out._parents == ()
    out2 = ad.mul(x, x)
    assert out2._parents != ()


# ---------------------------------------------------------------- serialization


def test_save_load_roundtrip():
    rng = np.random.default_rng(18)
    arrays = {
        "w1": rng.normal(size=(3, 4)),
        "b1": rng.normal(size=4),
        "deep.name.w2": rng.normal(size=(2, 2, 2)),
    }
    blob = ad.save_tensors(arrays)
    assert blob[:4] == b"ADTF"
    out = ad.load_tensors(blob)
    assert set(out) == set(arrays)
    for k in arrays:
        assert np.array_equal(out[k], arrays[k])


def test_save_deterministic_bytes():
    arrays = {"b": np.ones(2), "a": np.zeros((2, 1))}
    assert ad.save_tensors(arrays) == ad.save_tensors(dict(reversed(list(arrays.items()))))


def test_load_rejects_bad_magic():
    with pytest.raises(ValueError):
        ad.load_tensors(b"XXXX" + b"\x00" * 8)
