import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwmlp import tensor as T
from kwmlp.tensor import Tape, TapeError, ShapeError, Tensor, grad_check


def triple_loop(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out


def erf_series(z, terms=40):
    total = 0.0
    for n in range(terms):
        total += (-1) ** n * z ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return 2.0 / math.sqrt(math.pi) * total


def d64(rng, *shape):
    return Tensor(rng.normal(size=shape), dtype=np.float64)


# -- matmul ------------------------------------------------------------------


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 3)).astype(np.float32)
    np.testing.assert_array_equal(T.matmul(a, np.eye(3, dtype=np.float32)).data, a)


def test_matmul_scalar_case():
    assert T.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop_double(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    out = T.matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data
    assert np.abs(out - triple_loop(a, b)).max() <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_matmul_matches_triple_loop_single(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(6, 7)).astype(np.float32), r.normal(size=(7, 4)).astype(np.float32)
    out = T.matmul(Tensor(a), Tensor(b)).data
    assert out.dtype == np.float32
    assert np.abs(out - triple_loop(a, b)).max() <= 1e-3


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_matmul_batched_forms(rng):
    x, w = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(T.matmul(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64)).data,
                               x @ w)
    s = rng.normal(size=(3, 3))
    np.testing.assert_allclose(T.matmul(Tensor(s, dtype=np.float64), Tensor(x, dtype=np.float64)).data,
                               np.einsum("ij,bjk->bik", s, x))


# -- gelu / layer_norm ---------------------------------------------------------


def test_gelu_values():
    assert T.gelu([0.0]).data[0] == 0.0
    assert abs(T.gelu(Tensor([10.0], dtype=np.float64)).data[0] - 10.0) <= 1e-6
    exact_at_1 = 0.5 * (1 + erf_series(1 / math.sqrt(2)))
    assert abs(exact_at_1 - 0.841345) < 1e-6
    assert abs(T.gelu(Tensor([1.0], dtype=np.float64)).data[0] - exact_at_1) <= 1e-3


def test_gelu_within_envelope_of_erf_form():
    xs = np.linspace(-6, 6, 2001)
    exact = np.array([0.5 * x * (1 + math.erf(x / math.sqrt(2))) for x in xs])
    approx = T.gelu(Tensor(xs, dtype=np.float64)).data
    assert np.abs(approx - exact).max() <= 1e-3


def test_layer_norm_constant_slice_is_zero():
    out = T.layer_norm(np.full((2, 5), 3.0), np.ones(5), np.zeros(5)).data
    assert np.abs(out).max() <= 1e-6


def test_layer_norm_normalizes(rng):
    x = Tensor(rng.normal(3.0, 4.0, size=(10, 64)), dtype=np.float64)
    out = T.layer_norm(x, Tensor(np.ones(64), dtype=np.float64), Tensor(np.zeros(64), dtype=np.float64)).data
    assert np.abs(out.mean(axis=-1)).max() <= 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() <= 1e-4


def test_layer_norm_two_pass_oracle():
    x = [1.0, 2.0, 3.0]
    mean = sum(x) / 3
    var = sum((v - mean) ** 2 for v in x) / 3
    expected = [(v - mean) / math.sqrt(var + 1e-5) for v in x]
    out = T.layer_norm(Tensor([x], dtype=np.float64), Tensor(np.ones(3), dtype=np.float64),
                       Tensor(np.zeros(3), dtype=np.float64)).data[0]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


# -- structural ------------------------------------------------------------------


def test_add_zeros_is_identity(rng):
    x = rng.normal(size=(3, 4)).astype(np.float32)
    np.testing.assert_array_equal(T.add(x, np.zeros_like(x)).data, x)


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        T.add(np.zeros((2, 3)), np.zeros((3, 2)))


def test_split_concat_round_trip(rng):
    x = rng.normal(size=(98, 256)).astype(np.float32)
    a, b = T.split_last_axis(x)
    assert a.shape == b.shape == (98, 128)
    np.testing.assert_array_equal(T.concat_last_axis(a, b).data, x)


def test_split_odd_width_rejected():
    with pytest.raises(ShapeError):
        T.split_last_axis(np.zeros((2, 5)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-1e3, 1e3))
def test_softmax_rows_sum_to_one_and_shift_invariant(seed, shift):
    x = np.random.default_rng(seed).normal(0, 5, size=(4, 35))
    p = T.softmax_last_axis(Tensor(x, dtype=np.float64)).data
    assert np.abs(p.sum(axis=-1) - 1).max() <= 1e-6
    q = T.softmax_last_axis(Tensor(x + shift, dtype=np.float64)).data
    assert np.abs(p - q).max() <= 1e-6


def test_bias_add_token_axis(rng):
    x, b = rng.normal(size=(2, 3, 4)), rng.normal(size=3)
    out = T.bias_add(Tensor(x, dtype=np.float64), Tensor(b, dtype=np.float64), axis=-2).data
    np.testing.assert_allclose(out, x + b[:, None])


# -- backward --------------------------------------------------------------------


def test_backward_sum_gives_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = T.tsum(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_product_rule(rng):
    x = Tensor(rng.normal(size=5), requires_grad=True, dtype=np.float64)
    y = Tensor(rng.normal(size=5), requires_grad=True, dtype=np.float64)
    with Tape():
        loss = T.tsum(T.mul(x, y))
    T.backward(loss)
    np.testing.assert_array_equal(x.grad, y.data)
    np.testing.assert_array_equal(y.grad, x.data)


def test_backward_matches_finite_differences(rng):
    x, w = d64(rng, 3, 4), d64(rng, 4, 5)
    assert grad_check(lambda a, b: T.tsum(T.gelu(T.matmul(a, b))), [x, w], 1e-4) <= 1e-4


def test_backward_twice_is_error(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with Tape() as tape:
        loss = T.tsum(x)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_needs_scalar(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 2.0)
    with pytest.raises(TapeError):
        tape.backward(y)


def test_backward_detached_loss(rng):
    x = Tensor(rng.normal(size=3))
    with Tape():
        loss = T.tsum(x)
    with pytest.raises(TapeError):
        T.backward(loss)


def test_no_grad_for_frozen_tensor(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    c = Tensor(rng.normal(size=3))
    with Tape() as tape:
        loss = T.tsum(T.mul(x, c))
    tape.backward(loss)
    assert c.grad is None
    assert x.grad is not None


def test_inference_records_nothing(rng):
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    out = T.matmul(rng.normal(size=(2, 3)), w)
    assert not out.requires_grad and out._tape is None


def test_tape_replay_is_bit_identical(rng):
    a, w = rng.normal(size=(6, 8)), rng.normal(size=(8, 4))

    def run():
        wt = Tensor(w, requires_grad=True)
        with Tape() as tape:
            loss = T.tsum(T.gelu(T.layer_norm(T.matmul(a, wt), np.ones(4), np.zeros(4))))
        tape.backward(loss)
        return loss.data.copy(), wt.grad.copy()

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


# -- grad_check ------------------------------------------------------------------


def test_grad_check_linear_is_exact(rng):
    x, w = d64(rng, 5), Tensor(rng.normal(size=5), dtype=np.float64)
    w.requires_grad = False
    c = w.data.copy()
    assert grad_check(lambda a: T.tsum(T.mul(a, Tensor(c))), [x], 1e-4) <= 1e-9


OPS = {
    "matmul": (lambda a, b: T.tsum(T.mul(T.matmul(a, b), T.matmul(a, b))), [(4, 5), (5, 3)]),
    "matmul_shared_left": (lambda s, z: T.tsum(T.gelu(T.matmul(s, z))), [(6, 6), (2, 6, 4)]),
    "matmul_shared_right": (lambda x, w: T.tsum(T.gelu(T.matmul(x, w))), [(2, 6, 4), (4, 3)]),
    "gelu": (lambda x: T.tsum(T.gelu(x)), [(3, 7)]),
    "layer_norm": (lambda x, g, b: T.tsum(T.gelu(T.layer_norm(x, g, b))), [(2, 6, 8), (8,), (8,)]),
    "mul_add": (lambda x, y: T.tsum(T.gelu(T.add(T.mul(x, y), x))), [(3, 4), (3, 4)]),
    "bias_add": (lambda x, b: T.tsum(T.gelu(T.bias_add(x, b))), [(2, 3, 4), (4,)]),
    "bias_add_tokens": (lambda x, b: T.tsum(T.gelu(T.bias_add(x, b, axis=-2))), [(2, 3, 4), (3,)]),
    "split_concat": (lambda x: T.tsum(T.gelu(T.concat_last_axis(*reversed(T.split_last_axis(x))))), [(3, 6)]),
    "transpose": (lambda x, w: T.tsum(T.gelu(T.matmul(T.transpose(x), w))), [(2, 4, 3), (4, 5)]),
    "mean": (lambda x: T.tsum(T.gelu(T.mean_over_axis(x, -2))), [(2, 5, 3)]),
    "softmax": (lambda x, w: T.tsum(T.mul(T.softmax_last_axis(x), w)), [(3, 5), (3, 5)]),
    "log_softmax": (lambda x, w: T.tsum(T.mul(T.log_softmax_last_axis(x), w)), [(3, 5), (3, 5)]),
    "matmul_vector": (lambda v, w: T.tsum(T.gelu(T.matmul(v, w))), [(4,), (4, 3)]),
    "scale": (lambda x: T.tsum(T.gelu(T.scale(x, -1.7))), [(4,)]),
}


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("op", sorted(OPS))
def test_every_op_passes_grad_check(op, seed):
    fn, shapes = OPS[op]
    r = np.random.default_rng(seed)
    inputs = [d64(r, *s) for s in shapes]
    assert grad_check(fn, inputs, 1e-4) <= 1e-4


def test_grad_check_catches_a_broken_rule(monkeypatch, rng):
    # negative control: a wrong GELU derivative must not slip past the checker
    good = T._gelu_grad
    monkeypatch.setattr(T, "_gelu_grad", lambda x, t: 1.01 * good(x, t))
    assert grad_check(lambda x: T.tsum(T.gelu(x)), [d64(rng, 3, 7)], 1e-4) > 1e-3
