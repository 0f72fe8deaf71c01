import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbbnn import autodiff as ad
from lbbnn.autodiff import NonFiniteError, ShapeError, Tape, Tensor
from lbbnn.rng import RngStream, sample_bernoulli, sample_gaussian

from conftest import gradcheck, rel_err


def _box(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, shape)


def _pos(rng, shape):
    return rng.uniform(0.2, 2.0, shape)


def _away_from_kinks(rng, shape):
    # keeps hardtanh/relu/clamp inputs clear of their kinks for finite differences
    x = rng.uniform(-2.0, 2.0, shape)
    return np.where(np.abs(np.abs(x) - 1.0) < 0.05, x + 0.2, np.where(np.abs(x) < 0.05, 0.3, x))


# name -> (builder taking param tensors, list of input generators)
UNARY = {
    "neg": (ad.neg, _box),
    "square": (ad.square, _box),
    "exp": (ad.exp, _box),
    "log": (ad.log, _pos),
    "sqrt": (ad.sqrt, _pos),
    "sigmoid": (ad.sigmoid, _box),
    "log_sigmoid": (ad.log_sigmoid, _box),
    "softplus": (ad.softplus, _box),
    "tanh": (ad.tanh, _box),
    "relu": (ad.relu, _away_from_kinks),
    "hardtanh": (ad.hardtanh, _away_from_kinks),
    "clamp": (lambda t: ad.clamp(t, -0.5, 0.7), lambda r, s: r.choice([-1.5, -0.2, 0.3, 1.5], s)
              + r.uniform(-0.05, 0.05, s)),
    "transpose": (ad.transpose, _box),
    "reshape": (lambda t: ad.reshape(t, (-1,)), _box),
    "sum": (ad.sum, _box),
    "sum_axis0": (lambda t: ad.sum(t, axis=0), _box),
    "sum_axis1": (lambda t: ad.sum(t, axis=1), _box),
    "mean": (ad.mean, _box),
    "mean_axis1": (lambda t: ad.mean(t, axis=1), _box),
    "index": (lambda t: t[1:, ::2], _box),
    "logsumexp": (ad.logsumexp, _box),
    "log_softmax": (ad.log_softmax, _box),
    "softmax": (ad.softmax, _box),
}

BINARY = {
    "add": (ad.add, _box, _box),
    "sub": (ad.sub, _box, _box),
    "mul": (ad.mul, _box, _box),
    "div": (ad.div, _box, _pos),
}


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    # a random linear functional turns any output into a scalar loss
    return (out * Tensor(w.reshape(out.shape))).sum() if out.ndim else out * float(w.ravel()[0])


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    op, gen = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for trial in range(100):
        shape = (int(rng.integers(2, 4)), int(rng.integers(2, 5)))
        x = Tensor.param(gen(rng, shape))
        w = rng.standard_normal(op(Tensor(x.data)).data.size)
        err = gradcheck(lambda: _weighted(op(x), w), [x])
        assert err < 1e-4, (name, trial, err)


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("layout", ["same", "scalar", "batch"])
def test_binary_gradients(name, layout):
    op, gen_a, gen_b = BINARY[name]
    rng = np.random.default_rng(zlib.crc32(f"{name}/{layout}".encode()))
    for _ in range(100):
        shape = (int(rng.integers(2, 4)), int(rng.integers(2, 4)))
        shape_b = {"same": shape, "scalar": (), "batch": shape[1:]}[layout]
        a = Tensor.param(gen_a(rng, shape))
        b = Tensor.param(gen_b(rng, shape_b))
        w = rng.standard_normal(shape)
        assert gradcheck(lambda: _weighted(op(a, b), w), [a, b]) < 1e-4
        # the operand order the other way round broadcasts too
        assert gradcheck(lambda: _weighted(op(b, a) if name != "div" else op(b, a + 3.0), w),
                         [a, b]) < 1e-4


@pytest.mark.parametrize("case", ["mm", "mv", "vm", "vv"])
def test_matmul_gradients(case):
    rng = np.random.default_rng(7)
    for _ in range(100):
        n, k, m = (int(v) for v in rng.integers(1, 5, 3))
        sa = {"mm": (n, k), "mv": (n, k), "vm": (k,), "vv": (k,)}[case]
        sb = {"mm": (k, m), "mv": (k,), "vm": (k, m), "vv": (k,)}[case]
        a, b = Tensor.param(_box(rng, sa)), Tensor.param(_box(rng, sb))
        out = a.data @ b.data
        w = rng.standard_normal(np.shape(out)) if np.ndim(out) else np.array([1.3])
        assert gradcheck(lambda: _weighted(ad.matmul(a, b), w), [a, b]) < 1e-4


def test_concat_gradient():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = Tensor.param(_box(rng, (2, 3))), Tensor.param(_box(rng, (4, 3)))
        w = rng.standard_normal((6, 3))
        assert gradcheck(lambda: _weighted(ad.concat([a, b], axis=0), w), [a, b]) < 1e-4
        w1 = rng.standard_normal((2, 6))
        c = Tensor.param(_box(rng, (2, 3)))
        assert gradcheck(lambda: _weighted(ad.concat([a, c], axis=1), w1), [a, c]) < 1e-4


def test_three_layer_composite_matches_finite_differences():
    rng = np.random.default_rng(0)
    params = [Tensor.param(0.5 * rng.standard_normal(s)) for s in [(3, 2), (2,), (2, 3), (3,), (3, 1)]]
    assert sum(p.data.size for p in params) == 20
    x = Tensor(rng.standard_normal((5, 3)))

    def loss():
        w1, b1, w2, b2, w3 = params
        h = ad.tanh(x @ w1 + b1)
        h = ad.sigmoid(h @ w2 + b2)
        return ad.softplus(h @ w3).sum()

    assert gradcheck(loss, params, step=1e-5) < 1e-4


# -- documented examples ---------------------------------------------------------

def test_scalar_examples():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.hardtanh(Tensor(-3.2)).item() == -1.0
    assert ad.hardtanh(Tensor(0.4)).item() == 0.4
    assert ad.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2.0), abs=1e-15)


def test_gradient_of_square():
    x = Tensor.param(3.0)
    with Tape() as tape:
        loss = x * x
        (g,) = tape.gradient(loss, [x])
    assert g == 6.0


def test_gradient_of_sigmoid_at_zero():
    x = np.array([0.5, -1.0, 2.0])
    w = Tensor.param(np.zeros((4, 3)))
    with Tape() as tape:
        loss = ad.sigmoid(w @ Tensor(x)).sum()
        (g,) = tape.gradient(loss, [w])
    np.testing.assert_array_equal(g, 0.25 * np.tile(x, (4, 1)))


def test_module_level_gradient_uses_active_tape():
    x = Tensor.param(np.array([1.0, 2.0]))
    with Tape():
        loss = ad.square(x).sum()
        (g,) = ad.gradient(loss, [x])
    np.testing.assert_array_equal(g, [2.0, 4.0])
    with pytest.raises(ValueError):
        ad.gradient(loss, [x])


# -- errors ------------------------------------------------------------------------

def test_domain_errors():
    with pytest.raises(ValueError):
        ad.log(Tensor([1.0, -1.0]))
    with pytest.raises(ValueError):
        ad.log(Tensor(0.0))
    with pytest.raises(ValueError):
        ad.sqrt(Tensor(-1e-3))
    with pytest.raises(ZeroDivisionError):
        ad.div(Tensor([1.0, 2.0]), Tensor([1.0, 0.0]))


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        # column broadcasting is not supported
        ad.mul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_raises_naming_the_op():
    with pytest.raises(NonFiniteError, match="exp"):
        ad.exp(Tensor(1000.0))
    with pytest.raises(NonFiniteError, match="mul"):
        ad.mul(Tensor(1e200), Tensor(1e200))


def test_gradient_requires_scalar_loss_and_taped_params():
    x = Tensor.param(np.ones(3))
    stranger = Tensor.param(np.ones(3))
    with Tape() as tape:
        y = ad.square(x)
        with pytest.raises(ValueError, match="scalar"):
            tape.gradient(y, [x])
        with pytest.raises(ValueError, match="not on the tape"):
            tape.gradient(y.sum(), [stranger])


def test_unused_inputs_get_zero_gradient_and_repeats_accumulate():
    x = Tensor.param(np.array([1.0, -2.0]))
    y = Tensor.param(np.array([3.0, 4.0]))
    with Tape() as tape:
        loss = (x * x * x).sum() + (y * 0.0).sum()
        gx, gy = tape.gradient(loss, [x, y])
    np.testing.assert_array_equal(gx, 3 * x.data ** 2)
    np.testing.assert_array_equal(gy, [0.0, 0.0])


# -- tape properties -----------------------------------------------------------------

def test_tape_replay_is_bit_exact():
    rng = np.random.default_rng(1)
    w = Tensor.param(rng.standard_normal((4, 3)))
    x = Tensor(rng.standard_normal((5, 4)))
    with Tape() as tape:
        out = ad.log_softmax(ad.tanh(x @ w)).sum() + ad.softplus(w).mean()
    tape.replay()
    assert len(tape) > 0
    # tampering with a recorded output breaks the replay check
    tape.nodes[0].output.data[0, 0] += 1e-12
    with pytest.raises(AssertionError):
        tape.replay()
    del out


def test_constants_are_not_recorded():
    with Tape() as tape:
        ad.exp(Tensor([1.0, 2.0]))
    assert len(tape) == 0


def test_accumulation_order_independent_within_tolerance():
    rng = np.random.default_rng(5)
    x = Tensor.param(rng.standard_normal(50))
    with Tape() as t1:
        terms = [ad.sigmoid(x * float(c)) for c in np.linspace(0.1, 2.0, 20)]
        loss1 = sum(terms[1:], terms[0]).sum()
        (g1,) = t1.gradient(loss1, [x])
    with Tape() as t2:
        terms = [ad.sigmoid(x * float(c)) for c in np.linspace(0.1, 2.0, 20)[::-1]]
        loss2 = sum(terms[1:], terms[0]).sum()
        (g2,) = t2.gradient(loss2, [x])
    assert rel_err(g1, g2) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6))
def test_forward_determinism(values):
    x = np.array(values)
    a = ad.log_softmax(ad.tanh(Tensor(x)) * 3.0).data
    b = ad.log_softmax(ad.tanh(Tensor(x.copy())) * 3.0).data
    assert a.tobytes() == b.tobytes()
    assert np.isclose(np.exp(a).sum(), 1.0)


# -- random streams --------------------------------------------------------------------

def test_bernoulli_degenerate_and_bounds():
    rng = RngStream(0)
    np.testing.assert_array_equal(sample_bernoulli(np.ones(10), rng).data, np.ones(10))
    np.testing.assert_array_equal(sample_bernoulli(np.zeros(10), rng).data, np.zeros(10))
    with pytest.raises(ValueError):
        sample_bernoulli(np.array([0.5, 1.1]), rng)
    with pytest.raises(ValueError):
        sample_bernoulli(np.array([-0.1]), rng)


def test_gaussian_moments():
    x = sample_gaussian(10**6, RngStream(2024)).data
    assert abs(x.mean()) < 0.004
    assert abs(x.var() - 1.0) < 0.005


def test_identical_seeds_identical_draws():
    a = sample_gaussian((3, 4), RngStream(99)).data
    b = sample_gaussian((3, 4), RngStream(99)).data
    assert a.tobytes() == b.tobytes()
    c = sample_gaussian((3, 4), RngStream(100)).data
    assert not np.array_equal(a, c)


def test_spawned_streams_are_reproducible_and_distinct():
    s1, s2 = RngStream(5).spawn(2)
    t1, _ = RngStream(5).spawn(2)
    assert np.array_equal(s1.normal(5), t1.normal(5))
    assert not np.array_equal(RngStream(5).spawn(2)[0].normal(5), s2.normal(5))
