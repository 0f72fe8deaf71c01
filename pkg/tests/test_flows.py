import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid
from scipy.stats import norm

from lbbnn import autodiff as ad
from lbbnn.autodiff import ShapeError, Tensor
from lbbnn.flows import (IafChain, InverseFlowHead, MaskedAutoregressiveNet, iaf_step,
                         iaf_step_inverse, log_r, made_masks, nu_tau)
from lbbnn.rng import RngStream

from conftest import gradcheck


def randomize(net, rng, scale=0.7):
    """Give a freshly built net weights large enough to make the flow non-trivial."""
    for p in net.parameters():
        p.data[...] = scale * rng.standard_normal(p.shape)
    return net


def test_masks_are_strictly_autoregressive():
    masks, out = made_masks(5, (7, 6))
    conn = masks[0] @ masks[1] @ out
    # output i reachable from input j only when j < i
    assert np.all(conn[np.tril_indices(5)] == 0)
    assert np.all(conn[np.triu_indices(5, 1)] > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_perturbing_a_coordinate_leaves_earlier_outputs_unchanged(d, seed):
    rng = np.random.default_rng(seed)
    net = randomize(MaskedAutoregressiveNet(d, (8, 8), RngStream(seed)), rng)
    z = rng.standard_normal(d)
    m0, s0 = net(Tensor(z))
    for j in range(d):
        zp = z.copy()
        zp[j] += rng.uniform(0.5, 3.0)
        m1, s1 = net(Tensor(zp))
        assert np.array_equal(m1.data[: j + 1], m0.data[: j + 1])
        assert np.array_equal(s1.data[: j + 1], s0.data[: j + 1])


def test_identity_gate():
    net = MaskedAutoregressiveNet(3, (4, 4), RngStream(0), gate_bias=50.0)
    z = np.array([0.3, -1.2, 2.0])
    z_next, logdet = iaf_step(Tensor(z), net)
    np.testing.assert_array_equal(z_next.data, z)
    assert abs(logdet.item()) < 1e-20


def test_half_gate_with_constant_shift():
    d, c = 4, 1.5
    net = MaskedAutoregressiveNet(d, (5, 5), RngStream(0), gate_bias=0.0)
    net.s_weight.data[...] = 0.0
    net.m_weight.data[...] = 0.0
    net.m_bias.data[...] = c
    z = np.array([1.0, -2.0, 0.5, 3.0])
    z_next, logdet = iaf_step(Tensor(z), net)
    np.testing.assert_allclose(z_next.data, 0.5 * z + 0.5 * c, rtol=1e-15)
    assert logdet.item() == pytest.approx(d * math.log(0.5), rel=1e-14)


def _jacobian(f, x, step=1e-6):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((f(x + e) - f(x - e)) / (2 * step))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_logdet_matches_numerical_jacobian(d):
    rng = np.random.default_rng(d)
    for _ in range(5):
        net = randomize(MaskedAutoregressiveNet(d, (6, 6), RngStream(d)), rng)
        z = rng.standard_normal(d)
        _, logdet = iaf_step(Tensor(z), net)
        jac = _jacobian(lambda x: iaf_step(Tensor(x), net)[0].data, z)
        assert np.allclose(np.triu(jac, 1), 0.0, atol=1e-12)
        _, logabs = np.linalg.slogdet(jac)
        assert abs(logdet.item() - logabs) < 1e-6


def test_chain_inverse_recovers_input():
    rng = np.random.default_rng(4)
    chain = IafChain(5, 3, (8, 8), rng=RngStream(1))
    for net in chain.steps:
        randomize(net, rng, 0.5)
        net.s_bias.data[...] = 1.0 + 0.3 * rng.standard_normal(5)
    for _ in range(20):
        z0 = rng.standard_normal(5)
        z, _ = chain.transform(Tensor(z0))
        assert np.max(np.abs(chain.inverse(z.data) - z0)) < 1e-9
        net = chain.steps[0]
        assert np.max(np.abs(iaf_step_inverse(iaf_step(Tensor(z0), net)[0].data, net) - z0)) < 1e-9


def test_sample_z_collapses_to_base_under_identity_gates():
    chain = IafChain(4, 2, (5, 5), rng=RngStream(2), gate_bias=50.0)
    z, log_q = chain.sample_z(RngStream(9))
    eps = RngStream(9).normal(4)
    np.testing.assert_array_equal(z.data, eps)
    assert log_q.item() == pytest.approx(norm.logpdf(eps).sum(), rel=1e-13)


def test_sample_z_log_q_uses_base_and_flow():
    rng = np.random.default_rng(5)
    chain = IafChain(3, 2, (6, 6), rng=RngStream(3), base_mean=1.0, base_sigma=0.1)
    for net in chain.steps:
        randomize(net, rng, 0.5)
    z, log_q = chain.sample_z(RngStream(4))
    z0 = 1.0 + 0.1 * RngStream(4).normal(3)
    _, logdet = chain.transform(Tensor(z0))
    assert log_q.item() == pytest.approx(norm.logpdf(z0, 1.0, 0.1).sum() - logdet.item(), rel=1e-12)
    assert log_q.item() == pytest.approx(chain.log_prob(z.data), rel=1e-9)


def test_sample_z_deterministic():
    chain = IafChain(3, 2, (4, 4), rng=RngStream(1))
    a = chain.sample_z(RngStream(17))
    b = chain.sample_z(RngStream(17))
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].item() == b[1].item()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_q_integrates_to_one(seed):
    rng = np.random.default_rng(seed)
    chain = IafChain(1, 2, (4, 4), rng=RngStream(seed), base_mean=0.5, base_sigma=0.8)
    for net in chain.steps:
        net.m_bias.data[...] = rng.normal()
        net.s_bias.data[...] = rng.normal(1.0, 0.3)
    grid = np.linspace(-30, 30, 6001)
    dens = np.exp([chain.log_prob([g]) for g in grid])
    assert abs(trapezoid(dens, grid) - 1.0) < 1e-3


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_r_integrates_to_one(seed):
    rng = np.random.default_rng(seed)
    head = InverseFlowHead(1, 2, (4, 4), rng=RngStream(seed), init_std=1.0)
    for net in head.chain.steps:
        net.m_bias.data[...] = rng.normal()
        net.s_bias.data[...] = rng.normal(1.0, 0.3)
    w = Tensor(rng.standard_normal((1, 3)))
    grid = np.linspace(-40, 40, 8001)
    dens = np.exp([log_r(head, Tensor([g]), w).item() for g in grid])
    assert abs(trapezoid(dens, grid) - 1.0) < 1e-3


def test_nu_tau_zero_cases(nprng):
    head = InverseFlowHead(3, rng=RngStream(0))
    nu, lt = nu_tau(head, Tensor(np.zeros((3, 2))))
    assert np.all(nu.data == 0) and np.all(lt.data == 0)
    head.e.data[...] = 0.0
    nu, lt = nu_tau(head, Tensor(nprng.standard_normal((3, 2))))
    assert np.all(nu.data == 0) and np.all(lt.data == 0)


def test_nu_tau_matches_loop_evaluation(nprng):
    head = InverseFlowHead(3, rng=RngStream(1), init_std=1.0)
    w = nprng.standard_normal((3, 2))
    e, d1, d2 = head.e.data, head.d1.data, head.d2.data
    s = []
    for j in range(2):
        acc = 0.0
        for i in range(3):
            acc += e[i] * w[i, j]
        s.append(max(-1.0, min(1.0, acc)))
    s_bar = sum(s) / 2
    nu, lt = nu_tau(head, Tensor(w))
    np.testing.assert_allclose(nu.data, [d1[i] * s_bar for i in range(3)], rtol=1e-14)
    np.testing.assert_allclose(lt.data, [d2[i] * s_bar for i in range(3)], rtol=1e-14)
    with pytest.raises(ShapeError):
        nu_tau(head, Tensor(np.ones((2, 3))))


def test_log_r_identity_chain_is_standard_normal():
    head = InverseFlowHead(3, rng=RngStream(0), gate_bias=50.0)
    head.e.data[...] = 0.0
    z = np.array([0.2, -0.7, 1.1])
    assert log_r(head, Tensor(z), Tensor(np.ones((3, 2)))).item() == \
        pytest.approx(norm.logpdf(z).sum(), rel=1e-13)


def test_log_r_gradients(nprng):
    for _ in range(10):
        head = InverseFlowHead(3, 2, (5, 5), rng=RngStream(int(nprng.integers(1 << 30))),
                               init_std=0.5)
        for net in head.chain.steps:
            randomize(net, nprng, 0.4)
        z = Tensor.param(nprng.standard_normal(3))
        w = Tensor.param(0.5 * nprng.standard_normal((3, 2)))
        assert gradcheck(lambda: log_r(head, z, w), [z]) < 1e-4
        assert gradcheck(lambda: log_r(head, z, w), head.parameters() + [w]) < 1e-4


def test_sample_z_gradients(nprng):
    chain = IafChain(3, 2, (5, 5), rng=RngStream(6))
    for net in chain.steps:
        randomize(net, nprng, 0.4)

    def loss():
        z, log_q = chain.sample_z(RngStream(2))
        return log_q + ad.square(z).sum()

    assert gradcheck(loss, chain.parameters()) < 1e-4


def test_chain_validation():
    with pytest.raises(ValueError):
        IafChain(3, 0, rng=RngStream(0))
    with pytest.raises(ValueError):
        MaskedAutoregressiveNet(0, (4,), RngStream(0))
    with pytest.raises(RuntimeError):
        InverseFlowHead(2, rng=RngStream(0)).chain.sample_z(RngStream(0))
