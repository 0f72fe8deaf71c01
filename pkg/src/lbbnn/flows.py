"""Inverse autoregressive flows for the multiplicative latent vector ``z``.

Each layer of a flow model owns two chains. :class:`IafChain` with a base
distribution defines ``q(z)``; :class:`InverseFlowHead` pushes ``z`` through
a second chain to ``z_B`` and scores it under a Gaussian whose mean and
log-variance are computed from the layer's weights, giving ``log r(z | W)``.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import inverse_softplus
from .rng import RngStream

LOG_2PI = math.log(2.0 * math.pi)


def made_degrees(d: int, hidden: tuple[int, ...]) -> list[np.ndarray]:
    """Connectivity degrees for inputs, hidden layers and outputs.

    Inputs and outputs get degrees ``1..d``; hidden units cycle through
    ``1..d-1`` so every output ``i`` can see inputs ``1..i-1`` and nothing else.
    """
    degrees = [np.arange(1, d + 1)]
    for h in hidden:
        degrees.append(np.arange(h) % max(d - 1, 1) + 1)
    return degrees


def made_masks(d: int, hidden: tuple[int, ...]) -> tuple[list[np.ndarray], np.ndarray]:
    deg = made_degrees(d, hidden)
    masks = [(deg[k][:, None] <= deg[k + 1][None, :]).astype(np.float64)
             for k in range(len(hidden))]
    out_mask = (deg[-1][:, None] < deg[0][None, :]).astype(np.float64)
    return masks, out_mask


class MaskedAutoregressiveNet:
    """MADE network returning the shift ``m`` and gate pre-activation ``s``.

    ``m_i`` and ``s_i`` depend only on inputs with index ``< i``.
    """

    def __init__(self, d: int, hidden: tuple[int, ...], rng: RngStream,
                 gate_bias: float = 1.0, head_std: float = 0.01):
        if d < 1:
            raise ValueError("flow dimension must be positive")
        self.d, self.hidden = d, tuple(int(h) for h in hidden)
        self.masks, self.out_mask = made_masks(d, self.hidden)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        fan_in = d
        for k, h in enumerate(self.hidden):
            self.weights.append(Tensor.param(rng.normal((fan_in, h)) / math.sqrt(fan_in), f"W{k}"))
            self.biases.append(Tensor.param(np.zeros(h), f"b{k}"))
            fan_in = h
        self.m_weight = Tensor.param(head_std * rng.normal((fan_in, d)), "m_weight")
        self.m_bias = Tensor.param(np.zeros(d), "m_bias")
        self.s_weight = Tensor.param(head_std * rng.normal((fan_in, d)), "s_weight")
        self.s_bias = Tensor.param(np.full(d, float(gate_bias)), "s_bias")

    def parameters(self) -> list[Tensor]:
        return [*self.weights, *self.biases, self.m_weight, self.m_bias,
                self.s_weight, self.s_bias]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        h = z
        for w, b, mask in zip(self.weights, self.biases, self.masks):
            h = ad.tanh(h @ (w * mask) + b)
        m = h @ (self.m_weight * self.out_mask) + self.m_bias
        s = h @ (self.s_weight * self.out_mask) + self.s_bias
        return m, s


def iaf_step(z_prev: Tensor, net: MaskedAutoregressiveNet) -> tuple[Tensor, Tensor]:
    """One gated IAF update; returns the new point and ``log|det J|``."""
    m, s = net(z_prev)
    kappa = ad.sigmoid(s)
    z_next = kappa * z_prev + (1.0 - kappa) * m
    logdet = ad.log_sigmoid(s).sum()
    return z_next, logdet


def iaf_step_inverse(z_next: np.ndarray, net: MaskedAutoregressiveNet) -> np.ndarray:
    """Solve an IAF step for its input, one coordinate at a time."""
    z_next = np.asarray(z_next, dtype=np.float64)
    z_prev = np.zeros_like(z_next)
    for i in range(net.d):
        m, s = net(Tensor(z_prev))
        kappa = 1.0 / (1.0 + math.exp(-s.data[i]))
        z_prev[i] = (z_next[i] - (1.0 - kappa) * m.data[i]) / kappa
    return z_prev


class IafChain:
    """A stack of IAF steps, optionally with a learnable Gaussian base.

    The base is ``N(base_mean, softplus(base_rho)^2)``.
    """

    def __init__(self, d: int, length: int = 2, hidden: tuple[int, ...] = (50, 50), *,
                 rng: RngStream, with_base: bool = True, base_mean: float = 0.0,
                 base_sigma: float = 1.0, gate_bias: float = 1.0):
        if length < 1:
            raise ValueError("flow length must be at least 1")
        self.d = d
        self.steps = [MaskedAutoregressiveNet(d, hidden, rng, gate_bias=gate_bias)
                      for _ in range(length)]
        self.with_base = with_base
        if with_base:
            self.base_mean = Tensor.param(np.full(d, float(base_mean)), "base_mean")
            self.base_rho = Tensor.param(np.full(d, inverse_softplus(base_sigma)), "base_rho")

    def parameters(self) -> list[Tensor]:
        ps = [p for net in self.steps for p in net.parameters()]
        if self.with_base:
            ps = [self.base_mean, self.base_rho] + ps
        return ps

    def transform(self, z: Tensor) -> tuple[Tensor, Tensor]:
        """Run all steps; returns the output and the summed log-determinant."""
        total = None
        for net in self.steps:
            z, logdet = iaf_step(z, net)
            total = logdet if total is None else total + logdet
        return z, total

    def inverse(self, z: np.ndarray) -> np.ndarray:
        for net in reversed(self.steps):
            z = iaf_step_inverse(z, net)
        return z

    def base_log_prob(self, z0: Tensor) -> Tensor:
        sigma = ad.softplus(self.base_rho)
        u = (z0 - self.base_mean) / sigma
        return (-0.5 * ad.square(u) - ad.log(sigma)).sum() - 0.5 * self.d * LOG_2PI

    def sample_z(self, rng: RngStream) -> tuple[Tensor, Tensor]:
        """Draw one ``z`` and return it with ``log q(z)``."""
        if not self.with_base:
            raise RuntimeError("chain has no base distribution")
        eps = Tensor(rng.normal(self.d))
        z0 = self.base_mean + ad.softplus(self.base_rho) * eps
        z, logdet = self.transform(z0)
        return z, self.base_log_prob(z0) - logdet

    def log_prob(self, z) -> float:
        """``log q(z)`` at an arbitrary point, by inverting the chain."""
        z = np.asarray(z, dtype=np.float64)
        z0 = self.inverse(z)
        _, logdet = self.transform(Tensor(z0))
        return float(self.base_log_prob(Tensor(z0)).data - logdet.data)


class InverseFlowHead:
    """Auxiliary density ``r(z | W)`` for one layer."""

    def __init__(self, n_in: int, length: int = 2, hidden: tuple[int, ...] = (50, 50), *,
                 rng: RngStream, init_std: float = 0.1, gate_bias: float = 1.0):
        self.n_in = n_in
        self.d1 = Tensor.param(init_std * rng.normal(n_in), "d1")
        self.d2 = Tensor.param(init_std * rng.normal(n_in), "d2")
        self.e = Tensor.param(init_std * rng.normal(n_in), "e")
        self.chain = IafChain(n_in, length, hidden, rng=rng, with_base=False,
                              gate_bias=gate_bias)

    def parameters(self) -> list[Tensor]:
        return [self.d1, self.d2, self.e] + self.chain.parameters()


def nu_tau(head: InverseFlowHead, w_eff: Tensor) -> tuple[Tensor, Tensor]:
    """Mean and log-variance of ``r_B`` given the effective weights."""
    w_eff = ad.as_tensor(w_eff)
    if w_eff.ndim != 2 or w_eff.shape[0] != head.n_in:
        raise ad.ShapeError(f"expected weights ({head.n_in}, n_out), got {w_eff.shape}")
    s = ad.hardtanh(head.e @ w_eff)
    s_bar = s.mean()
    return head.d1 * s_bar, head.d2 * s_bar


def log_r(head: InverseFlowHead, z: Tensor, w_eff: Tensor) -> Tensor:
    """``log r(z | W) = log r_B(z_B | W) + log|dz_B/dz|``."""
    nu, log_tau2 = nu_tau(head, w_eff)
    z_b, logdet = head.chain.transform(ad.as_tensor(z))
    resid2 = ad.square(z_b - nu) / ad.exp(log_tau2)
    log_rb = (-0.5 * (resid2 + log_tau2)).sum() - 0.5 * head.n_in * LOG_2PI
    return log_rb + logdet
