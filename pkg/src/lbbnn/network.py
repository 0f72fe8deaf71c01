"""Feed-forward networks assembled from the variational layers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .flows import IafChain, InverseFlowHead, log_r
from .layers import (DenseGaussianLinear, DropoutLinear, LayerInit, SpikeSlabLinear,
                     dropout_forward)
from .rng import RngStream

METHODS = ("lbbnn-lrt", "lbbnn-flow", "dense-bnn", "mc-dropout")


@dataclass
class Architecture:
    n_in: int
    hidden: tuple[int, ...]
    n_out: int
    method: str = "lbbnn-lrt"
    prior_sigma: float = 1.0
    prior_alpha: float = 0.1
    flow_length: int = 2
    flow_hidden: tuple[int, int] = (250, 250)
    p_drop: float = 0.5
    init: LayerInit = field(default_factory=LayerInit)
    base_mean: float = 0.0
    base_sigma: float = 1.0

    @property
    def widths(self) -> list[int]:
        return [self.n_in, *self.hidden, self.n_out]


@dataclass
class ForwardTerms:
    """Per-layer KL pieces collected during a training forward pass."""

    kl_weights: Tensor
    kl_bias: Tensor
    log_q_z: Tensor
    log_r_z: Tensor


class BayesianNet:
    """ReLU network of spike-and-slab (or dense Gaussian) layers.

    With ``method='lbbnn-flow'`` each layer also owns a flow ``q(z)`` and an
    inverse flow head ``r(z | W)``.
    """

    def __init__(self, arch: Architecture, rng: RngStream):
        if arch.method not in ("lbbnn-lrt", "lbbnn-flow", "dense-bnn"):
            raise ValueError(f"BayesianNet does not support method {arch.method!r}")
        self.arch = arch
        widths = arch.widths
        layer_cls = DenseGaussianLinear if arch.method == "dense-bnn" else SpikeSlabLinear
        self.layers = [layer_cls(widths[k], widths[k + 1], rng, prior_sigma=arch.prior_sigma,
                                 prior_alpha=arch.prior_alpha, init=arch.init)
                       for k in range(len(widths) - 1)]
        self.flows: list[IafChain] = []
        self.heads: list[InverseFlowHead] = []
        if self.use_flow:
            for layer in self.layers:
                self.flows.append(IafChain(layer.n_in, arch.flow_length, arch.flow_hidden,
                                           rng=rng, base_mean=arch.base_mean,
                                           base_sigma=arch.base_sigma))
                self.heads.append(InverseFlowHead(layer.n_in, arch.flow_length,
                                                  arch.flow_hidden, rng=rng))

    @property
    def use_flow(self) -> bool:
        return self.arch.method == "lbbnn-flow"

    def parameters(self) -> list[Tensor]:
        ps = [p for layer in self.layers for p in layer.parameters()]
        for chain, head in zip(self.flows, self.heads):
            ps += chain.parameters() + head.parameters()
        return ps

    def sample_zs(self, rng: RngStream) -> list[Tensor | None]:
        if not self.use_flow:
            return [None] * len(self.layers)
        return [chain.sample_z(rng)[0] for chain in self.flows]

    def forward_train(self, x: Tensor, rng: RngStream) -> tuple[Tensor, ForwardTerms]:
        """LRT forward pass plus the divergence terms for one ELBO sample."""
        h = ad.as_tensor(x)
        kl_w = kl_b = log_q = log_rz = Tensor(0.0)
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            z = None
            if self.use_flow:
                z, lq = self.flows[k].sample_z(rng)
                lr = log_r(self.heads[k], z, layer.effective_weight())
                log_q = log_q + lq
                log_rz = log_rz + lr
            h = layer.lrt_forward(h, rng, z)
            kl_w = kl_w + layer.kl_weights(z)
            kl_b = kl_b + layer.kl_bias()
            if k < last:
                h = ad.relu(h)
        return h, ForwardTerms(kl_w, kl_b, log_q, log_rz)

    def draw(self, rng: RngStream, mode: str = "full") -> list[tuple[np.ndarray, np.ndarray]]:
        """Sample one concrete network ``[(W * Gamma, b), ...]`` from the posterior."""
        zs = self.sample_zs(rng)
        out = []
        for layer, z in zip(self.layers, zs):
            w, b = layer.sample_weights(rng, z, mode)
            out.append((w.data, b.data))
        return out

    def forward(self, x, rng: RngStream, mode: str = "full") -> Tensor:
        """One posterior-predictive pass returning output pre-activations.

        ``mode`` is ``full`` (sample inclusion indicators), ``median``
        (keep weights with inclusion probability above 0.5) or ``lrt``.
        """
        h = ad.as_tensor(x)
        if mode != "lrt":
            return Tensor(apply_draw(self.draw(rng, mode), h.data))
        zs = self.sample_zs(rng)
        last = len(self.layers) - 1
        for k, (layer, z) in enumerate(zip(self.layers, zs)):
            h = layer.lrt_forward(h, rng, z)
            if k < last:
                h = ad.relu(h)
        return h

    def density(self, threshold: float = 0.5) -> float:
        total = sum(l.n_weights() for l in self.layers)
        return sum(l.n_included(threshold) for l in self.layers) / total


def apply_draw(draw, x: np.ndarray) -> np.ndarray:
    """Forward ``x`` through a network sampled by :meth:`BayesianNet.draw`."""
    h = np.asarray(x, dtype=np.float64)
    last = len(draw) - 1
    for k, (w, b) in enumerate(draw):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


class DropoutNet:
    """ReLU network trained and evaluated with Monte Carlo dropout.

    Dropout acts on the inputs of every layer except the first.
    """

    def __init__(self, arch: Architecture, rng: RngStream):
        self.arch = arch
        widths = arch.widths
        self.layers = [DropoutLinear(widths[k], widths[k + 1], rng, arch.p_drop)
                       for k in range(len(widths) - 1)]

    use_flow = False

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x, rng: RngStream, mode: str = "full", stochastic: bool = True) -> Tensor:
        h = ad.as_tensor(x)
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            h = dropout_forward(layer, h, rng, stochastic=stochastic and k > 0)
            if k < last:
                h = ad.relu(h)
        return h

    def forward_train(self, x, rng: RngStream) -> tuple[Tensor, ForwardTerms]:
        zero = Tensor(0.0)
        return self.forward(x, rng), ForwardTerms(zero, zero, zero, zero)

    def density(self, threshold: float = 0.5) -> float:
        return 1.0


def build_model(arch: Architecture, seed: int = 0) -> BayesianNet | DropoutNet:
    rng = RngStream(seed)
    if arch.method == "mc-dropout":
        return DropoutNet(arch, rng)
    return BayesianNet(arch, rng)


def named_parameters(model) -> dict[str, Tensor]:
    """Stable, unique names for every parameter (used by checkpoints)."""
    out: dict[str, Tensor] = {}
    for k, layer in enumerate(model.layers):
        for name, p in layer.named_parameters().items():
            out[f"layer{k}/{name}"] = p
    for k, (chain, head) in enumerate(zip(getattr(model, "flows", []),
                                          getattr(model, "heads", []))):
        out[f"flow{k}/base_mean"] = chain.base_mean
        out[f"flow{k}/base_rho"] = chain.base_rho
        for j, net in enumerate(chain.steps):
            for name, p in net.named_parameters().items():
                out[f"flow{k}/step{j}/{name}"] = p
        out[f"head{k}/d1"] = head.d1
        out[f"head{k}/d2"] = head.d2
        out[f"head{k}/e"] = head.e
        for j, net in enumerate(head.chain.steps):
            for name, p in net.named_parameters().items():
                out[f"head{k}/step{j}/{name}"] = p
    return out


def copy_parameters(src, dst) -> None:
    for (name, a), (_, b) in zip(named_parameters(src).items(), named_parameters(dst).items()):
        b.data[...] = a.data
