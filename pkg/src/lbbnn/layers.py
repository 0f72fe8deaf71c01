"""Variational linear layers.

:class:`SpikeSlabLinear` carries a Gaussian slab and a Bernoulli inclusion
probability per weight. It can be run three ways:

* :meth:`~SpikeSlabLinear.lrt_forward` samples pre-activations from their
  analytic mean and variance (local reparametrization),
* the same with a multiplicative latent vector ``z`` (one per batch),
* :meth:`~SpikeSlabLinear.sample_forward` samples the weights and inclusion
  indicators explicitly, for posterior-predictive evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import RngStream

ALPHA_CLAMP = 1e-7


def inverse_softplus(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def logit(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class LayerInit:
    """Initial values of the variational parameters.

    ``weight_std=None`` means ``1/sqrt(n_in)``.
    """

    weight_std: float | None = None
    sigma: float = 0.05
    logit_low: float = -0.5
    logit_high: float = 0.5
    bias_sigma: float = 0.05


class SpikeSlabLinear:
    """Dense layer with a spike-and-slab variational posterior on each weight.

    The slab standard deviation is ``softplus(weight_rho)`` and the inclusion
    probability ``sigmoid(inclusion_logit)``. The prior is
    ``gamma ~ Bernoulli(prior_alpha)``, ``w | gamma=1 ~ N(0, prior_sigma^2)``
    on the weights and ``N(0, 1)`` on the biases.
    """

    spike_slab = True

    def __init__(self, n_in: int, n_out: int, rng: RngStream, *,
                 prior_sigma: float = 1.0, prior_alpha: float = 0.1,
                 init: LayerInit | None = None):
        if n_in < 1 or n_out < 1:
            raise ValueError("layer sizes must be positive")
        if prior_sigma <= 0:
            raise ValueError("prior_sigma must be positive")
        if not 0.0 < prior_alpha < 1.0:
            raise ValueError("prior_alpha must lie in (0, 1)")
        init = init or LayerInit()
        self.n_in, self.n_out = n_in, n_out
        self.prior_sigma = float(prior_sigma)
        self.prior_alpha = float(prior_alpha)
        self.bias_prior_sigma = 1.0
        std = init.weight_std if init.weight_std is not None else 1.0 / math.sqrt(n_in)
        shape = (n_in, n_out)
        self.weight_mean = Tensor.param(std * rng.normal(shape), "weight_mean")
        self.weight_rho = Tensor.param(np.full(shape, inverse_softplus(init.sigma)), "weight_rho")
        self.inclusion_logit = Tensor.param(
            rng.uniform(shape, init.logit_low, init.logit_high), "inclusion_logit")
        self.bias_mean = Tensor.param(np.zeros(n_out), "bias_mean")
        self.bias_rho = Tensor.param(np.full(n_out, inverse_softplus(init.bias_sigma)), "bias_rho")

    def parameters(self) -> list[Tensor]:
        return [self.weight_mean, self.weight_rho, self.inclusion_logit,
                self.bias_mean, self.bias_rho]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    # -- derived quantities ------------------------------------------------

    def alpha(self) -> Tensor:
        return ad.sigmoid(self.inclusion_logit)

    def sigma(self) -> Tensor:
        return ad.softplus(self.weight_rho)

    def bias_sigma(self) -> Tensor:
        return ad.softplus(self.bias_rho)

    def included(self, threshold: float = 0.5) -> np.ndarray:
        """Boolean mask of weights with inclusion probability above ``threshold``.

        Compared on the logit scale so that ``threshold=0.5`` means exactly
        ``inclusion_logit > 0``.
        """
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        return self.inclusion_logit.data > float(logit(threshold))

    def effective_weight(self) -> Tensor:
        """Posterior mean of ``W * Gamma`` at ``z = 1``."""
        return self.alpha() * self.weight_mean

    # -- forwards ----------------------------------------------------------

    def lrt_moments(self, o: Tensor, z: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """Mean and variance of each pre-activation given inputs ``o``."""
        o = ad.as_tensor(o)
        if o.ndim != 2 or o.shape[1] != self.n_in:
            raise ad.ShapeError(f"expected input (batch, {self.n_in}), got {o.shape}")
        if z is not None and z.shape != (self.n_in,):
            raise ad.ShapeError(f"z must have shape ({self.n_in},), got {z.shape}")
        alpha, sigma = self.alpha(), self.sigma()
        oz = o if z is None else o * z
        mean = oz @ (alpha * self.weight_mean) + self.bias_mean
        slab_var = ad.square(o) @ (alpha * ad.square(sigma))
        mix_var = ad.square(oz) @ (alpha * (1.0 - alpha) * ad.square(self.weight_mean))
        var = slab_var + mix_var + ad.square(self.bias_sigma())
        if np.any(var.data < 0):
            raise FloatingPointError("negative pre-activation variance")
        return mean, var

    def lrt_forward(self, o: Tensor, rng: RngStream, z: Tensor | None = None) -> Tensor:
        mean, var = self.lrt_moments(o, z)
        eps = Tensor(rng.normal(mean.shape))
        return mean + ad.sqrt(var) * eps

    def sample_structure(self, mode: str, rng: RngStream) -> np.ndarray:
        if mode == "full":
            return rng.bernoulli(self.alpha().data)
        if mode == "median":
            return self.included(0.5).astype(np.float64)
        raise ValueError(f"unknown sampling mode {mode!r}")

    def sample_weights(self, rng: RngStream, z: Tensor | None = None,
                       mode: str = "full") -> tuple[Tensor, Tensor]:
        """One explicit draw of ``(W * Gamma, b)``.

        Differentiable w.r.t. the slab parameters and ``z``; the inclusion
        indicators enter as constants.
        """
        if z is not None and z.shape != (self.n_in,):
            raise ad.ShapeError(f"z must have shape ({self.n_in},), got {z.shape}")
        gamma = Tensor(self.sample_structure(mode, rng))
        eps = Tensor(rng.normal((self.n_in, self.n_out)))
        eps_b = Tensor(rng.normal(self.n_out))
        mu = self.weight_mean if z is None else (self.weight_mean.T * z).T
        w = mu + self.sigma() * eps
        b = self.bias_mean + self.bias_sigma() * eps_b
        return w * gamma, b

    def sample_forward(self, o: Tensor, rng: RngStream, z: Tensor | None = None,
                       mode: str = "full") -> Tensor:
        """Pre-activations ``o @ (W * Gamma) + b`` under one explicit draw."""
        o = ad.as_tensor(o)
        if o.ndim != 2 or o.shape[1] != self.n_in:
            raise ad.ShapeError(f"expected input (batch, {self.n_in}), got {o.shape}")
        w, b = self.sample_weights(rng, z, mode)
        return o @ w + b

    # -- divergences -------------------------------------------------------

    def kl_weights(self, z: Tensor | None = None) -> Tensor:
        """KL of ``q(W, Gamma | z)`` from the spike-and-slab prior (closed form)."""
        a = ad.clamp(self.alpha(), ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)
        sigma = self.sigma()
        s2 = self.prior_sigma ** 2
        mu2 = ad.square(self.weight_mean)
        if z is None:
            mean_term = (a * mu2).sum()
        else:
            mean_term = ((a * mu2).sum(axis=1) * ad.square(z)).sum()
        slab = (a * (math.log(self.prior_sigma) - ad.log(sigma)
                     + ad.log(a) - math.log(self.prior_alpha) - 0.5
                     + ad.square(sigma) / (2.0 * s2))).sum()
        spike = ((1.0 - a) * (ad.log(1.0 - a) - math.log(1.0 - self.prior_alpha))).sum()
        return slab + mean_term / (2.0 * s2) + spike

    def kl_bias(self) -> Tensor:
        sb = self.bias_sigma()
        p = self.bias_prior_sigma
        return (math.log(p) - ad.log(sb) - 0.5
                + (ad.square(sb) + ad.square(self.bias_mean)) / (2.0 * p * p)).sum()

    # -- structure summaries ----------------------------------------------

    def n_weights(self) -> int:
        return self.n_in * self.n_out

    def n_included(self, threshold: float = 0.5) -> int:
        return int(self.included(threshold).sum())


class DenseGaussianLinear(SpikeSlabLinear):
    """Mean-field Gaussian layer: a spike-and-slab layer with every weight kept."""

    spike_slab = False

    def __init__(self, n_in: int, n_out: int, rng: RngStream, *,
                 prior_sigma: float = 1.0, init: LayerInit | None = None, **_):
        super().__init__(n_in, n_out, rng, prior_sigma=prior_sigma, prior_alpha=0.5, init=init)
        self.inclusion_logit = Tensor(np.full((n_in, n_out), 50.0), name="inclusion_logit")

    def parameters(self) -> list[Tensor]:
        return [self.weight_mean, self.weight_rho, self.bias_mean, self.bias_rho]

    def alpha(self) -> Tensor:
        return Tensor(np.ones((self.n_in, self.n_out)))

    def included(self, threshold: float = 0.5) -> np.ndarray:
        return np.ones((self.n_in, self.n_out), dtype=bool)

    def sample_structure(self, mode: str, rng: RngStream) -> np.ndarray:
        if mode not in ("full", "median"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        return np.ones((self.n_in, self.n_out))

    def kl_weights(self, z: Tensor | None = None) -> Tensor:
        sigma = self.sigma()
        mu = self.weight_mean if z is None else (self.weight_mean.T * z).T
        s2 = self.prior_sigma ** 2
        return (math.log(self.prior_sigma) - ad.log(sigma) - 0.5
                + (ad.square(sigma) + ad.square(mu)) / (2.0 * s2)).sum()


class DropoutLinear:
    """Deterministic linear layer with inverted dropout on its inputs."""

    def __init__(self, n_in: int, n_out: int, rng: RngStream, p_drop: float = 0.5):
        if not 0.0 < p_drop < 1.0:
            raise ValueError("p_drop must lie in (0, 1)")
        self.n_in, self.n_out, self.p_drop = n_in, n_out, float(p_drop)
        self.weight = Tensor.param(rng.normal((n_in, n_out)) / math.sqrt(n_in), "weight")
        self.bias = Tensor.param(np.zeros(n_out), "bias")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def named_parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def dropout_forward(layer: DropoutLinear, o: Tensor, rng: RngStream,
                    stochastic: bool = True) -> Tensor:
    o = ad.as_tensor(o)
    if stochastic:
        keep = rng.bernoulli(np.full(o.shape, 1.0 - layer.p_drop))
        o = o * Tensor(keep / (1.0 - layer.p_drop))
    return o @ layer.weight + layer.bias


def density(layers, threshold: float = 0.5) -> float:
    """Fraction of weights kept by the thresholded (median probability) model."""
    layers = [layers] if isinstance(layers, SpikeSlabLinear) else list(layers)
    total = sum(l.n_weights() for l in layers)
    kept = sum(l.n_included(threshold) for l in layers)
    return kept / total
