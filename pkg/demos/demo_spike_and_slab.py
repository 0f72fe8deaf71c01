"""
One spike-and-slab layer
========================

A layer whose weights are switched on by Bernoulli inclusion variables.
We compare the cheap pre-activation sampler with brute-force sampling of
weights and switches, then look at the divergence from the prior and at
the median probability model.
"""

import numpy as np

from lbbnn.autodiff import Tensor
from lbbnn.layers import SpikeSlabLinear, density
from lbbnn.rng import RngStream

layer = SpikeSlabLinear(4, 2, RngStream(0), prior_sigma=1.0, prior_alpha=0.1)
rng = np.random.default_rng(1)
layer.weight_mean.data[...] = rng.standard_normal((4, 2))
layer.inclusion_logit.data[...] = rng.uniform(-2, 2, (4, 2))
o = rng.standard_normal(4)

# %%
# Sampling pre-activations directly needs only their mean and variance.
n = 100_000
fast = layer.lrt_forward(Tensor(np.tile(o, (n, 1))), RngStream(2)).data

a, mu, s = layer.alpha().data, layer.weight_mean.data, layer.sigma().data
gamma = rng.random((n, 4, 2)) < a
w = mu + s * rng.standard_normal((n, 4, 2))
bias = layer.bias_mean.data + layer.bias_sigma().data * rng.standard_normal((n, 2))
slow = np.einsum("i,nij->nj", o, w * gamma) + bias

print("mean     fast", fast.mean(0).round(3), "slow", slow.mean(0).round(3))
print("variance fast", fast.var(0).round(3), "slow", slow.var(0).round(3))

# %%
# The divergence from the prior has a closed form.
print("KL(q || p) for the weights:", layer.kl_weights().item())

# %%
# The median probability model keeps the weights with inclusion
# probability above one half.
print("inclusion probabilities\n", a.round(2))
print("density", density([layer]))
