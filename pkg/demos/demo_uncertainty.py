"""
Uncertainty away from the data
==============================

Five Gaussian clusters with ten points each. A Bayesian network should
grow less certain as it moves away from the training points; we compare
the mean predictive entropy on the data with the entropy far from it.
"""

import numpy as np

from lbbnn.data import gen_clusters, grid
from lbbnn.metrics import predict_avg
from lbbnn.network import Architecture, build_model
from lbbnn.rng import RngStream
from lbbnn.training import TrainConfig, train

train_set = gen_clusters(10, seed=0)
points = grid(101, 0.0, 1.0)
gap = ((points[:, None] - train_set.features[None]) ** 2).sum(-1).min(1)
far = gap > 0.3 ** 2
print(f"{far.sum()} grid points lie farther than 0.3 from every training point")

for method in ("lbbnn-lrt", "mc-dropout"):
    arch = Architecture(2, (200,), 5, method=method, prior_alpha=0.5)
    model = build_model(arch, seed=0)
    train(model, train_set.features, train_set.labels,
          TrainConfig(epochs=1000, batch_size=50, learning_rate=1e-2))
    on_data = predict_avg(model, train_set.features, 10, "full", RngStream(1)).entropy.mean()
    off_data = predict_avg(model, points[far], 10, "full", RngStream(2)).entropy.mean()
    print(f"{method:>11}: entropy on data {on_data:.3f}, far away {off_data:.3f} "
          f"(uniform would be {np.log(5):.3f})")
