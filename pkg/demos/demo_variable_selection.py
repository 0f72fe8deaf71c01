"""
Picking covariates in a logistic regression
===========================================

With no hidden layer the network is a Bayesian logistic regression, and
each inclusion probability says how strongly the data support keeping a
covariate. Eight of the twenty true coefficients are nonzero.
"""

import numpy as np

from lbbnn.data import BETA, gen_logreg
from lbbnn.metrics import tpr_fpr
from lbbnn.network import Architecture, build_model
from lbbnn.training import TrainConfig, train

ds, beta = gen_logreg(2000, seed=0)

# A short run; the command-line tool uses 500 epochs and 20 repetitions.
arch = Architecture(20, (), 1, method="lbbnn-lrt", prior_alpha=0.25)
model = build_model(arch, seed=1)
train(model, ds.features, ds.labels,
      TrainConfig(epochs=100, batch_size=400, learning_rate=1e-2, likelihood="bernoulli"))

# %%
alpha = model.layers[0].alpha().data[:, 0]
for j in np.argsort(-alpha):
    print(f"x{j:<2d} beta {beta[j]:>9g}  inclusion {alpha[j]:.3f}")

score = tpr_fpr(alpha, BETA)
print("true positive rate", score.tpr, "false positive rate", score.fpr)
