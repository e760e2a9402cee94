"""
Checking backpropagation against finite differences
===================================================

Perturb every weight of a tiny network and compare the numerical slope of
the loss with the analytic gradient.
"""

import numpy as np

from shelterfl import nnet

rng = np.random.default_rng(0)
model = nnet.init_model(4, seed=0, hidden=(6, 5, 4), dropout_rates=(0.0, 0.0, 0.0))
x = rng.normal(size=(10, 4))
y = rng.integers(0, 3, size=10)

loss, grads = nnet.loss_and_grads(model, x, y, training=False)
flat = model.params.flat()
numeric = np.empty_like(flat)
h = 1e-4
for i in range(flat.size):
    up, down = flat.copy(), flat.copy()
    up[i] += h
    down[i] -= h
    f_up = nnet.loss_and_grads(nnet.MlpModel(model.params.unflatten(up)), x, y, training=False)[0]
    f_down = nnet.loss_and_grads(nnet.MlpModel(model.params.unflatten(down)), x, y, training=False)[0]
    numeric[i] = (f_up - f_down) / (2 * h)

analytic = grads.flat()
rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
print(f"loss {loss:.4f}, {flat.size} parameters")
print(f"worst relative error {rel.max():.2e}")
