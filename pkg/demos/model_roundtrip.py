"""
Saving and restoring model parameters
=====================================

Train briefly, write the parameters in the binary and text formats, read
them back and confirm the predictions do not change.
"""

import tempfile
from pathlib import Path

import numpy as np

from shelterfl import nnet
from shelterfl.domain import TrainConfig

rng = np.random.default_rng(5)
x = rng.normal(size=(600, 12))
y = (x[:, 0] > 0).astype(int) + (x[:, 1] > 1).astype(int)

model = nnet.agency_training(nnet.init_model(12, seed=5), x, y, TrainConfig(epochs=5, batch_size=100))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.bin"
    nnet.save_params(path, model.params)
    print(f"binary file: {path.stat().st_size} bytes")
    restored = nnet.MlpModel(nnet.load_params(path), model.dropout_rates, model.output_activation)

text = nnet.params_to_text(model.params)
print("text header:", text.splitlines()[0])
assert nnet.params_from_text(text) == model.params
assert np.array_equal(nnet.predict(model, x), nnet.predict(restored, x))
print("predictions identical after reload")
