"""Dense ReLU classifier with inverted dropout, categorical cross-entropy and
Adam, written directly against numpy.

Weights are ``(fan_in, fan_out)``; a layer computes ``x @ W + b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import HIDDEN_SIZES, N_CLASSES, ModelParameters, TrainConfig

PROB_FLOOR = 1e-12


@dataclass
class MlpModel:
    params: ModelParameters
    dropout_rates: tuple[float, ...] = (0.4, 0.2, 0.1)
    output_activation: str = "softmax"

    def __post_init__(self):
        self.dropout_rates = tuple(float(r) for r in self.dropout_rates)
        if len(self.dropout_rates) != len(self.params.layers) - 1:
            raise ValueError("need one dropout rate per hidden layer")

    @property
    def input_dim(self) -> int:
        return self.params.sizes[0]

    def copy(self) -> "MlpModel":
        return MlpModel(self.params.copy(), self.dropout_rates, self.output_activation)


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParameters, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        arrays = params.arrays()
        return cls(
            [np.zeros_like(a) for a in arrays],
            [np.zeros_like(a) for a in arrays],
            0,
            beta1,
            beta2,
            epsilon,
        )

    def update(self, params: ModelParameters, grads: ModelParameters, lr: float) -> None:
        """One in-place Adam step on ``params``."""
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step
        c2 = 1.0 - b2**self.step
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.first, self.second):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def init_model(
    input_dim: int,
    seed: int,
    hidden: tuple[int, ...] = HIDDEN_SIZES,
    dropout_rates: tuple[float, ...] = (0.4, 0.2, 0.1),
    output_activation: str = "softmax",
    dtype=np.float64,
) -> MlpModel:
    """He-uniform weights, zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = (input_dim, *hidden, N_CLASSES)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        layers.append((w, np.zeros(fan_out, dtype=dtype)))
    return MlpModel(ModelParameters(layers), dropout_rates, output_activation)


def _output(logits: np.ndarray, kind: str):
    if kind == "softmax":
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True), None
    # per-class logistic, renormalized in log space so that rows whose
    # sigmoids all underflow still normalize
    log_s = -np.logaddexp(0.0, -logits)
    log_s -= log_s.max(axis=1, keepdims=True)
    e = np.exp(log_s)
    one_minus_s = np.exp(-np.logaddexp(0.0, logits))
    return e / e.sum(axis=1, keepdims=True), one_minus_s


def forward(model: MlpModel, batch: np.ndarray, training: bool = False, rng=None):
    """Class probabilities for ``batch`` plus what backprop needs.

    With ``training`` set, hidden activations are dropped with the model's
    rates and survivors rescaled by ``1 / (1 - rate)``.
    """
    dtype = model.params.dtype
    a = np.asarray(batch, dtype=dtype)
    if a.ndim != 2 or a.shape[1] != model.input_dim:
        raise ValueError(f"expected (m, {model.input_dim}) input, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite input")
    if training and rng is None:
        raise ValueError("training mode needs an rng for dropout masks")
    inputs, hidden, drop_masks = [], [], []
    layers = model.params.layers
    for (w, b), rate in zip(layers[:-1], model.dropout_rates):
        inputs.append(a)
        h = a @ w
        h += b
        np.maximum(h, 0.0, out=h)
        if training and rate > 0.0:
            keep = rng.random(h.shape) >= rate
            a = h * keep
            a *= 1.0 / (1.0 - rate)
        else:
            keep = None
            a = h
        hidden.append(h)
        drop_masks.append(keep)
    inputs.append(a)
    w, b = layers[-1]
    probs, extra = _output(a @ w + b, model.output_activation)
    cache = {"inputs": inputs, "hidden": hidden, "drop": drop_masks, "out": extra}
    return probs, cache


def _one_hot(labels, n=N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.astype(np.float64)
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels.astype(np.int64)] = 1.0
    return out


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    p = np.clip(np.sum(probs * onehot, axis=1), PROB_FLOOR, 1.0)
    return float(-np.mean(np.log(p)))


def loss_and_grads(model: MlpModel, batch, labels, rng=None, training: bool = True):
    """Mean cross-entropy over ``batch`` and its gradient.

    ``labels`` may be one-hot rows or integer class indices. Gradients use the
    same dropout masks as the forward pass; pass ``training=False`` to
    disable dropout.
    """
    y = _one_hot(labels).astype(model.params.dtype, copy=False)
    probs, cache = forward(model, batch, training=training, rng=rng)
    m = probs.shape[0]
    loss = cross_entropy(probs, y)

    p_true = np.sum(probs * y, axis=1, keepdims=True)
    live = (p_true >= PROB_FLOOR).astype(probs.dtype)  # clamped samples carry no gradient
    if model.output_activation == "softmax":
        dz = (probs - y) * (live / m)
    else:
        # d(-log p_y)/dz_k = (p_k - y_k)(1 - s_k)
        dz = (probs - y) * cache["out"] * (live / m)

    layers = model.params.layers
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_in = cache["inputs"][i]
        grads[i] = (a_in.T @ dz, dz.sum(axis=0))
        if i == 0:
            break
        da = dz @ w.T
        keep = cache["drop"][i - 1]
        if keep is not None:
            da *= keep
            da *= 1.0 / (1.0 - model.dropout_rates[i - 1])
        dz = da * (cache["hidden"][i - 1] > 0)
    return loss, ModelParameters(grads)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**63 - 1), int(epoch)])


def agency_training(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    epoch_offset: int = 0,
    losses: list | None = None,
) -> MlpModel:
    """Mini-batch Adam over ``cfg.epochs`` epochs; returns a new model.

    Each epoch reshuffles with a generator keyed on ``(cfg.seed, epoch_offset
    + epoch)``, so splitting a run into consecutive calls with matching
    offsets replays the same batches and dropout masks. Adam moments start
    from zero on every call (and every ``cfg.optimizer_reset_every`` epochs
    when that is set). The last short batch is kept.
    """
    x = np.asarray(x)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    dtype = np.dtype(cfg.dtype)
    x = x.astype(dtype, copy=False)
    y = _one_hot(y).astype(dtype, copy=False)
    out = model.copy()
    if out.params.dtype != dtype:
        out.params = ModelParameters([(w.astype(dtype), b.astype(dtype)) for w, b in out.params.layers])

    adam = None
    bs = cfg.batch_size
    for e in range(cfg.epochs):
        if adam is None or (cfg.optimizer_reset_every and e % cfg.optimizer_reset_every == 0):
            adam = AdamState.zeros_like(out.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
        rng = _epoch_rng(cfg.seed, epoch_offset + e)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss, grads = loss_and_grads(out, x[idx], y[idx], rng=rng, training=True)
            adam.update(out.params, grads, cfg.learning_rate)
            total += loss * idx.size
        if not out.params.is_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch_offset + e}")
        if losses is not None:
            losses.append(total / n)
    return out


def predict_proba(model: MlpModel, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] == 0:
        return np.zeros((0, N_CLASSES))
    return np.concatenate(
        [forward(model, x[i : i + chunk], training=False)[0] for i in range(0, x.shape[0], chunk)]
    )


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Most probable class; exact ties go to the lower label."""
    return np.argmax(predict_proba(model, x), axis=1).astype(np.int64)


# -- serialization ------------------------------------------------------------
#
# Binary layout, all little-endian:
#   8 bytes  magic b"SHFLMLP\0"
#   u32      format version
#   u32      layer count L
#   L x (u32 fan_in, u32 fan_out)
#   per layer: W as fan_in*fan_out float64 (row-major), then b as fan_out float64

MAGIC = b"SHFLMLP\0"
FORMAT_VERSION = 1
_TEXT_HEADER = f"shelterfl-params {FORMAT_VERSION}"


def params_to_bytes(params: ModelParameters) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.layers))]
    for w, _ in params.layers:
        parts.append(struct.pack("<II", *w.shape))
    for w, b in params.layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(data: bytes) -> ModelParameters:
    """Inverse of :func:`params_to_bytes`. Values come back as float64."""
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not a parameter container (bad magic)")
    pos = len(MAGIC)
    version, n_layers = struct.unpack_from("<II", data, pos)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    pos += 8
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", data, pos))
        pos += 8
    layers = []
    for fan_in, fan_out in shapes:
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=pos).reshape(fan_in, fan_out)
        pos += w.nbytes
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=pos)
        pos += b.nbytes
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes after parameters")
    return ModelParameters(layers)


def params_to_text(params: ModelParameters) -> str:
    """Line-oriented export for diffing. Floats are written with ``repr`` so
    reading the text back reproduces every float64 exactly."""
    lines = [_TEXT_HEADER, f"layers {len(params.layers)}"]
    for i, (w, b) in enumerate(params.layers):
        lines.append(f"W {i} {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in w)
        lines.append(f"b {i} {b.shape[0]}")
        lines.append(" ".join(repr(float(v)) for v in b))
    return "\n".join(lines) + "\n"


def params_from_text(text: str) -> ModelParameters:
    lines = text.splitlines()
    if not lines or lines[0] != _TEXT_HEADER:
        raise ValueError("not a parameter text export")
    n_layers = int(lines[1].split()[1])
    pos = 2
    layers = []

    def row(line, n):
        vals = np.array([float(v) for v in line.split()], dtype=np.float64)
        if vals.size != n:
            raise ValueError(f"expected {n} values, got {vals.size}")
        return vals

    for _ in range(n_layers):
        _, _, fan_in, fan_out = lines[pos].split()
        fan_in, fan_out = int(fan_in), int(fan_out)
        w = np.stack([row(lines[pos + 1 + r], fan_out) for r in range(fan_in)]) if fan_in else np.zeros((0, fan_out))
        pos += 1 + fan_in
        b = row(lines[pos + 1], int(lines[pos].split()[2]))
        pos += 2
        layers.append((w, b))
    return ModelParameters(layers)


def save_params(path, params: ModelParameters) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        path.write_text(params_to_text(params), encoding="utf-8")
    else:
        path.write_bytes(params_to_bytes(params))


def load_params(path) -> ModelParameters:
    """Reads either format; the binary container is recognised by its magic."""
    data = Path(path).read_bytes()
    if data.startswith(MAGIC):
        return params_from_bytes(data)
    return params_from_text(data.decode("utf-8"))
