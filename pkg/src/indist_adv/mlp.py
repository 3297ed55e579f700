"""Five-layer ReLU MLP for the two-class uniform data, written in plain numpy.

Layer widths are ``[D, 5D, D, max(D//5, 2), max(D//5, 2), 2]``.  Weights are
stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape ``(n, D)``
maps through ``X @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .parametric_data import LabeledDataset
from .seeding import make_rng


def layer_dims(input_dim: int) -> list[int]:
    small = max(input_dim // 5, 2)
    return [input_dim, 5 * input_dim, input_dim, small, small, 2]


@dataclass(eq=False)
class MlpModel:
    dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    init_seed: int | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (self.dims[i + 1],):
                raise ValueError(f"layer {i} shape {W.shape}/{b.shape} does not chain with dims {self.dims}")

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def copy(self) -> MlpModel:
        return MlpModel(list(self.dims), [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], self.init_seed)

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def log_proba(self, X: np.ndarray) -> np.ndarray:
        """Log class probabilities for a batch; usable as an attack classifier."""
        return log_softmax(self._logits(np.asarray(X, dtype=float)))

    __call__ = log_proba

    def _logits(self, X):
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def same_weights(self, other: MlpModel) -> bool:
        return self.dims == other.dims and all(
            np.array_equal(p, q) for p, q in zip(self.params(), other.params()))


@dataclass
class TrainConfig:
    """Plain SGD settings.

    ``learning_rate`` applies to the batch-mean loss.  The default 0.1 equals a
    per-example rate of 1e-4 over a 1000-point batch.
    """

    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 64_000
    sgd_seed: int = 0


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def mlp_init(input_dim: int, init_seed: int) -> MlpModel:
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights, zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    dims = layer_dims(input_dim)
    rng = make_rng(init_seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases, init_seed)


def forward(model: MlpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Logits and softmax probabilities for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_dim,):
        raise ValueError(f"expected input of length {model.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    logits = model._logits(x[None])[0]
    return logits, np.exp(log_softmax(logits))


def predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    # argmax picks the first maximum, so ties go to class 0
    return np.argmax(model._logits(np.asarray(X, dtype=float)), axis=1)


def accuracy(model: MlpModel, data: LabeledDataset) -> float:
    if len(data) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(model, data.points) == data.labels))


def loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. every parameter.

    Gradients come back in :meth:`MlpModel.params` order.
    """
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    logp = log_softmax(acts[-1])
    n = len(X)
    loss = -float(np.mean(logp[np.arange(n), y]))

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = []
    for i in range(last, -1, -1):
        gW = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads = [gW, gb] + grads
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, grads


def train(model: MlpModel, data: LabeledDataset, cfg: TrainConfig | None = None) -> tuple[MlpModel, list[float]]:
    """Plain mini-batch SGD on mean cross-entropy.

    Returns a new model and the per-epoch mean batch loss (measured before
    each batch's update).  The input model is not modified.
    """
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.support.dim != model.input_dim:
        raise ValueError(f"data dim {data.support.dim} != model input dim {model.input_dim}")
    model = model.copy()
    rng = make_rng(cfg.sgd_seed)
    params = model.params()
    n = len(data)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses, sizes = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, data.points[idx], data.labels[idx])
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
            losses.append(loss)
            sizes.append(len(idx))
        history.append(float(np.average(losses, weights=sizes)))
    return model, history


def grad_check(model: MlpModel, x, label: int) -> float:
    """Max relative error between backprop and central differences.

    The step for weight ``w`` is ``1e-4 * (|w| + 1)``.  The relative error of
    one entry is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    X = np.asarray(x, dtype=float)[None]
    y = np.array([label])
    _, grads = loss_and_grads(model, X, y)
    probe = model.copy()
    worst = 0.0
    for p, g in zip(probe.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            w = flat[k]
            h = 1e-4 * (abs(w) + 1.0)
            flat[k] = w + h
            up, _ = loss_and_grads(probe, X, y)
            flat[k] = w - h
            down, _ = loss_and_grads(probe, X, y)
            flat[k] = w
            numeric = (up - down) / (2 * h)
            err = abs(gflat[k] - numeric) / max(abs(gflat[k]) + abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def model_to_json(model: MlpModel) -> dict:
    def enc(a):
        return [float(f"{v:.17g}") for v in np.asarray(a).reshape(-1)]
    return {
        "dims": model.dims,
        "init_seed": model.init_seed,
        "layers": [{"weight": enc(W), "bias": enc(b)} for W, b in zip(model.weights, model.biases)],
    }


def model_from_json(obj: dict) -> MlpModel:
    dims = [int(d) for d in obj["dims"]]
    weights, biases = [], []
    for i, layer in enumerate(obj["layers"]):
        weights.append(np.array(layer["weight"], dtype=float).reshape(dims[i], dims[i + 1]))
        biases.append(np.array(layer["bias"], dtype=float))
    return MlpModel(dims, weights, biases, obj.get("init_seed"))


def save_model(model: MlpModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model), fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        return model_from_json(json.load(fh))
