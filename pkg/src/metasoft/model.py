"""Feed-forward ReLU classifier with exact backprop and forward-mode JVP.

Parameters are kept as per-layer ``(W, b)`` arrays with ``W`` of shape
``(d_k, d_{k+1})`` so that ``z = a @ W + b``. The flat parameter vector lists
layers in order, each as ``W`` (row-major) followed by ``b``.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numcore
from .errors import InvalidInputError, ParseError

CHECKPOINT_MAGIC = "metasoft-mlp-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_KINDS = ("cce", "kl", "kl+entropy")


@dataclass(frozen=True)
class MlpModel:
    layer_dims: tuple
    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise InvalidInputError("layer_dims needs at least input and output sizes")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InvalidInputError("one weight matrix and bias per layer required")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise InvalidInputError(f"layer {k} shapes {W.shape}, {b.shape} disagree with {dims}")
        if self.activation != "relu":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")

    @property
    def n_classes(self):
        return self.layer_dims[-1]

    @property
    def n_params(self):
        return param_count(self.layer_dims)


def param_count(layer_dims):
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def init_mlp(layer_dims, seed):
    """Glorot-uniform weights, zero biases, from a seeded Philox stream."""
    from .dataio import make_rng

    rng = make_rng(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(layer_dims), tuple(weights), tuple(biases))


def zero_mlp(layer_dims):
    return MlpModel(
        tuple(layer_dims),
        tuple(np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])),
        tuple(np.zeros(b) for b in layer_dims[1:]),
    )


def flatten(model):
    parts = []
    for W, b in zip(model.weights, model.biases):
        parts.append(W.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


def unflatten(layer_dims, vec, activation="relu"):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (param_count(layer_dims),):
        raise InvalidInputError(f"parameter vector length {vec.size} != {param_count(layer_dims)}")
    weights, biases = [], []
    pos = 0
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(vec[pos:pos + a * b].reshape(a, b).copy())
        pos += a * b
        biases.append(vec[pos:pos + b].copy())
        pos += b
    return MlpModel(tuple(layer_dims), tuple(weights), tuple(biases), activation)


def with_params(model, vec):
    return unflatten(model.layer_dims, vec, model.activation)


def _check_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise InvalidInputError(f"batch shape {x.shape} does not match input size {model.layer_dims[0]}")
    return x


def _forward_cache(model, x):
    """Return (layer inputs, pre-activations, logits)."""
    inputs, pre = [], []
    a = x
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        z = a @ W + b
        pre.append(z)
        a = z if k == last else np.maximum(z, 0.0)
    return inputs, pre, a


def logits(model, x):
    return _forward_cache(model, _check_batch(model, x))[2]


def forward(model, x):
    """Class probabilities, one row per sample."""
    return numcore.softmax(logits(model, x))


def _backward(model, inputs, pre, dlogits):
    grads = []
    delta = dlogits
    for k in range(len(model.weights) - 1, -1, -1):
        gW = inputs[k].T @ delta
        gb = delta.sum(axis=0)
        grads.append((gW, gb))
        if k > 0:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)
    grads.reverse()
    return np.concatenate([np.concatenate([gW.reshape(-1), gb]) for gW, gb in grads])


def grad_loss(model, x, labels, loss_kind="cce"):
    """Batch-mean loss and its exact gradient w.r.t. the flat parameters.

    ``labels`` are integer class indices for ``cce`` and an (N, C) matrix of
    probabilities for ``kl`` and ``kl+entropy``.
    """
    if loss_kind not in LOSS_KINDS:
        raise InvalidInputError(f"unknown loss kind {loss_kind!r}")
    x = _check_batch(model, x)
    n = x.shape[0]
    inputs, pre, z = _forward_cache(model, x)
    p = numcore.softmax(z)
    if loss_kind == "cce":
        labels = np.asarray(labels)
        if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
            raise InvalidInputError("cce needs a vector of hard class indices")
        loss = numcore.cce_loss(p, labels)
        dz = p.copy()
        dz[np.arange(n), labels] -= 1.0
    else:
        s = np.asarray(labels, dtype=np.float64)
        if s.shape != p.shape:
            raise InvalidInputError(f"soft labels of shape {s.shape} needed {p.shape}")
        loss = numcore.kl_loss(p, s)
        dz = p - s
        if loss_kind == "kl+entropy":
            loss += numcore.entropy_loss(p)
            logp = numcore.safe_log(p)
            dz += -p * (logp - (p * logp).sum(axis=1, keepdims=True))
    return loss, _backward(model, inputs, pre, dz / n)


def logprob_jvp(model, x, tangent):
    """Directional derivative of log-probabilities along a parameter tangent.

    Exact forward mode. Returns shape (C,) for a single sample or (N, C) for a
    batch: entry [i, j] is d/dt log f_j(x_i; theta + t * tangent) at t = 0.
    """
    single = np.asarray(x).ndim == 1
    x = _check_batch(model, x)
    t = with_params(model, tangent)
    a, da = x, np.zeros_like(x)
    last = len(model.weights) - 1
    for k in range(len(model.weights)):
        W, b = model.weights[k], model.biases[k]
        z = a @ W + b
        dz = da @ W + a @ t.weights[k] + t.biases[k]
        if k == last:
            a, da = z, dz
        else:
            mask = z > 0
            a, da = np.where(mask, z, 0.0), np.where(mask, dz, 0.0)
    p = numcore.softmax(a)
    out = da - (p * da).sum(axis=1, keepdims=True)
    return out[0] if single else out


@dataclass
class OptimizerState:
    velocity: np.ndarray
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_schedule: list = field(default_factory=lambda: [(0, 1e-3), (10, 1e-4), (20, 1e-5)])

    def __post_init__(self):
        epochs = [e for e, _ in self.lr_schedule]
        if not epochs or any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise InvalidInputError("lr_schedule epochs must be strictly increasing")

    @classmethod
    def for_model(cls, model, **kw):
        return cls(velocity=np.zeros(model.n_params), **kw)

    def lr_at(self, epoch):
        return lr_at(self.lr_schedule, epoch)


def lr_at(schedule, epoch):
    """Rate of the last schedule entry whose epoch is <= ``epoch``."""
    lr = schedule[0][1]
    for start, rate in schedule:
        if start <= epoch:
            lr = rate
    return lr


def sgd_step(model, grad, state, lr):
    """One momentum step with coupled L2 decay; returns new (model, state)."""
    theta = flatten(model)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape or state.velocity.shape != theta.shape:
        raise InvalidInputError("gradient/velocity shape does not match the model")
    velocity = state.momentum * state.velocity + grad + state.weight_decay * theta
    return with_params(model, theta - lr * velocity), replace(state, velocity=velocity)


def accuracy(model, x, hard_labels):
    p = forward(model, x)
    labels = np.asarray(hard_labels)
    if labels.size == 0:
        raise InvalidInputError("accuracy needs a nonempty batch")
    return float(np.mean(np.argmax(p, axis=1) == labels))


def save_checkpoint(path, model):
    """Text checkpoint; parameters are written with ``float.hex`` so reloads are bit-exact."""
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"activation {model.activation}",
        "layer_dims " + " ".join(str(d) for d in model.layer_dims),
        f"params {model.n_params}",
    ]
    lines.extend(float(v).hex() for v in flatten(model))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 4:
        raise ParseError(path, len(lines), "truncated checkpoint header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise ParseError(path, 1, "not a metasoft checkpoint")
    if int(magic[1]) != CHECKPOINT_VERSION:
        raise ParseError(path, 1, f"unsupported checkpoint version {magic[1]}")
    header = {}
    for lineno in (2, 3, 4):
        key, _, value = lines[lineno - 1].partition(" ")
        header[key] = value
    try:
        dims = tuple(int(v) for v in header["layer_dims"].split())
        n = int(header["params"])
    except (KeyError, ValueError) as exc:
        raise ParseError(path, 3, f"bad header: {exc}") from None
    body = lines[4:]
    if len(body) != n or n != param_count(dims):
        raise ParseError(path, 4, f"expected {param_count(dims)} parameters, found {len(body)}")
    try:
        vec = np.array([float.fromhex(v) for v in body])
    except ValueError as exc:
        raise ParseError(path, 5, str(exc)) from None
    return unflatten(dims, vec, header.get("activation", "relu"))
