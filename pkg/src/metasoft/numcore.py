"""Dense float64 kernels: softmax, the three losses, and finite differences.

Probability-valued functions accept either a single vector of shape ``(C,)``
or a batch of shape ``(N, C)``; batched losses are averaged over rows.
"""

import numpy as np

from .errors import InvalidInputError

PROB_FLOOR = 1e-12


def _as_float(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise InvalidInputError(f"{name} must be a vector or a matrix, got ndim={arr.ndim}")
    return arr


def softmax(logits):
    """Row-wise softmax with max subtraction."""
    z = _as_float(logits, "logits")
    if z.shape[-1] < 2:
        raise InvalidInputError("softmax needs at least 2 classes")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input contains non-finite values")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = _as_float(logits, "logits")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def safe_log(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def cce_loss(pred, hard_label):
    """Categorical cross-entropy ``-log p[label]``, probability floored at 1e-12.

    For a batch ``pred`` of shape (N, C), ``hard_label`` is a length-N index
    array and the mean over rows is returned.
    """
    p = _as_float(pred, "pred")
    labels = np.asarray(hard_label)
    C = p.shape[-1]
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidInputError("hard labels must be integer class indices")
    if np.any(labels < 0) or np.any(labels >= C):
        raise InvalidInputError(f"class index out of range for C={C}")
    if p.ndim == 1:
        if labels.ndim != 0:
            raise InvalidInputError("single prediction needs a scalar label")
        return float(-safe_log(p[int(labels)]))
    if labels.shape != (p.shape[0],):
        raise InvalidInputError("need one label per prediction row")
    picked = p[np.arange(p.shape[0]), labels]
    return float(-safe_log(picked).mean())


def kl_loss(pred, soft_label):
    """KL(soft_label || pred) in nats, both arguments floored at 1e-12."""
    p = _as_float(pred, "pred")
    s = _as_float(soft_label, "soft_label")
    if p.shape != s.shape:
        raise InvalidInputError(f"shape mismatch: pred {p.shape} vs soft_label {s.shape}")
    terms = s * (safe_log(s) - safe_log(p))
    if p.ndim == 1:
        return float(terms.sum())
    return float(terms.sum(axis=1).mean())


def entropy_loss(preds):
    """Mean Shannon entropy of a batch of predictions (0 log 0 taken as 0)."""
    p = _as_float(preds, "preds")
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[0] == 0:
        raise InvalidInputError("entropy_loss needs a nonempty batch")
    return float(-(p * safe_log(p)).sum(axis=1).mean())


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    x0 = np.array(x, dtype=np.float64)
    flat = x0.reshape(-1)
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = f(x0.copy())
        flat[k] = orig - eps
        fm = f(x0.copy())
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"function returned a non-finite value at coordinate {k}")
        grad[k] = (fp - fm) / (2 * eps)
    return grad.reshape(x0.shape)
