"""Learnable per-sample soft labels and their meta-gradient.

Soft labels are stored as logits; ``softmax`` is applied wherever a
distribution is needed. The meta-objective for a train batch ``x`` with
label logits ``Y`` is::

    theta_hat(Y) = theta - alpha * grad_theta KL(softmax(Y) || f_theta(x))
    L_meta(Y)    = CCE(f_theta_hat(x_meta), y_meta)

Since the KL gradient is ``-(1/B) sum_ij s_ij grad_theta log f_j(x_i)`` plus
terms that do not depend on ``s``, ``d theta_hat / d s_ij`` is
``(alpha/B) grad_theta log f_j(x_i)``. So one backward pass at ``theta_hat``
(giving ``g``) and one forward-mode JVP at ``theta`` along ``g`` yield every
``dL_meta / d s_ij``, which is then chained through the softmax Jacobian.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import model as mlp
from . import numcore
from .errors import InvalidInputError, UnsupportedModeError


@dataclass(frozen=True)
class SoftLabelBank:
    ids: np.ndarray
    logits: np.ndarray
    k_init: float = 10.0

    def __post_init__(self):
        if self.logits.ndim != 2 or self.logits.shape[0] != len(self.ids):
            raise InvalidInputError("need one logit vector per sample id")
        if self.logits.shape[1] < 2:
            raise InvalidInputError("soft labels need at least 2 classes")
        object.__setattr__(self, "_rows", {int(i): r for r, i in enumerate(self.ids)})

    @property
    def n_classes(self):
        return self.logits.shape[1]

    def rows(self, ids):
        try:
            return np.array([self._rows[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise InvalidInputError(f"sample id {exc.args[0]} not in soft-label bank") from None

    def logits_for(self, ids):
        return self.logits[self.rows(ids)]

    def probs_for(self, ids):
        return numcore.softmax(self.logits_for(ids))

    def probs(self):
        return numcore.softmax(self.logits)


@dataclass(frozen=True)
class MetaStepReport:
    ids: np.ndarray
    meta_loss_before: float
    meta_loss_after: float
    hypergrad_norm: float


def init_soft_labels(noisy_labels, n_classes, k_init=10.0, ids=None):
    """Logits ``k_init * onehot(label)`` for every sample."""
    labels = np.asarray(noisy_labels, dtype=np.int64)
    if k_init <= 0:
        raise InvalidInputError("k_init must be positive")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise InvalidInputError(f"label out of range for C={n_classes}")
    logits = np.zeros((len(labels), n_classes))
    logits[np.arange(len(labels)), labels] = k_init
    if ids is None:
        ids = np.arange(len(labels), dtype=np.int64)
    return SoftLabelBank(np.asarray(ids, dtype=np.int64), logits, float(k_init))


def virtual_params(model, x, label_logits, alpha):
    """Flat parameters after one plain SGD step on KL to ``softmax(label_logits)``."""
    _, g = mlp.grad_loss(model, x, numcore.softmax(label_logits), "kl")
    return mlp.flatten(model) - alpha * g


def virtual_step(model, x, bank, ids, alpha):
    return virtual_params(model, x, bank.logits_for(ids), alpha)


def meta_loss(model, x, label_logits, meta_x, meta_y, alpha):
    """The composed map Y -> L_meta(theta_hat(Y)); used as the finite-difference target."""
    theta_hat = mlp.with_params(model, virtual_params(model, x, label_logits, alpha))
    return numcore.cce_loss(mlp.forward(theta_hat, meta_x), np.asarray(meta_y))


def hypergrad_from_logits(model, x, label_logits, meta_x, meta_y, alpha):
    """Return (dL_meta/dY of shape (B, C), L_meta at theta_hat)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.asarray(label_logits, dtype=np.float64)
    if Y.shape != (x.shape[0], model.n_classes):
        raise InvalidInputError(f"label logits shape {Y.shape} does not match batch")
    if len(meta_y) == 0:
        raise InvalidInputError("meta batch is empty")
    B = x.shape[0]
    s = numcore.softmax(Y)
    theta_hat = mlp.with_params(model, virtual_params(model, x, Y, alpha))
    loss, g = mlp.grad_loss(theta_hat, meta_x, np.asarray(meta_y), "cce")
    d_s = (alpha / B) * mlp.logprob_jvp(model, x, g)
    d_y = s * (d_s - (s * d_s).sum(axis=1, keepdims=True))
    return d_y, loss


def label_hypergrad(model, x, bank, ids, meta_x, meta_y, alpha):
    return hypergrad_from_logits(model, x, bank.logits_for(ids), meta_x, meta_y, alpha)[0]


def meta_label_update(bank, ids, hypergrad, beta):
    """Plain SGD on the logits of ``ids``; other entries are left untouched."""
    if beta < 0:
        raise InvalidInputError("beta must be nonnegative")
    rows = bank.rows(ids)
    logits = bank.logits.copy()
    logits[rows] -= beta * np.asarray(hypergrad)
    return SoftLabelBank(bank.ids, logits, bank.k_init)


def meta_step(model, x, bank, ids, meta_x, meta_y, alpha, beta):
    """Hypergradient plus update; reports meta-loss before and after."""
    grad, before = hypergrad_from_logits(model, x, bank.logits_for(ids), meta_x, meta_y, alpha)
    new_bank = meta_label_update(bank, ids, grad, beta)
    new_logits = new_bank.logits_for(ids)
    # non-finite logits are reported as a NaN loss for the caller's divergence guard
    after = meta_loss(model, x, new_logits, meta_x, meta_y, alpha) if np.all(np.isfinite(new_logits)) else float("nan")
    return new_bank, MetaStepReport(np.asarray(ids), before, after, float(np.linalg.norm(grad)))


def label_recovery_accuracy(bank, true_labels):
    """Fraction of samples whose soft-label argmax equals the true label."""
    if true_labels is None:
        raise UnsupportedModeError("label recovery needs true labels")
    true_labels = np.asarray(true_labels)
    if true_labels.shape != (len(bank.ids),):
        raise InvalidInputError("need one true label per bank entry")
    return float(np.mean(np.argmax(bank.logits, axis=1) == true_labels))


def export_soft_labels(path, bank, given_labels, true_labels=None):
    C = bank.n_classes
    probs = bank.probs()
    header = ["sample_id", "given_label"]
    if true_labels is not None:
        header.append("true_label")
    header += [f"logit_{j}" for j in range(C)] + [f"softprob_{j}" for j in range(C)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r, sid in enumerate(bank.ids):
            row = [int(sid), int(given_labels[r])]
            if true_labels is not None:
                row.append(int(true_labels[r]))
            row += [repr(float(v)) for v in bank.logits[r]]
            row += [repr(float(v)) for v in probs[r]]
            w.writerow(row)
