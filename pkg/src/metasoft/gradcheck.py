"""Finite-difference check of the soft-label hypergradient."""

from dataclasses import dataclass

import numpy as np

from . import model as mlp
from . import numcore
from . import softlabels as sl
from .dataio import make_rng

MAX_PARAMS = 10_000
REL_FLOOR = 1e-4


@dataclass(frozen=True)
class GradcheckResult:
    seed: int
    layer_dims: tuple
    batch: int
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray


def relative_error(a, b, floor=REL_FLOOR):
    """|a-b| / max(|a|, |b|, floor); below ``floor`` this bounds the absolute error by floor * tol."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_hypergrad(seed, hidden_layers=2, width=16, n_classes=3, batch=4, meta_batch=6,
                    dim=5, alpha=0.5, eps=1e-4):
    dims = (dim, *([width] * hidden_layers), n_classes)
    if mlp.param_count(dims) > MAX_PARAMS:
        raise ValueError(f"model has {mlp.param_count(dims)} parameters; gradcheck allows {MAX_PARAMS}")
    rng = make_rng(seed, "gradcheck")
    model = mlp.init_mlp(dims, seed)
    x = rng.normal(size=(batch, dim))
    logits = rng.normal(0.0, 2.0, size=(batch, n_classes))
    meta_x = rng.normal(size=(meta_batch, dim))
    meta_y = rng.integers(0, n_classes, size=meta_batch)

    analytic, _ = sl.hypergrad_from_logits(model, x, logits, meta_x, meta_y, alpha)
    numeric = numcore.finite_diff_grad(lambda Y: sl.meta_loss(model, x, Y, meta_x, meta_y, alpha), logits, eps)
    err = relative_error(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(err)), err.shape)
    return GradcheckResult(seed, dims, batch, float(err[worst]), tuple(int(i) for i in worst), analytic, numeric)


def run_suite(seeds, **kw):
    return [check_hypergrad(s, **kw) for s in seeds]
