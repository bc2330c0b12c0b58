"""Warm-up, meta epochs, and the experiment driver."""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dataio
from . import model as mlp
from . import softlabels as sl
from .errors import DivergenceError, InvalidInputError

log = logging.getLogger(__name__)

MODES = ("proposed", "ce_baseline")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    beta: float = 4000.0
    k_init: float = 10.0
    lr_schedule: tuple = ((0, 1e-3), (10, 1e-4), (20, 1e-5))
    epochs: int = 30
    warmup_epochs: int = 10
    batch_size: int = 16
    meta_batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    mode: str = "proposed"
    hidden_dims: tuple = (256,)

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule", tuple((int(e), float(r)) for e, r in self.lr_schedule))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise InvalidInputError("need 0 <= warmup_epochs <= epochs")
        if self.alpha <= 0 or self.beta < 0 or self.k_init <= 0:
            raise InvalidInputError("alpha and k_init must be positive, beta nonnegative")
        if self.batch_size < 1 or self.meta_batch_size < 1:
            raise InvalidInputError("batch sizes must be >= 1")
        if any(r <= 0 for _, r in self.lr_schedule) or self.momentum < 0 or self.weight_decay < 0:
            raise InvalidInputError("learning rates must be positive; momentum and decay nonnegative")
        if any(h < 1 for h in self.hidden_dims):
            raise InvalidInputError("hidden layer widths must be >= 1")
        # OptimizerState validates the schedule ordering
        mlp.OptimizerState(np.zeros(0), lr_schedule=list(self.lr_schedule))

    def lr_at(self, epoch):
        return mlp.lr_at(self.lr_schedule, epoch)


@dataclass
class EpochMetrics:
    epoch: int
    phase: str
    lr: float
    train_acc_vs_given: float
    train_acc_vs_true: float = math.nan
    test_acc: float = math.nan
    train_loss: float = math.nan
    meta_loss_before: float = math.nan
    meta_loss_after: float = math.nan
    label_recovery: float = math.nan
    wall_time: float = field(default=0.0, compare=False)


# wall_time is logged, never written, so metrics files stay byte-reproducible
METRIC_COLUMNS = [f.name for f in fields(EpochMetrics) if f.name != "wall_time"]


@dataclass
class ExperimentResult:
    config: TrainConfig
    metrics: list
    model: mlp.MlpModel
    warmup_model: mlp.MlpModel
    bank: sl.SoftLabelBank | None = None
    initial_recovery: float = math.nan


class MetaSampler:
    """Endless meta-split batches; reshuffles after each pass with its own stream."""

    def __init__(self, ds, batch_size, seed):
        self.ds, self.batch_size, self.seed = ds, batch_size, seed
        self.cycle = 0
        self._queue = []

    def next(self):
        if not self._queue:
            self._queue = dataio.batches(self.ds, "meta", self.batch_size, self.seed + 1_000_003, self.cycle)
            self.cycle += 1
        return self._queue.pop(0)


def _check_finite(value, epoch, batch, ids, what):
    if not np.isfinite(value):
        raise DivergenceError(epoch, batch, f"non-finite {what} on sample ids {list(map(int, ids))}")


def _evaluate(model, ds, epoch, phase, lr, losses, t0, meta_before=(), meta_after=(), bank=None):
    tr = ds.mask("train")
    te = ds.mask("test")
    x_tr = ds.features[tr]
    m = EpochMetrics(
        epoch=epoch,
        phase=phase,
        lr=lr,
        train_acc_vs_given=mlp.accuracy(model, x_tr, ds.given_labels[tr]),
        train_loss=float(np.mean(losses)) if losses else math.nan,
        wall_time=time.perf_counter() - t0,
    )
    if ds.true_labels is not None:
        m.train_acc_vs_true = mlp.accuracy(model, x_tr, ds.true_labels[tr])
        if te.any():
            m.test_acc = mlp.accuracy(model, ds.features[te], ds.true_labels[te])
        if bank is not None:
            m.label_recovery = sl.label_recovery_accuracy(bank, ds.true_labels[ds.rows(bank.ids)])
    elif te.any():
        m.test_acc = mlp.accuracy(model, ds.features[te], ds.given_labels[te])
    if meta_before:
        m.meta_loss_before = float(np.mean(meta_before))
        m.meta_loss_after = float(np.mean(meta_after))
    log.info(
        "epoch %d %s lr=%g loss=%.4f train(given)=%.4f test=%.4f (%.2fs)",
        epoch, phase, lr, m.train_loss, m.train_acc_vs_given, m.test_acc, m.wall_time,
    )
    return m


def cce_epoch(model, opt, ds, cfg, epoch, phase="warmup"):
    """One epoch of cross-entropy training on the given labels."""
    t0 = time.perf_counter()
    lr = cfg.lr_at(epoch)
    losses = []
    for b, ids in enumerate(dataio.batches(ds, "train", cfg.batch_size, cfg.seed, epoch)):
        rows = ds.rows(ids)
        loss, g = mlp.grad_loss(model, ds.features[rows], ds.given_labels[rows], "cce")
        _check_finite(loss, epoch, b, ids, "cross-entropy loss")
        model, opt = mlp.sgd_step(model, g, opt, lr)
        losses.append(loss)
    return model, opt, _evaluate(model, ds, epoch, phase, lr, losses, t0)


def make_optimizer(model, cfg):
    return mlp.OptimizerState.for_model(
        model, momentum=cfg.momentum, weight_decay=cfg.weight_decay, lr_schedule=list(cfg.lr_schedule)
    )


def run_warmup(model, ds, cfg, opt=None):
    """``cfg.warmup_epochs`` epochs of cross-entropy on the noisy labels."""
    opt = opt or make_optimizer(model, cfg)
    metrics = []
    for epoch in range(cfg.warmup_epochs):
        model, opt, m = cce_epoch(model, opt, ds, cfg, epoch)
        metrics.append(m)
    return model, opt, metrics


def run_meta_epoch(model, opt, ds, bank, cfg, epoch, sampler):
    """Per train batch: meta label update through a virtual step, then KL + entropy step."""
    t0 = time.perf_counter()
    lr = cfg.lr_at(epoch)
    losses, before, after = [], [], []
    for b, ids in enumerate(dataio.batches(ds, "train", cfg.batch_size, cfg.seed, epoch)):
        x = ds.features[ds.rows(ids)]
        meta_ids = sampler.next()
        mrows = ds.rows(meta_ids)
        bank, report = sl.meta_step(
            model, x, bank, ids, ds.features[mrows], ds.given_labels[mrows], cfg.alpha, cfg.beta
        )
        _check_finite(report.meta_loss_after, epoch, b, ids, "meta loss")
        if not np.all(np.isfinite(bank.logits_for(ids))):
            raise DivergenceError(epoch, b, f"non-finite soft-label logits on sample ids {list(map(int, ids))}")
        loss, g = mlp.grad_loss(model, x, bank.probs_for(ids), "kl+entropy")
        _check_finite(loss, epoch, b, ids, "KL + entropy loss")
        model, opt = mlp.sgd_step(model, g, opt, lr)
        losses.append(loss)
        before.append(report.meta_loss_before)
        after.append(report.meta_loss_after)
    m = _evaluate(model, ds, epoch, "meta", lr, losses, t0, before, after, bank)
    return model, opt, bank, m


def run_experiment(cfg, ds, outdir=None):
    """Run one configured experiment; optionally write metrics, checkpoints, soft labels."""
    if cfg.mode == "proposed" and cfg.warmup_epochs < cfg.epochs and not ds.mask("meta").any():
        raise InvalidInputError("proposed mode needs a nonempty meta split")
    if not ds.mask("train").any():
        raise InvalidInputError("dataset has no train samples")
    dims = (ds.dim, *cfg.hidden_dims, ds.n_classes)
    model = mlp.init_mlp(dims, cfg.seed)
    opt = make_optimizer(model, cfg)

    warm_epochs = cfg.epochs if cfg.mode == "ce_baseline" else cfg.warmup_epochs
    metrics = []
    warmup_model = model
    for epoch in range(warm_epochs):
        phase = "warmup" if epoch < cfg.warmup_epochs else "ce"
        model, opt, m = cce_epoch(model, opt, ds, cfg, epoch, phase)
        metrics.append(m)
        if epoch + 1 == cfg.warmup_epochs:
            warmup_model = model
    if cfg.warmup_epochs == 0:
        warmup_model = model

    bank = None
    initial_recovery = math.nan
    if cfg.mode == "proposed":
        tr = ds.mask("train")
        bank = sl.init_soft_labels(ds.given_labels[tr], ds.n_classes, cfg.k_init, ids=ds.ids[tr])
        if ds.true_labels is not None:
            initial_recovery = sl.label_recovery_accuracy(bank, ds.true_labels[tr])
        sampler = MetaSampler(ds, cfg.meta_batch_size, cfg.seed)
        for epoch in range(cfg.warmup_epochs, cfg.epochs):
            model, opt, bank, m = run_meta_epoch(model, opt, ds, bank, cfg, epoch, sampler)
            metrics.append(m)

    result = ExperimentResult(cfg, metrics, model, warmup_model, bank, initial_recovery)
    if outdir is not None:
        write_outputs(result, ds, outdir)
    return result


def write_metrics_csv(metrics, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            row = asdict(m)
            w.writerow(["" if isinstance(row[c], float) and math.isnan(row[c]) else _fmt(row[c]) for c in METRIC_COLUMNS])


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_outputs(result, ds, outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.metrics, out / "metrics.csv")
    mlp.save_checkpoint(out / "checkpoint_warmup.txt", result.warmup_model)
    mlp.save_checkpoint(out / "checkpoint_final.txt", result.model)
    if result.bank is not None:
        rows = ds.rows(result.bank.ids)
        true = ds.true_labels[rows] if ds.true_labels is not None else None
        sl.export_soft_labels(out / "soft_labels.csv", result.bank, ds.given_labels[rows], true)

