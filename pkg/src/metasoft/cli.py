"""Command-line entry point.

Exit codes: 0 ok, 1 I/O or data error, 2 usage error, 3 training divergence,
4 gradient check failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgio
from . import dataio, gradcheck, report, trainer
from .errors import DivergenceError, InvalidInputError, ParseError, UnsupportedModeError

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 1, 2, 3, 4

log = logging.getLogger("metasoft")

_D = trainer.TrainConfig()
TRAIN_EPILOG = f"""\
config keys (key = value, one per line) and their defaults:
  {'alpha = ' + str(_D.alpha):<22} virtual-step learning rate
  {'beta = ' + str(_D.beta):<22} soft-label learning rate
  {'k_init = ' + str(_D.k_init):<22} initial soft-label logit scale
  lr_schedule = {cfgio._format_value('lr_schedule', _D.lr_schedule)}
  epochs = {_D.epochs}
  warmup_epochs = {_D.warmup_epochs}
  batch_size = {_D.batch_size}
  meta_batch_size = {_D.meta_batch_size}
  momentum = {_D.momentum}
  weight_decay = {_D.weight_decay}
  seed = {_D.seed}
  mode = {_D.mode}        (or ce_baseline)
  hidden_dims = {cfgio._format_value('hidden_dims', _D.hidden_dims)}
  noise_kind / noise_ratio / noise_seed   optional; inject noise before training
"""


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _class_count(text):
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"need at least 2 classes, got {v}")
    return v


def _ratio(text):
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"ratio must lie in [0, 1), got {v}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="metasoft", description="Meta-learned soft labels for noisy-label training.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("make-data", help="generate a Gaussian-blob dataset CSV", formatter_class=_Formatter)
    m.add_argument("--n", type=_positive_int, default=2000, help="number of samples")
    m.add_argument("--classes", type=_class_count, default=4, help="number of classes")
    m.add_argument("--dims", type=_positive_int, default=2, help="feature dimension")
    m.add_argument("--spread", type=float, default=1.0, help="within-cluster standard deviation")
    m.add_argument("--center-scale", type=float, default=1.0, help="standard deviation of cluster centers")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--meta-count", type=int, default=200, help="clean meta samples (0 with --test-count 0: no split column)")
    m.add_argument("--test-count", type=int, default=300, help="clean test samples")
    m.add_argument("--out", required=True, help="output CSV path")

    n = sub.add_parser("inject-noise", help="corrupt train-split labels", formatter_class=_Formatter)
    n.add_argument("--in", dest="inp", required=True, help="input dataset CSV")
    n.add_argument("--out", required=True, help="output dataset CSV")
    n.add_argument("--kind", choices=dataio.NOISE_KINDS, default="symmetric")
    n.add_argument("--ratio", type=_ratio, default=0.4, help="flip probability per train sample")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--classes", type=_class_count, default=None, help="class count (default: max label + 1)")
    n.add_argument("--manifest", default=None, help="manifest path (default: <out>.manifest.txt)")

    t = sub.add_parser("train", help="run an experiment", formatter_class=_Formatter, epilog=TRAIN_EPILOG)
    t.add_argument("--data", required=True, help="dataset CSV with a split column")
    t.add_argument("--config", default=None, help="key = value config file (missing keys use defaults)")
    t.add_argument("--mode", choices=trainer.MODES, default=None, help="override the config's mode")
    t.add_argument("--seed", type=int, default=None, help="override the config's seed")
    t.add_argument("--classes", type=_class_count, default=None, help="class count (default: max label + 1)")
    t.add_argument("--outdir", required=True, help="directory for metrics, checkpoints, soft labels")

    g = sub.add_parser("gradcheck", help="finite-difference check of the soft-label hypergradient",
                       formatter_class=_Formatter)
    g.add_argument("--seed", type=int, default=0, help="first seed")
    g.add_argument("--seeds", type=_positive_int, default=20, help="number of consecutive seeds")
    g.add_argument("--layers", type=int, default=2, help="hidden layers")
    g.add_argument("--width", type=_positive_int, default=16, help="hidden layer width")
    g.add_argument("--classes", type=_class_count, default=3)
    g.add_argument("--batch", type=_positive_int, default=4, help="train batch size")
    g.add_argument("--meta-batch", type=_positive_int, default=6)
    g.add_argument("--dims", type=_positive_int, default=5, help="input dimension")
    g.add_argument("--eps", type=float, default=1e-4, help="central-difference step")
    g.add_argument("--tol", type=float, default=1e-4, help="max relative error to pass")

    r = sub.add_parser("report", help="aggregate metrics CSVs across seeds", formatter_class=_Formatter)
    r.add_argument("metrics", nargs="+", help="metrics.csv files")
    r.add_argument("--out", required=True, help="aggregated CSV path")
    return p


def cmd_make_data(args):
    if args.n < args.classes:
        raise _Usage("--n must be at least --classes")
    ds = dataio.make_blobs(args.n, args.classes, args.dims, args.spread, args.seed, args.center_scale)
    if args.meta_count or args.test_count:
        if args.meta_count < 0 or args.test_count < 0 or args.meta_count + args.test_count >= args.n:
            raise _Usage("--meta-count + --test-count must be smaller than --n")
        ds = dataio.split(ds, args.meta_count, args.test_count, args.seed)
    dataio.save_csv(ds, args.out)
    print(f"wrote {args.out}: N={len(ds)} C={ds.n_classes} d={ds.dim}")
    return EXIT_OK


def cmd_inject_noise(args):
    ds = dataio.load_csv(args.inp, args.classes)
    noisy, rep = dataio.inject_noise(ds, dataio.NoiseSpec(args.kind, args.ratio, args.seed))
    dataio.save_csv(noisy, args.out)
    manifest = args.manifest or f"{args.out}.manifest.txt"
    dataio.write_noise_manifest(rep, manifest)
    print(f"flipped {rep.flip_count}/{rep.n_train} train labels ({rep.flip_fraction:.4f}); manifest {manifest}")
    return EXIT_OK


def cmd_train(args):
    if args.config:
        cfg, noise = cfgio.load_config(args.config)
    else:
        cfg, noise = cfgio.parse_config("")
    overrides = {k: v for k, v in (("mode", args.mode), ("seed", args.seed)) if v is not None}
    if overrides:
        cfg = replace(cfg, **overrides)
    ds = dataio.load_csv(args.data, args.classes)
    if noise is not None:
        ds, rep = dataio.inject_noise(ds, noise)
        log.info("injected %s noise: %d/%d train labels flipped", noise.kind, rep.flip_count, rep.n_train)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfgio.format_config(cfg, noise), encoding="utf-8")
    result = trainer.run_experiment(cfg, ds, out)
    last = result.metrics[-1]
    method = "Cross Entropy" if cfg.mode == "ce_baseline" else "Proposed algorithm"
    print(f"{'Method':<20}| {'Train':>7} | {'Test':>7}")
    print(f"{method:<20}| {100 * last.train_acc_vs_given:6.1f}% | {100 * last.test_acc:6.1f}%")
    if result.bank is not None and ds.true_labels is not None:
        print(f"label recovery: {100 * last.label_recovery:.1f}% (initial {100 * result.initial_recovery:.1f}%)")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.layers < 0:
        raise _Usage("--layers must be >= 0")
    dims = (args.dims, *([args.width] * args.layers), args.classes)
    n_params = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if n_params > gradcheck.MAX_PARAMS:
        raise _Usage(f"model has {n_params} parameters; gradcheck allows at most {gradcheck.MAX_PARAMS}")
    worst = None
    for seed in range(args.seed, args.seed + args.seeds):
        res = gradcheck.check_hypergrad(seed, args.layers, args.width, args.classes, args.batch,
                                        args.meta_batch, args.dims, eps=args.eps)
        print(f"seed {seed}: dims={'-'.join(map(str, res.layer_dims))} max_rel_error={res.max_rel_error:.3e}")
        if worst is None or res.max_rel_error > worst.max_rel_error:
            worst = res
    ok = worst.max_rel_error <= args.tol
    print(f"max relative error {worst.max_rel_error:.3e} (tol {args.tol:g}): {'PASS' if ok else 'FAIL'}")
    if not ok:
        i, j = worst.worst_index
        print(f"worst coordinate: seed {worst.seed}, sample {i}, class {j}: "
              f"analytic {float(worst.analytic[i, j])!r} vs finite-diff {float(worst.numeric[i, j])!r}")
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_report(args):
    header, rows = report.write_report(args.metrics, args.out)
    print(f"wrote {args.out}: {len(rows)} epochs from {len(args.metrics)} file(s)")
    return EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {
    "make-data": cmd_make_data,
    "inject-noise": cmd_inject_noise,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train" and not args.verbose:
        # default-substitution notices are always shown for train
        logging.getLogger("metasoft.config").setLevel(logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except _Usage as exc:
        parser.error(str(exc))
    except DivergenceError as exc:
        print(f"error: training diverged at {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, report.SchemaMismatch, UnsupportedModeError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
