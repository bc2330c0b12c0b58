"""Datasets, synthetic label noise, splits, and seeded batch order.

Every random draw goes through :func:`make_rng`, a Philox-4x64 generator
keyed by ``SeedSequence([seed, crc32(stream tag), *extra])``. Philox is a
counter-based generator, so a given (seed, stream) always reproduces the
same numbers regardless of platform.
"""

import csv
import io
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError, UnsupportedModeError

SPLITS = ("train", "meta", "test")
NOISE_KINDS = ("symmetric", "pairflip")


def make_rng(seed, stream, *extra):
    key = [int(seed), zlib.crc32(stream.encode("ascii")), *(int(e) for e in extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class Dataset:
    ids: np.ndarray
    features: np.ndarray
    given_labels: np.ndarray
    n_classes: int
    true_labels: np.ndarray | None = None
    split: np.ndarray | None = None  # None means every sample is "train"

    def __post_init__(self):
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise InvalidInputError("features must be an N x d matrix")
        if self.given_labels.shape != (n,):
            raise InvalidInputError("need one given label per sample")
        if self.n_classes < 2:
            raise InvalidInputError("need at least 2 classes")
        for name in ("given_labels", "true_labels"):
            lab = getattr(self, name)
            if lab is not None and (lab.shape != (n,) or np.any(lab < 0) or np.any(lab >= self.n_classes)):
                raise InvalidInputError(f"{name} out of range for C={self.n_classes}")
        if self.split is not None:
            if self.split.shape != (n,) or not np.all(np.isin(self.split, SPLITS)):
                raise InvalidInputError(f"split tags must be one of {SPLITS}")
            if self.true_labels is not None:
                clean = self.split != "train"
                if np.any(self.given_labels[clean] != self.true_labels[clean]):
                    raise InvalidInputError("meta/test samples must carry their true labels")
        if len(np.unique(self.ids)) != n:
            raise InvalidInputError("sample ids must be unique")
        object.__setattr__(self, "_rows", {int(i): r for r, i in enumerate(self.ids)})

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.features.shape[1]

    def tags(self):
        if self.split is None:
            return np.full(len(self), "train", dtype=object)
        return self.split

    def mask(self, split_tag):
        return self.tags() == split_tag

    def rows(self, ids):
        """Row indices for the given sample ids."""
        return np.array([self._rows[int(i)] for i in ids], dtype=np.int64)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "symmetric"
    ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidInputError(f"noise kind must be one of {NOISE_KINDS}")
        if not 0.0 <= self.ratio < 1.0:
            raise InvalidInputError("noise ratio must lie in [0, 1)")


@dataclass(frozen=True)
class NoiseReport:
    spec: NoiseSpec
    n_train: int
    flipped_ids: tuple

    @property
    def flip_count(self):
        return len(self.flipped_ids)

    @property
    def flip_fraction(self):
        return self.flip_count / self.n_train if self.n_train else 0.0


def make_blobs(n, n_classes, dim, spread=1.0, seed=0, center_scale=1.0):
    """Balanced isotropic Gaussian clusters around seeded random centers.

    Centers are drawn from N(0, center_scale^2 I); each sample is its
    center plus N(0, spread^2 I) noise.
    """
    if n < n_classes:
        raise InvalidInputError("n must be at least the number of classes")
    if n_classes < 2 or dim < 1:
        raise InvalidInputError("need at least 2 classes and 1 dimension")
    rng = make_rng(seed, "blobs")
    centers = rng.normal(0.0, center_scale, size=(n_classes, dim))
    labels = rng.permutation(np.arange(n) % n_classes)
    features = centers[labels] + rng.normal(0.0, spread, size=(n, dim))
    return Dataset(
        ids=np.arange(n, dtype=np.int64),
        features=features,
        given_labels=labels.astype(np.int64),
        n_classes=n_classes,
        true_labels=labels.astype(np.int64).copy(),
    )


# 4-class blobs in 512-d: high enough dimension that an over-parameterized
# MLP can fit 40% symmetric noise under the default schedule.
DESK_BENCHMARK = dict(n=2000, n_classes=4, dim=512, spread=1.25, center_scale=0.625,
                      meta_count=200, test_count=300, noise_ratio=0.4)


def desk_benchmark(seed, noise_ratio=None):
    """Blobs, 200/300 meta/test split, symmetric noise on the train split."""
    b = DESK_BENCHMARK
    ds = make_blobs(b["n"], b["n_classes"], b["dim"], b["spread"], seed, b["center_scale"])
    ds = split(ds, b["meta_count"], b["test_count"], seed)
    ratio = b["noise_ratio"] if noise_ratio is None else noise_ratio
    return inject_noise(ds, NoiseSpec("symmetric", ratio, seed))


def split(ds, meta_count, test_count, seed=0):
    """Tag ``meta_count`` and ``test_count`` samples, chosen uniformly, as meta and test."""
    n = len(ds)
    if meta_count < 0 or test_count < 0 or meta_count + test_count >= n:
        raise InvalidInputError(f"meta_count + test_count must be < {n}")
    order = make_rng(seed, "split").permutation(n)
    tags = np.full(n, "train", dtype=object)
    tags[order[:meta_count]] = "meta"
    tags[order[meta_count:meta_count + test_count]] = "test"
    return replace(ds, split=tags)


def inject_noise(ds, spec):
    """Corrupt given labels of the train split; returns (dataset, report)."""
    if ds.true_labels is None:
        raise UnsupportedModeError("noise injection needs true labels")
    C = ds.n_classes
    train_rows = np.flatnonzero(ds.mask("train"))
    rng = make_rng(spec.seed, "noise")
    flip = rng.random(len(train_rows)) < spec.ratio
    offsets = rng.integers(1, C, size=len(train_rows)) if spec.kind == "symmetric" else np.ones(len(train_rows), dtype=np.int64)
    given = ds.true_labels.copy()
    rows = train_rows[flip]
    given[rows] = (ds.true_labels[rows] + offsets[flip]) % C
    report = NoiseReport(spec, len(train_rows), tuple(int(i) for i in ds.ids[rows]))
    return replace(ds, given_labels=given), report


def batches(ds, split_tag, batch_size, seed, epoch):
    """Shuffled id batches of one split; the last batch may be short."""
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    ids = ds.ids[ds.mask(split_tag)]
    order = make_rng(seed, f"batches/{split_tag}", epoch).permutation(len(ids))
    ids = ids[order]
    return [ids[i:i + batch_size] for i in range(0, len(ids), batch_size)]


def to_csv_text(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["id"] + [f"f{k}" for k in range(ds.dim)] + ["label"]
    if ds.true_labels is not None:
        header.append("true_label")
    if ds.split is not None:
        header.append("split")
    w.writerow(header)
    for r in range(len(ds)):
        row = [str(int(ds.ids[r]))] + [repr(float(v)) for v in ds.features[r]] + [str(int(ds.given_labels[r]))]
        if ds.true_labels is not None:
            row.append(str(int(ds.true_labels[r])))
        if ds.split is not None:
            row.append(ds.split[r])
        w.writerow(row)
    return buf.getvalue()


def save_csv(ds, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv_text(ds))


def load_csv(path, n_classes=None):
    """Parse the dataset CSV; ``n_classes`` defaults to max label + 1."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty file")
    header = rows[0]
    if not header or header[0] != "id":
        raise ParseError(path, 1, "header must start with 'id'")
    cols = header[1:]
    has_split = bool(cols) and cols[-1] == "split"
    if has_split:
        cols = cols[:-1]
    has_true = bool(cols) and cols[-1] == "true_label"
    if has_true:
        cols = cols[:-1]
    if not cols or cols[-1] != "label":
        raise ParseError(path, 1, "missing 'label' column")
    feat_cols = cols[:-1]
    if feat_cols != [f"f{k}" for k in range(len(feat_cols))]:
        raise ParseError(path, 1, "feature columns must be f0..f{d-1}")
    d = len(feat_cols)
    width = len(header)

    ids, feats, given, true, tags = [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(path, lineno, f"expected {width} fields, found {len(row)}")
        try:
            ids.append(int(row[0]))
            feats.append([float(v) for v in row[1:1 + d]])
            given.append(int(row[1 + d]))
            if has_true:
                true.append(int(row[2 + d]))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        if not all(np.isfinite(feats[-1])):
            raise ParseError(path, lineno, "non-finite feature value")
        if has_split:
            if row[-1] not in SPLITS:
                raise ParseError(path, lineno, f"unknown split tag {row[-1]!r}")
            tags.append(row[-1])
        for lab in (given[-1], true[-1] if has_true else 0):
            if lab < 0 or (n_classes is not None and lab >= n_classes):
                raise ParseError(path, lineno, f"label {lab} out of range for C={n_classes}")
    if not ids:
        raise ParseError(path, 2, "no data rows")
    given_arr = np.array(given, dtype=np.int64)
    true_arr = np.array(true, dtype=np.int64) if has_true else None
    if n_classes is None:
        n_classes = int(max(given_arr.max(), true_arr.max() if has_true else 0)) + 1
    try:
        return Dataset(
            ids=np.array(ids, dtype=np.int64),
            features=np.array(feats, dtype=np.float64).reshape(len(ids), d),
            given_labels=given_arr,
            n_classes=n_classes,
            true_labels=true_arr,
            split=np.array(tags, dtype=object) if has_split else None,
        )
    except InvalidInputError as exc:
        raise ParseError(path, 1, str(exc)) from None


def write_noise_manifest(report, path):
    s = report.spec
    lines = [
        f"kind = {s.kind}",
        f"ratio = {s.ratio!r}",
        f"seed = {s.seed}",
        f"n_train = {report.n_train}",
        f"flip_count = {report.flip_count}",
        f"flip_fraction = {report.flip_fraction!r}",
        "flipped_ids = " + ",".join(str(i) for i in report.flipped_ids),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
