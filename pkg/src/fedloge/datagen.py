"""Synthetic long-tailed data and Dirichlet non-IID client partitions."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DegenerateError, ParseError, ValidationError
from .numerics import RngStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 10
    feature_dim: int = 20
    n_max: int = 500
    imbalance_factor: float = 100.0
    class_separation: float = 3.0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.imbalance_factor < 1:
            raise ValidationError(f"imbalance_factor must be >= 1, got {self.imbalance_factor}")
        if self.n_max < self.n_classes:
            raise ValidationError(f"n_max ({self.n_max}) must be >= n_classes ({self.n_classes})")
        if self.class_separation < 0 or self.noise_scale < 0:
            raise ValidationError("class_separation and noise_scale must be non-negative")


@dataclass(frozen=True)
class LabeledSet:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValidationError(f"features {self.X.shape} and labels {self.y.shape} disagree")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValidationError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return int(self.y.shape[0])

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=int)
        return LabeledSet(self.X[idx], self.y[idx], self.n_classes)


@dataclass(frozen=True)
class PartitionPlan:
    counts: np.ndarray  # K x C
    alpha: float

    @property
    def n_clients(self):
        return self.counts.shape[0]

    def proportions(self, k):
        row = self.counts[k].astype(float)
        total = row.sum()
        return row / total if total else row

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["client"] + [f"c{c}" for c in range(self.counts.shape[1])])
            for k, row in enumerate(self.counts):
                w.writerow([k] + [int(v) for v in row])


def longtail_counts(spec: DatasetSpec) -> np.ndarray:
    """Exponential profile ``n_c = round(n_max * IF^(-c/(C-1)))``."""
    C = spec.n_classes
    exponents = np.arange(C) / (C - 1)
    counts = np.rint(spec.n_max * spec.imbalance_factor ** (-exponents)).astype(int)
    if np.any(counts == 0):
        raise DegenerateError(f"class {int(np.argmin(counts))} gets zero samples")
    return counts


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``; sums exactly."""
    weights = np.asarray(weights, dtype=float)
    s = weights.sum()
    if total == 0 or s <= 0:
        return np.zeros(weights.shape, dtype=int)
    quota = weights / s * total
    base = np.floor(quota).astype(int)
    short = total - int(base.sum())
    if short > 0:
        # stable sort keeps the lowest index first among equal remainders
        order = np.argsort(-(quota - base), kind="stable")
        base[order[:short]] += 1
    return base


def class_centers(spec: DatasetSpec, rng: RngStream) -> np.ndarray:
    """``C x feature_dim`` centres on a randomly rotated regular simplex."""
    C, D = spec.n_classes, spec.feature_dim
    if D >= C:
        q, r = np.linalg.qr(rng.normal(size=(D, C)))
        U = q * np.sign(np.diag(r))
        vertices = np.sqrt(C / (C - 1)) * U @ (np.eye(C) - 1.0 / C)
    else:
        v = rng.normal(size=(D, C))
        vertices = v / np.linalg.norm(v, axis=0)
    return spec.class_separation * vertices.T


def make_gaussian_mixture(spec: DatasetSpec, counts, rng: RngStream, centers=None) -> LabeledSet:
    """Isotropic Gaussian blobs with exactly ``counts[c]`` samples of class ``c``.

    Pass the same ``centers`` to draw train and test sets from one mixture.
    """
    counts = np.asarray(counts, dtype=int)
    if counts.shape != (spec.n_classes,) or np.any(counts < 0):
        raise ValidationError(f"counts must be {spec.n_classes} non-negative integers")
    if centers is None:
        centers = class_centers(spec, rng.child("centers"))
    y = np.repeat(np.arange(spec.n_classes), counts)
    noise = rng.child("noise").normal(size=(y.size, spec.feature_dim))
    X = centers[y] + spec.noise_scale * noise
    order = rng.child("shuffle").permutation(y.size)
    return LabeledSet(X[order], y[order], spec.n_classes)


def _draw_plan(class_counts, K, alpha, rng):
    counts = np.zeros((K, class_counts.size), dtype=int)
    for c, n_c in enumerate(class_counts):
        p = rng.dirichlet(np.full(K, float(alpha)))
        counts[:, c] = largest_remainder(p, int(n_c))
    return counts


def dirichlet_partition(data: LabeledSet, K: int, alpha: float, rng: RngStream,
                        max_redraws: int = 10) -> PartitionPlan:
    """Split every class across ``K`` clients with ``Dirichlet(alpha)`` proportions."""
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    class_counts = data.class_counts
    for attempt in range(max_redraws + 1):
        counts = _draw_plan(class_counts, K, alpha, rng.child(f"draw{attempt}"))
        if np.all(counts.sum(axis=1) > 0):
            break
    else:
        empty = np.flatnonzero(counts.sum(axis=1) == 0).tolist()
        warnings.warn(f"clients {empty} received no samples after {max_redraws} redraws")
    return PartitionPlan(counts, float(alpha))


def apply_partition(data: LabeledSet, plan: PartitionPlan, rng: RngStream) -> list[LabeledSet]:
    """Materialise a plan into disjoint per-client sets."""
    out = [[] for _ in range(plan.n_clients)]
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.y == c)
        idx = idx[rng.child(f"class{c}").permutation(idx.size)]
        bounds = np.concatenate([[0], np.cumsum(plan.counts[:, c])])
        if bounds[-1] != idx.size:
            raise ValidationError(f"plan assigns {bounds[-1]} samples of class {c}, data has {idx.size}")
        for k in range(plan.n_clients):
            out[k].append(idx[bounds[k]:bounds[k + 1]])
    return [data.subset(np.sort(np.concatenate(parts))) for parts in out]


def make_local_test(global_test: LabeledSet, plan: PartitionPlan, k: int, rng: RngStream,
                    budget: int = 200) -> LabeledSet:
    """Sample a test set whose class mix matches client ``k``'s training mix."""
    target = largest_remainder(plan.counts[k], budget)
    picked = []
    for c in np.flatnonzero(target):
        pool = np.flatnonzero(global_test.y == c)
        if pool.size < target[c]:
            raise CapacityError(f"class {c}: need {target[c]} test samples, only {pool.size} available")
        picked.append(rng.child(f"class{c}").choice(pool, size=target[c], replace=False))
    idx = np.sort(np.concatenate(picked)) if picked else np.array([], dtype=int)
    return global_test.subset(idx)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def mean_heterogeneity(plan: PartitionPlan) -> float:
    """Mean client-vs-global total-variation distance of class distributions."""
    glob = plan.counts.sum(axis=0) / plan.counts.sum()
    rows = [plan.proportions(k) for k in range(plan.n_clients) if plan.counts[k].sum() > 0]
    return float(np.mean([total_variation(r, glob) for r in rows]))


def load_csv(path, n_classes: int | None = None) -> LabeledSet:
    """Read ``label,f0,f1,...`` rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "label" or any(h != f"f{i}" for i, h in enumerate(header[1:])):
        raise ParseError(f"{path}: header must be label,f0,f1,...", line=1)
    if len(rows) < 2:
        raise ValidationError(f"{path}: no data rows")
    labels, feats = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            labels.append(int(row[0]))
            feats.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from None
    y = np.array(labels, dtype=int)
    X = np.array(feats, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{path}: non-finite feature values")
    C = int(y.max()) + 1 if n_classes is None else n_classes
    if y.min() < 0 or y.max() >= C:
        raise ValidationError(f"{path}: label out of range [0, {C})")
    return LabeledSet(X, y, C)


def save_csv(path, data: LabeledSet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(data.X.shape[1])])
        for x, label in zip(data.X, data.y):
            w.writerow([int(label)] + [repr(float(v)) for v in x])
