"""Global / personalised accuracy, many-med-few breakdown, the feature
degeneration probe and the feature-pruning sweep."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .datagen import LabeledSet
from .errors import ValidationError
from .model import predict
from .ssec import SparseMask


def class_split(train_counts, thresholds=(0.75, 0.95)):
    """Bucket classes by cumulative share of training samples.

    Classes are sorted by count (descending, lower index first on ties); a
    class joins the first bucket whose threshold its running share has not
    yet passed before it is added.
    """
    t1, t2 = thresholds
    if not 0.0 < t1 < t2 < 1.0:
        raise ValidationError(f"thresholds must satisfy 0 < t1 < t2 < 1, got {thresholds}")
    counts = np.asarray(train_counts, dtype=float)
    order = np.argsort(-counts, kind="stable")
    share_before = np.concatenate([[0.0], np.cumsum(counts[order])[:-1]]) / counts.sum()
    split = {"many": [], "med": [], "few": []}
    for c, before in zip(order, share_before):
        key = "many" if before < t1 else "med" if before < t2 else "few"
        split[key].append(int(c))
    return split


@dataclass
class MetricsReport:
    gm_accuracy: float
    per_class: np.ndarray
    many: float | None = None
    med: float | None = None
    few: float | None = None
    pm_accuracy: float | None = None

    def as_dict(self):
        return {"gm_accuracy": self.gm_accuracy, "many": self.many, "med": self.med,
                "few": self.few, "pm_accuracy": self.pm_accuracy}


def accuracy(backbone, head, data: LabeledSet) -> float:
    if len(data) == 0:
        raise ValidationError("accuracy of an empty set is undefined")
    return float(np.mean(predict(backbone.transform(data.X), head) == data.y))


def evaluate_gm(backbone, head, test: LabeledSet, split=None) -> MetricsReport:
    pred = predict(backbone.transform(test.X), head)
    correct = pred == test.y
    counts = test.class_counts
    per_class = np.full(test.n_classes, np.nan)
    hit = np.bincount(test.y, weights=correct, minlength=test.n_classes)
    present = counts > 0
    per_class[present] = hit[present] / counts[present]
    report = MetricsReport(float(np.mean(correct)), per_class)
    if split is not None:
        for name in ("many", "med", "few"):
            members = np.asarray(split[name], dtype=int)
            sel = np.isin(test.y, members)
            # absent bucket stays None rather than reading as zero accuracy
            setattr(report, name, float(np.mean(correct[sel])) if sel.any() else None)
    return report


def evaluate_pm(backbone, heads, tests) -> float:
    """Unweighted mean of per-client test accuracies (``heads[k]`` on ``tests[k]``)."""
    if len(heads) != len(tests):
        raise ValidationError(f"{len(heads)} heads for {len(tests)} test sets")
    accs = []
    for k, (head, test) in enumerate(zip(heads, tests)):
        if len(test) == 0:
            warnings.warn(f"client {k} has an empty local test set; excluded from PM")
            continue
        accs.append(accuracy(backbone, head, test))
    if not accs:
        raise ValidationError("no client has a non-empty test set")
    return float(np.mean(accs))


@dataclass
class DegenerationProfile:
    klass: int
    mean: np.ndarray  # sorted, non-increasing
    variance: np.ndarray  # aligned with mean
    order: np.ndarray  # order[r] = feature index at rank r
    masked: np.ndarray = field(default=None)  # aligned with mean; True = masked position

    @property
    def relative_variance(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.variance / np.abs(self.mean)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature_rank", "feature", "mean", "variance", "relative_variance", "masked_flag"])
            rel = self.relative_variance
            for r in range(self.mean.size):
                flag = "" if self.masked is None else int(self.masked[r])
                w.writerow([r, int(self.order[r]), repr(float(self.mean[r])),
                            repr(float(self.variance[r])), repr(float(rel[r])), flag])


def degeneration_profile(backbone, test: LabeledSet, klass: int, mask: SparseMask | None = None):
    """Per-feature mean/variance of class-``klass`` features, sorted by mean (descending)."""
    sel = test.y == klass
    if not sel.any():
        raise ValidationError(f"test set has no samples of class {klass}")
    H = backbone.transform(test.X[sel])
    mu = H.mean(axis=0)
    var = H.var(axis=0)
    order = np.argsort(-mu, kind="stable")
    masked = None if mask is None else ~mask.mask[order, klass]
    return DegenerationProfile(klass, mu[order], var[order], order, masked)


def masked_vs_dominant_variance(profile: DegenerationProfile):
    """Mean variance over masked positions and over the top-quartile unmasked ones."""
    if profile.masked is None:
        raise ValidationError("profile carries no mask")
    var_masked = profile.variance[profile.masked]
    unmasked = profile.variance[~profile.masked]  # still in descending-mean order
    top = unmasked[:max(1, unmasked.size // 4)]
    return float(var_masked.mean()), float(top.mean())


def feature_order(backbone, data: LabeledSet, order="ascending_mean"):
    """Global feature ranking by ``|class mean|`` averaged over classes."""
    if order not in ("ascending_mean", "descending_mean"):
        raise ValidationError(f"unknown order {order!r}")
    H = backbone.transform(data.X)
    classes = np.unique(data.y)
    score = np.mean([np.abs(H[data.y == c].mean(axis=0)) for c in classes], axis=0)
    idx = np.argsort(score, kind="stable")
    return idx if order == "ascending_mean" else idx[::-1].copy()


def pruning_sweep(backbone, head, test: LabeledSet, order="ascending_mean", ratios=None):
    """GM accuracy after zeroing the head rows of the first ``r d`` ranked features."""
    ratios = np.linspace(0, 1, 11) if ratios is None else np.asarray(ratios, dtype=float)
    if np.any(ratios < 0) or np.any(ratios > 1) or np.any(np.diff(ratios) < 0):
        raise ValidationError("ratios must be increasing values in [0, 1]")
    ranked = feature_order(backbone, test, order)
    H = backbone.transform(test.X)
    d = head.shape[0]
    curve = []
    for r in ratios:
        pruned = np.array(head, dtype=float)
        pruned[ranked[:int(round(r * d))]] = 0.0
        curve.append(float(np.mean(predict(H, pruned) == test.y)))
    return ratios, np.array(curve)


def write_pruning_csv(path, curves):
    """``curves`` maps order name to ``(ratios, accuracies)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ratio", "order", "accuracy"])
        for name, (ratios, acc) in curves.items():
            for r, a in zip(ratios, acc):
                w.writerow([repr(float(r)), name, repr(float(a))])
