"""In-process federation: client sampling, broadcast, local updates and
sample-size-weighted aggregation of the backbone and auxiliary head.

Personal heads live in :class:`ClientState` and never leave the client.
"""
from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datagen import LabeledSet
from .errors import DimensionError, ProtocolError, ValidationError
from .model import Backbone, TrainConfig, client_update, joint_update
from .numerics import RngStream

log = logging.getLogger(__name__)


@dataclass
class ClientState:
    client_id: int
    train: LabeledSet
    test: LabeledSet
    personal: np.ndarray

    @property
    def n_samples(self):
        return len(self.train)


@dataclass
class GlobalState:
    backbone: Backbone
    aux_head: np.ndarray
    round: int = 0


@dataclass(frozen=True)
class FedConfig:
    n_clients: int = 8
    rounds: int = 200
    participation: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_clients < 1 or self.rounds < 1 or self.train.epochs < 1:
            raise ValidationError("n_clients, rounds and epochs must all be >= 1")
        if not 0.0 < self.participation <= 1.0:
            raise ValidationError(f"participation must be in (0, 1], got {self.participation}")


@dataclass
class RoundReport:
    round: int
    train_loss: float
    gm_accuracy: float = float("nan")
    many: float | None = None
    med: float | None = None
    few: float | None = None
    pm_accuracy: float = float("nan")

    FIELDS = ("round", "train_loss", "gm_accuracy", "many", "med", "few", "pm_accuracy")

    def row(self):
        return [_fmt(getattr(self, f)) for f in self.FIELDS]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_round_reports(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RoundReport.FIELDS)
        for r in reports:
            w.writerow(r.row())


def sample_clients(K: int, fraction: float, rng: RngStream) -> np.ndarray:
    """Uniform sample without replacement of ``max(1, round(fraction K))`` ids, sorted."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    m = max(1, int(round(fraction * K)))
    if m >= K:
        return np.arange(K)
    return np.sort(rng.choice(K, size=m, replace=False))


def _weighted_mean(arrays, weights):
    # p0 + sum w_k (p_k - p0): identical inputs reproduce p0 bit-for-bit
    base = arrays[0]
    out = base.copy()
    for a, w in zip(arrays[1:], weights[1:]):
        out += w * (a - base)
    return out


def aggregate(updates):
    """Weighted mean of ``[(backbone, head, n_samples), ...]`` with weights ``n_k / sum n``.

    Reduction follows list order; callers pass updates sorted by client id.
    """
    if not updates:
        raise ProtocolError("cannot aggregate an empty round")
    sizes = np.array([n for _, _, n in updates], dtype=float)
    total = sizes.sum()
    if total <= 0:
        raise ProtocolError("total aggregation weight is zero")
    weights = sizes / total
    ref_shapes = [p.shape for p in updates[0][0].params()]
    for bb, head, _ in updates:
        if [p.shape for p in bb.params()] != ref_shapes or head.shape != updates[0][1].shape:
            raise DimensionError("inconsistent parameter shapes across client updates")
    per_param = zip(*[bb.params() for bb, _, _ in updates])
    flat = [_weighted_mean(list(ps), weights) for ps in per_param]
    backbone = updates[0][0].copy()
    backbone.set_params(flat)
    head = _weighted_mean([h for _, h, _ in updates], weights)
    return backbone, head


def _run_client(state: GlobalState, client: ClientState, frozen_head, cfg: FedConfig, rng):
    X, y = client.train.X, client.train.y
    if frozen_head is None:
        bb, head, loss = joint_update(state.backbone, state.aux_head, X, y, cfg.train, rng)
        return bb, head, client.personal, loss
    return client_update(state.backbone, state.aux_head, client.personal, frozen_head, X, y,
                         cfg.train, rng)


def run_round(state: GlobalState, clients, frozen_head, cfg: FedConfig, rng: RngStream):
    """One communication round; mutates ``state`` and the sampled clients' personal heads."""
    t = state.round + 1
    round_rng = rng.child(f"round{t}")
    selected = sample_clients(len(clients), cfg.participation, round_rng.child("sample"))

    def work(k):
        # every client reads the same broadcast objects; updates return copies
        return _run_client(state, clients[k], frozen_head, cfg, round_rng.child(f"client{k}"))

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {int(k): pool.submit(work, k) for k in selected}
        outcomes = {}
        for k, fut in futures.items():
            try:
                outcomes[k] = fut.result()
            except Exception as exc:  # noqa: BLE001 -- a failed client is dropped, not fatal
                warnings.warn(f"round {t}: client {k} failed ({exc!r}); dropped from aggregation")
    else:
        outcomes = {}
        for k in selected:
            try:
                outcomes[int(k)] = work(k)
            except Exception as exc:  # noqa: BLE001
                warnings.warn(f"round {t}: client {k} failed ({exc!r}); dropped from aggregation")

    updates, losses = [], []
    for k in sorted(outcomes):
        bb, head, personal, loss = outcomes[k]
        client = clients[k]
        if client.n_samples == 0:
            continue
        client.personal = personal
        updates.append((bb, head, client.n_samples))
        losses.append((loss, client.n_samples))
    state.backbone, state.aux_head = aggregate(updates)
    state.round = t
    n = sum(w for _, w in losses)
    return float(sum(l * w for l, w in losses) / n)


def run_stage1(state: GlobalState, clients, frozen_head, cfg: FedConfig, rng: RngStream,
               report_fn=None):
    """Run ``cfg.rounds`` rounds. ``frozen_head=None`` selects the FedAvg baseline
    (aux head trained jointly with the backbone, personal heads untouched).

    ``report_fn(state, clients, report)`` may fill in the evaluation columns.
    Returns the list of :class:`RoundReport`.
    """
    reports = []
    for _ in range(cfg.rounds):
        loss = run_round(state, clients, frozen_head, cfg, rng)
        report = RoundReport(state.round, loss)
        if report_fn is not None:
            report_fn(state, clients, report)
        log.debug("round %d loss %.4f gm %.4f", report.round, loss, report.gm_accuracy)
        reports.append(report)
    return reports
