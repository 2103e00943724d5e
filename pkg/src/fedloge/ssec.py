"""Static sparse ETF classifier (SSE-C) construction.

A classifier head is a ``d x C`` float array whose columns are the per-class
weight vectors. The SSE-C starts from a simplex ETF, has a fixed fraction of
its entries hard-zeroed by a :class:`SparseMask`, and is then optimised so
that the surviving columns again have equal norm and a large minimum
pairwise angle.
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, DimensionError, NumericError, ParseError, ValidationError
from .numerics import RngStream, SgdConfig, check_finite, orthonormal_columns, sgd_step

log = logging.getLogger(__name__)

HEAD_MAGIC = b"SSEC"
HEAD_VERSION = 1


@dataclass(frozen=True)
class SparseMask:
    """Binary ``d x C`` indicator; ``True`` marks a trainable (kept) entry."""

    mask: np.ndarray
    beta: float

    @property
    def shape(self):
        return self.mask.shape

    @classmethod
    def dense(cls, d, C):
        return cls(np.ones((d, C), dtype=bool), 0.0)


@dataclass(frozen=True)
class SsecConfig:
    """Construction settings.

    Defaults: target norm 1.0, 60% sparsity, 10,000 steps at lr 1e-4. Plain
    SGD at that rate cannot close the initial norm gap in 10k steps, so the
    builder uses heavy-ball momentum 0.9 by default.
    """

    gamma: float = 1.0
    beta: float = 0.6
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(learning_rate=1e-4, steps=10_000,
                                                              momentum=0.9))
    eps: float = 1e-7
    angle_weight: float = 1.0
    log_every: int = 100

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.beta < 1.0:
            raise ValidationError(f"beta must be in [0, 1), got {self.beta}")
        if not 0.0 < self.eps < 1.0:
            raise ValidationError(f"eps must be in (0, 1), got {self.eps}")


@dataclass(frozen=True)
class EtfDiagnostics:
    norm_mean: float
    norm_var: float
    angle_mean_deg: float
    angle_var_deg: float
    min_angle_deg: float

    def as_dict(self):
        return {
            "norm_mean": self.norm_mean,
            "norm_var": self.norm_var,
            "angle_mean_deg": self.angle_mean_deg,
            "angle_var_deg": self.angle_var_deg,
            "min_angle_deg": self.min_angle_deg,
        }


def make_dense_etf(d: int, C: int, rng: RngStream) -> np.ndarray:
    """Simplex ETF ``sqrt(C/(C-1)) U (I - 11^T/C)`` with a random rotation ``U``."""
    U = orthonormal_columns(d, C, rng)
    centering = np.eye(C) - np.full((C, C), 1.0 / C)
    return np.sqrt(C / (C - 1)) * U @ centering


def make_mask(d: int, C: int, beta: float, rng: RngStream) -> SparseMask:
    """Per-column exact-count mask: each column keeps ``round((1-beta) d)`` entries."""
    if not 0.0 <= beta < 1.0:
        raise ValidationError(f"beta must be in [0, 1), got {beta}")
    keep = int(round((1.0 - beta) * d))
    if keep < 1:
        raise DegenerateError(f"beta={beta} with d={d} would zero every entry of a column")
    mask = np.zeros((d, C), dtype=bool)
    for c in range(C):
        rows = rng.choice(d, size=keep, replace=False)
        mask[rows, c] = True
    return SparseMask(mask, float(beta))


def _check_shapes(psi, S):
    if psi.ndim != 2 or psi.shape != S.shape:
        raise DimensionError(f"head shape {psi.shape} does not match mask shape {S.shape}")


def norm_loss(psi, gamma: float, S: SparseMask) -> float:
    """Sum over classes of ``(||psi_c * S_c|| - gamma)^2``."""
    psi = np.asarray(psi, dtype=float)
    _check_shapes(psi, S)
    norms = np.linalg.norm(psi * S.mask, axis=0)
    return float(np.sum((norms - gamma) ** 2))


def _unit_columns(W):
    norms = np.linalg.norm(W, axis=0)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DegenerateError(f"class column {int(bad[0])} has zero norm")
    return W / norms, norms


def _max_cosines(Wn):
    G = Wn.T @ Wn
    np.fill_diagonal(G, -np.inf)
    partner = np.argmax(G, axis=1)  # first index wins on ties
    return G[np.arange(G.shape[0]), partner], partner


def angle_loss(psi, S: SparseMask, eps: float = 1e-7) -> float:
    """Minus the mean, over classes, of the angle to the nearest other class."""
    psi = np.asarray(psi, dtype=float)
    _check_shapes(psi, S)
    Wn, _ = _unit_columns(psi * S.mask)
    m, _ = _max_cosines(Wn)
    m = np.clip(m, -1.0 + eps, 1.0 - eps)
    return float(-np.mean(np.arccos(m)))


def ssec_loss(psi, cfg: SsecConfig, S: SparseMask) -> float:
    return norm_loss(psi, cfg.gamma, S) + cfg.angle_weight * angle_loss(psi, S, cfg.eps)


def _loss_and_grad(psi, cfg: SsecConfig, S: SparseMask):
    W = psi * S.mask
    C = W.shape[1]
    Wn, norms = _unit_columns(W)

    lnorm = float(np.sum((norms - cfg.gamma) ** 2))
    g_norm = Wn * (2.0 * (norms - cfg.gamma))

    m, partner = _max_cosines(Wn)
    inside = (m > -1.0 + cfg.eps) & (m < 1.0 - cfg.eps)
    mc = np.clip(m, -1.0 + cfg.eps, 1.0 - cfg.eps)
    langle = float(-np.mean(np.arccos(mc)))

    # d(-arccos(m)/C)/dm = 1 / (C sqrt(1 - m^2)); zero outside the clamp window
    coef = np.where(inside, 1.0 / (C * np.sqrt(1.0 - mc ** 2)), 0.0)
    g_unit = np.zeros_like(Wn)
    g_unit += Wn[:, partner] * coef
    np.add.at(g_unit.T, partner, (Wn * coef).T)
    # back through w -> w / ||w||
    radial = np.sum(g_unit * Wn, axis=0)
    g_angle = (g_unit - Wn * radial) / norms

    loss = lnorm + cfg.angle_weight * langle
    grad = (g_norm + cfg.angle_weight * g_angle) * S.mask
    return loss, grad


def ssec_grad(psi, cfg: SsecConfig, S: SparseMask) -> np.ndarray:
    """Analytic (sub)gradient of :func:`ssec_loss`; masked entries are exactly 0."""
    psi = np.asarray(psi, dtype=float)
    _check_shapes(psi, S)
    return _loss_and_grad(psi, cfg, S)[1]


def diagnostics(psi, S: SparseMask | None = None) -> EtfDiagnostics:
    """Population statistics of column norms and all pairwise angles (degrees)."""
    psi = np.asarray(psi, dtype=float)
    W = psi if S is None else psi * S.mask
    Wn, norms = _unit_columns(W)
    C = W.shape[1]
    cos = np.clip(Wn.T @ Wn, -1.0, 1.0)
    iu = np.triu_indices(C, k=1)
    angles = np.degrees(np.arccos(cos[iu]))
    return EtfDiagnostics(
        norm_mean=float(np.mean(norms)),
        norm_var=float(np.var(norms)),
        angle_mean_deg=float(np.mean(angles)),
        angle_var_deg=float(np.var(angles)),
        min_angle_deg=float(np.min(angles)),
    )


@dataclass
class SsecResult:
    weights: np.ndarray
    mask: SparseMask
    diagnostics: EtfDiagnostics
    loss_history: list = field(default_factory=list)


def build_ssec(cfg: SsecConfig, d: int, C: int, rng: RngStream, init=None) -> SsecResult:
    """Optimise a sparse ETF head.

    ``init`` optionally replaces the dense ETF starting point (any ``d x C``
    array); masking and optimisation are unchanged.
    """
    if init is None:
        psi = make_dense_etf(d, C, rng.child("etf"))
    else:
        psi = np.array(init, dtype=float)
        if psi.shape != (d, C):
            raise DimensionError(f"init shape {psi.shape} != {(d, C)}")
    S = make_mask(d, C, cfg.beta, rng.child("mask"))
    psi = psi * S.mask
    velocity = np.zeros_like(psi)
    history = []
    for step in range(cfg.sgd.steps):
        loss, grad = _loss_and_grad(psi, cfg, S)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite SSE-C loss at step {step}")
        if cfg.log_every and step % cfg.log_every == 0:
            history.append((step, loss))
        psi, velocity = sgd_step(psi, grad, cfg.sgd, velocity)
    # masked entries never receive gradient, but keep them exactly zero regardless
    psi = np.where(S.mask, psi, 0.0)
    history.append((cfg.sgd.steps, ssec_loss(psi, cfg, S)))
    diag = diagnostics(psi, S)
    log.info("SSE-C built: %s", diag)
    return SsecResult(psi, S, diag, history)


# --- head I/O -------------------------------------------------------------

def save_head(path, weights, mask: SparseMask | None = None):
    """Write ``SSEC`` binary: magic, version byte, d, C (uint32), float64 data, mask bits."""
    weights = np.ascontiguousarray(weights, dtype="<f8")
    d, C = weights.shape
    bits = np.ones((d, C), dtype=bool) if mask is None else mask.mask
    with open(path, "wb") as fh:
        fh.write(HEAD_MAGIC)
        fh.write(struct.pack("<BII", HEAD_VERSION, d, C))
        fh.write(weights.tobytes(order="C"))
        fh.write(np.packbits(bits.reshape(-1)).tobytes())


def load_head(path):
    """Inverse of :func:`save_head`; returns ``(weights, mask)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != HEAD_MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, d, C = struct.unpack_from("<BII", blob, 4)
    except struct.error:
        raise ParseError(f"{path}: truncated header") from None
    if version != HEAD_VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    off = 4 + struct.calcsize("<BII")
    n = d * C
    nbytes = (n + 7) // 8
    if len(blob) != off + 8 * n + nbytes:
        raise ParseError(f"{path}: truncated or oversized file")
    weights = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(d, C).astype(float)
    off += 8 * n
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=off))[:n].astype(bool)
    mask = bits.reshape(d, C)
    beta = 1.0 - mask.sum() / n
    return weights, SparseMask(mask, float(beta))


def save_head_csv(path, weights, mask: SparseMask | None = None):
    d, C = weights.shape
    bits = np.ones((d, C), dtype=bool) if mask is None else mask.mask
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "class", "weight", "mask"])
        for i in range(d):
            for c in range(C):
                w.writerow([i, c, repr(float(weights[i, c])), int(bits[i, c])])


def load_head_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["feature", "class", "weight", "mask"]:
            raise ParseError(f"{path}: unexpected header {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), int(row[3])))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
    if not rows:
        raise ValidationError(f"{path}: no head entries")
    d = max(r[0] for r in rows) + 1
    C = max(r[1] for r in rows) + 1
    weights = np.zeros((d, C))
    mask = np.zeros((d, C), dtype=bool)
    for i, c, v, m in rows:
        weights[i, c] = v
        mask[i, c] = bool(m)
    return check_finite(weights, "head"), SparseMask(mask, float(1.0 - mask.mean()))
