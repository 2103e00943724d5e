"""Seeded randomness, SGD stepping and a finite-difference gradient oracle.

All arrays are float64. Randomness is always drawn from an :class:`RngStream`,
which maps a ``(seed, label)`` pair to an independent numpy ``Generator`` so
that parallel workers never share state.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ValidationError


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class RngStream:
    """Deterministic random stream identified by ``(seed, label)``.

    The label is hashed with SHA-256 (not Python's salted ``hash``) so the
    same pair reproduces the same draws in every process and platform.
    """

    def __init__(self, seed: int, label: str = "root"):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValidationError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.label = label
        entropy = [seed & 0xFFFFFFFF, seed >> 32, *_label_words(label)]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, name) -> "RngStream":
        """Derive an independent stream; depends only on seed and labels."""
        return RngStream(self.seed, f"{self.label}/{name}")

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label!r})"

    # thin pass-throughs used throughout the package
    def normal(self, *args, **kwargs):
        return self.generator.normal(*args, **kwargs)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, *args, **kwargs):
        return self.generator.choice(*args, **kwargs)

    def dirichlet(self, alpha):
        return self.generator.dirichlet(alpha)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    steps: int = 1
    momentum: float = 0.0
    batch_size: int = 32
    weight_decay: float = 0.0

    def __post_init__(self):
        # lr == 0 is allowed: the "frozen run" examples need it
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")


def check_finite(a, what="array"):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains non-finite values")
    return a


def orthonormal_columns(d: int, C: int, rng: RngStream) -> np.ndarray:
    """Random ``d x C`` matrix ``U`` with ``U.T @ U = I``."""
    if C < 2 or d < C:
        raise DimensionError(f"need d >= C >= 2, got d={d}, C={C}")
    a = rng.normal(size=(d, C))
    q, r = np.linalg.qr(a)
    # fix the sign ambiguity of QR so U is a function of the draw alone
    q = q * np.sign(np.diag(r))
    return q


def sgd_step(params, grads, cfg: SgdConfig, velocity):
    """One (heavy-ball) SGD step: ``v <- m v + g``, ``p <- p - lr v``.

    A non-zero ``cfg.weight_decay`` adds ``wd * p`` to the gradient first.

    Returns new ``(params, velocity)``; inputs are not modified.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if params.shape != grads.shape or params.shape != velocity.shape:
        raise DimensionError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, velocity {velocity.shape}")
    if cfg.weight_decay:
        grads = grads + cfg.weight_decay * params
    if cfg.momentum == 0.0:
        return params - cfg.learning_rate * grads, grads.copy()
    velocity = cfg.momentum * velocity + grads
    return params - cfg.learning_rate * velocity, velocity


def finite_diff_grad(loss_fn, point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if h <= 0:
        raise ValidationError(f"h must be positive, got {h}")
    x = np.array(point, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn(x))
        flat[i] = orig - h
        fm = float(loss_fn(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite loss when probing entry {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
