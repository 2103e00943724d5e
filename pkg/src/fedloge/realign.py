"""Norm-based classifier realignment of the global and personal heads."""
from __future__ import annotations

import warnings

import numpy as np

from .datagen import LabeledSet
from .errors import DegenerateError, DimensionError
from .model import Backbone, train_head
from .numerics import RngStream, SgdConfig


def _column_norms(head, what):
    norms = np.linalg.norm(head, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateError(f"{what}: class {int(zero[0])} has a zero-norm weight vector")
    return norms


def ga_fr(psi) -> np.ndarray:
    """Rescale every class vector of the global head to unit length."""
    psi = np.asarray(psi, dtype=float)
    return psi / _column_norms(psi, "global head")


def la_fr(psi, phi, direction="normalized") -> np.ndarray:
    """Personal head with the global head's directions and the personal head's norms.

    ``direction="raw"`` multiplies the unnormalised global vectors instead, so
    the output norm becomes ``||psi_c|| * ||phi_c||``. Classes whose personal
    vector is zero stay zero.
    """
    psi = np.asarray(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if psi.shape != phi.shape:
        raise DimensionError(f"global head {psi.shape} and personal head {phi.shape} differ")
    if direction == "normalized":
        base = ga_fr(psi)
    elif direction == "raw":
        _column_norms(psi, "global head")
        base = psi
    else:
        raise ValueError(f"direction must be 'normalized' or 'raw', got {direction!r}")
    return base * np.linalg.norm(phi, axis=0)


def local_finetune(backbone: Backbone, head, local: LabeledSet, epochs: int, sgd: SgdConfig,
                   rng: RngStream) -> np.ndarray:
    """Head-only SGD on a client's own data; the backbone stays frozen."""
    head = np.asarray(head, dtype=float)
    if len(local) == 0:
        warnings.warn("empty local set; head returned unchanged")
        return head.copy()
    return train_head(backbone, head, local.X, local.y, sgd, epochs, rng)
