"""Feed-forward feature extractor with hand-written backprop, linear heads and
the alternating client update (backbone through the frozen head, then the
trainable heads on fixed features)."""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParseError, ValidationError
from .numerics import RngStream, SgdConfig, sgd_step

log = logging.getLogger(__name__)

CKPT_MAGIC = b"FLGB"
CKPT_VERSION = 1
ACTIVATIONS = ("relu", "identity")


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _act_grad(z, kind):
    return (z > 0).astype(float) if kind == "relu" else np.ones_like(z)


class Backbone:
    """MLP ``f(x, theta)``: ReLU hidden layers and a configurable output activation.

    Parameters are stored as a list of ``(W, b)`` pairs with ``W`` of shape
    ``(fan_in, fan_out)``.
    """

    def __init__(self, layers, output_activation="relu"):
        if output_activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {output_activation!r}")
        self.layers = [(np.array(W, dtype=float), np.array(b, dtype=float)) for W, b in layers]
        for (W, b), (W2, _) in zip(self.layers, self.layers[1:]):
            if W.shape[1] != W2.shape[0]:
                raise DimensionError(f"layer widths {W.shape} -> {W2.shape} do not chain")
        for W, b in self.layers:
            if b.shape != (W.shape[1],):
                raise DimensionError(f"bias {b.shape} does not match weight {W.shape}")
        self.output_activation = output_activation

    @classmethod
    def init(cls, widths, rng: RngStream, output_activation="relu"):
        """He-normal weights, zero biases."""
        if len(widths) < 2:
            raise ValidationError("need at least input and output widths")
        layers = []
        for i, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
            W = rng.child(f"layer{i}").normal(scale=np.sqrt(2.0 / n_in), size=(n_in, n_out))
            layers.append((W, np.zeros(n_out)))
        return cls(layers, output_activation)

    @property
    def widths(self):
        return [self.layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.layers]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[1]

    def copy(self):
        return Backbone([(W.copy(), b.copy()) for W, b in self.layers], self.output_activation)

    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        return [p for pair in self.layers for p in pair]

    def set_params(self, flat):
        self.layers = [(flat[2 * i], flat[2 * i + 1]) for i in range(len(self.layers))]

    def _activation(self, i):
        return self.output_activation if i == len(self.layers) - 1 else "relu"

    def forward(self, X):
        """Return features ``h`` and the cache needed by :meth:`backward`."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.widths[0]:
            raise DimensionError(f"input width {X.shape} does not match backbone input {self.widths[0]}")
        a = X
        cache = []
        for i, (W, b) in enumerate(self.layers):
            z = a @ W + b
            cache.append((a, z))
            a = _act(z, self._activation(i))
        return a, cache

    def transform(self, X):
        return self.forward(X)[0]

    def backward(self, cache, grad_h):
        """Gradients of the loss w.r.t. ``[W0, b0, ...]`` given ``dL/dh``."""
        grads = [None] * (2 * len(self.layers))
        g = grad_h
        for i in range(len(self.layers) - 1, -1, -1):
            a, z = cache[i]
            g = g * _act_grad(z, self._activation(i))
            grads[2 * i] = a.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                g = g @ self.layers[i][0].T
        return grads

    def equals(self, other) -> bool:
        """Byte-level parameter equality."""
        return len(self.layers) == len(other.layers) and all(
            p.shape == q.shape and p.tobytes() == q.tobytes()
            for p, q in zip(self.params(), other.params()))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<BI", CKPT_VERSION, len(self.layers)))
            for W, _ in self.layers:
                fh.write(struct.pack("<II", *W.shape))
            for W, b in self.layers:
                fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, output_activation="relu"):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != CKPT_MAGIC:
            raise ParseError(f"{path}: bad magic {blob[:4]!r}")
        try:
            return cls._parse(blob, path, output_activation)
        except ParseError:
            raise
        except (struct.error, ValueError) as exc:
            raise ParseError(f"{path}: truncated checkpoint ({exc})") from None

    @classmethod
    def _parse(cls, blob, path, output_activation):
        version, n_layers = struct.unpack_from("<BI", blob, 4)
        if version != CKPT_VERSION:
            raise ParseError(f"{path}: unsupported version {version}")
        off = 4 + struct.calcsize("<BI")
        dims = []
        for _ in range(n_layers):
            dims.append(struct.unpack_from("<II", blob, off))
            off += 8
        layers = []
        for n_in, n_out in dims:
            W = np.frombuffer(blob, "<f8", n_in * n_out, off).reshape(n_in, n_out).astype(float)
            off += 8 * n_in * n_out
            b = np.frombuffer(blob, "<f8", n_out, off).astype(float)
            off += 8 * n_out
            layers.append((W, b))
        if off != len(blob):
            raise ParseError(f"{path}: trailing bytes in checkpoint")
        return cls(layers, output_activation)


def logits(h, head):
    return np.asarray(h, dtype=float) @ head


def predict(h, head) -> np.ndarray:
    """Arg-max class; ties go to the lowest index."""
    return np.argmax(logits(h, head), axis=1)


def ce_loss_and_grads(h, head, labels):
    """Mean softmax cross-entropy of ``h @ head``; returns ``(loss, dL/dh, dL/dhead)``."""
    h = np.asarray(h, dtype=float)
    head = np.asarray(head, dtype=float)
    if h.ndim != 2 or h.shape[1] != head.shape[0]:
        raise DimensionError(f"features {h.shape} do not match head {head.shape}")
    labels = np.asarray(labels, dtype=int)
    B = h.shape[0]
    z = h @ head
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(B), labels]))
    p = np.exp(z - logsum[:, None])
    p[np.arange(B), labels] -= 1.0
    g = p / B
    return loss, g @ head.T, h.T @ g


@dataclass
class TrainConfig:
    """Local training knobs shared by the federated methods."""

    sgd: SgdConfig = SgdConfig(learning_rate=0.05, batch_size=32)
    epochs: int = 5
    head_features: str = "post"  # recompute h after the theta step, or reuse "pre"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.head_features not in ("post", "pre"):
            raise ValidationError(f"head_features must be 'post' or 'pre', got {self.head_features!r}")


class _Momentum:
    def __init__(self, params):
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, cfg):
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            p, self.v[i] = sgd_step(p, g, cfg, self.v[i])
            out.append(p)
        return out


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def client_update(backbone: Backbone, aux_head, personal_head, frozen_head, X, y,
                  cfg: TrainConfig, rng: RngStream):
    """Alternating local update.

    For every mini-batch: one step on theta through ``frozen_head`` (the head
    itself gets no update), then with theta fixed one step each on
    ``aux_head`` and ``personal_head``. Returns ``(backbone, aux_head,
    personal_head, mean_loss)`` as fresh objects; inputs are not modified.
    """
    backbone = backbone.copy()
    aux = np.array(aux_head, dtype=float)
    personal = np.array(personal_head, dtype=float)
    if len(y) == 0:
        warnings.warn("client has no local data; skipping update")
        return backbone, aux, personal, float("nan")
    theta_opt = _Momentum(backbone.params())
    aux_opt = _Momentum([aux])
    per_opt = _Momentum([personal])
    losses = []
    for epoch in range(cfg.epochs):
        for idx in _batches(len(y), cfg.sgd.batch_size, rng.child(f"epoch{epoch}")):
            xb, yb = X[idx], y[idx]
            h, cache = backbone.forward(xb)
            loss, g_h, _ = ce_loss_and_grads(h, frozen_head, yb)
            losses.append(loss)
            backbone.set_params(theta_opt.step(backbone.params(), backbone.backward(cache, g_h), cfg.sgd))
            if cfg.head_features == "post":
                h = backbone.transform(xb)
            _, _, g_aux = ce_loss_and_grads(h, aux, yb)
            _, _, g_per = ce_loss_and_grads(h, personal, yb)
            (aux,) = aux_opt.step([aux], [g_aux], cfg.sgd)
            (personal,) = per_opt.step([personal], [g_per], cfg.sgd)
    return backbone, aux, personal, float(np.mean(losses)) if losses else float("nan")


def joint_update(backbone: Backbone, head, X, y, cfg: TrainConfig, rng: RngStream):
    """Plain local SGD on backbone and a trainable head together (FedAvg baseline)."""
    backbone = backbone.copy()
    head = np.array(head, dtype=float)
    if len(y) == 0:
        warnings.warn("client has no local data; skipping update")
        return backbone, head, float("nan")
    opt = _Momentum(backbone.params() + [head])
    losses = []
    for epoch in range(cfg.epochs):
        for idx in _batches(len(y), cfg.sgd.batch_size, rng.child(f"epoch{epoch}")):
            h, cache = backbone.forward(X[idx])
            loss, g_h, g_head = ce_loss_and_grads(h, head, y[idx])
            losses.append(loss)
            new = opt.step(backbone.params() + [head], backbone.backward(cache, g_h) + [g_head], cfg.sgd)
            backbone.set_params(new[:-1])
            head = new[-1]
    return backbone, head, float(np.mean(losses)) if losses else float("nan")


def train_head(backbone: Backbone, head, X, y, sgd: SgdConfig, epochs: int, rng: RngStream):
    """Head-only SGD on frozen features; the backbone is never touched."""
    head = np.array(head, dtype=float)
    if len(y) == 0 or epochs == 0:
        return head
    h_all = backbone.transform(X)
    opt = _Momentum([head])
    for epoch in range(epochs):
        for idx in _batches(len(y), sgd.batch_size, rng.child(f"epoch{epoch}")):
            _, _, g = ce_loss_and_grads(h_all[idx], head, y[idx])
            (head,) = opt.step([head], [g], sgd)
    return head
