"""scikit-learn compatible front-ends.

``FedLoGeClassifier`` simulates the whole federation inside ``fit``: the
training set is either split across clients by a Dirichlet partition or by a
user-supplied ``groups`` vector of client ids. ``predict`` uses the realigned
global head, ``predict_local`` a client's personal head.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import datagen
from .federation import ClientState, FedConfig
from .model import TrainConfig, logits
from .numerics import RngStream, SgdConfig
from .pipeline import METHODS, DataConfig, ExperimentConfig, ModelConfig, RealignConfig, train
from .ssec import SsecConfig, build_ssec


class SparseETFHead(BaseEstimator):
    """Builds a static sparse ETF head of shape ``(feature_dim, n_classes)``.

    ``fit`` ignores data beyond reading the class count from ``y`` when
    ``n_classes`` is None.
    """

    def __init__(self, feature_dim=64, n_classes=None, gamma=1.0, beta=0.6, steps=10_000,
                 learning_rate=1e-4, momentum=0.9, random_state=0):
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.gamma = gamma
        self.beta = beta
        self.steps = steps
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.random_state = random_state

    def fit(self, X=None, y=None):
        C = self.n_classes if self.n_classes is not None else len(np.unique(y))
        cfg = SsecConfig(gamma=self.gamma, beta=self.beta,
                         sgd=SgdConfig(learning_rate=self.learning_rate, steps=self.steps,
                                       momentum=self.momentum))
        res = build_ssec(cfg, self.feature_dim, C, RngStream(self.random_state).child("ssec"))
        self.weights_ = res.weights
        self.mask_ = res.mask
        self.diagnostics_ = res.diagnostics
        return self


class FedLoGeClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Federated long-tailed classifier with SSE-C training and norm realignment.

    Parameters mirror the experiment config; ``method`` selects ``fedloge``,
    ``fedavg`` or ``dense_etf_frozen``.
    """

    def __init__(self, method="fedloge", n_clients=8, alpha=0.5, rounds=200, local_epochs=5,
                 participation=1.0, learning_rate=0.05, batch_size=32, momentum=0.0,
                 hidden=(64, 64), feature_dim=64, output_activation="relu",
                 gamma=1.0, beta=0.6, ssec_steps=10_000, ssec_learning_rate=1e-4,
                 finetune_epochs=15, finetune_learning_rate=0.05, direction="normalized",
                 workers=1, random_state=0):
        self.method = method
        self.n_clients = n_clients
        self.alpha = alpha
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.participation = participation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.hidden = hidden
        self.feature_dim = feature_dim
        self.output_activation = output_activation
        self.gamma = gamma
        self.beta = beta
        self.ssec_steps = ssec_steps
        self.ssec_learning_rate = ssec_learning_rate
        self.finetune_epochs = finetune_epochs
        self.finetune_learning_rate = finetune_learning_rate
        self.direction = direction
        self.workers = workers
        self.random_state = random_state

    def _config(self, n_classes, n_clients):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        sgd = SgdConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                        momentum=self.momentum)
        return ExperimentConfig(
            method=self.method, seed=self.random_state,
            data=DataConfig(datagen.DatasetSpec(n_classes=n_classes, n_max=max(n_classes, 1)),
                            alpha=self.alpha),
            model=ModelConfig(tuple(self.hidden), self.feature_dim, self.output_activation),
            fed=FedConfig(n_clients=n_clients, rounds=self.rounds, participation=self.participation,
                          train=TrainConfig(sgd, epochs=self.local_epochs), seed=self.random_state,
                          workers=self.workers),
            ssec=SsecConfig(gamma=self.gamma, beta=self.beta,
                            sgd=SgdConfig(learning_rate=self.ssec_learning_rate, steps=self.ssec_steps,
                                          momentum=0.9)),
            realign=RealignConfig(self.finetune_epochs,
                                  SgdConfig(learning_rate=self.finetune_learning_rate,
                                            batch_size=self.batch_size),
                                  self.direction),
            eval_every=0)

    def fit(self, X, y, groups=None):
        """Train the federation.

        ``groups`` (optional) assigns each sample to a client id in
        ``[0, n_groups)``; without it the data is Dirichlet-partitioned into
        ``n_clients`` clients.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        C = len(self.classes_)
        if C < 2:
            raise ValueError("need at least two classes")
        if self.feature_dim < C:
            raise ValueError(f"feature_dim ({self.feature_dim}) must be >= number of classes ({C})")
        yi = self.label_encoder_.transform(y)
        data = datagen.LabeledSet(X, yi, C)
        rng = RngStream(self.random_state)
        if groups is None:
            plan = datagen.dirichlet_partition(data, self.n_clients, self.alpha, rng.child("partition"))
            parts = datagen.apply_partition(data, plan, rng.child("assign"))
        else:
            groups = np.asarray(groups, dtype=int)
            if groups.shape != yi.shape or groups.min() < 0:
                raise ValueError("groups must be one non-negative client id per sample")
            parts = [data.subset(np.flatnonzero(groups == k)) for k in range(groups.max() + 1)]
        empty = datagen.LabeledSet(np.zeros((0, X.shape[1])), np.zeros(0, dtype=int), C)
        clients = [ClientState(k, p, empty, np.zeros((self.feature_dim, C))) for k, p in enumerate(parts)]
        cfg = self._config(C, len(clients))
        self.n_features_in_ = X.shape[1]
        tr = train(cfg, clients, X.shape[1], rng)
        self.backbone_ = tr.backbone
        self.frozen_head_ = tr.frozen_head
        self.mask_ = tr.mask
        self.aux_head_ = tr.aux_head
        self.global_head_ = tr.global_head
        self.personal_heads_ = tr.finetuned if tr.finetuned else [tr.aux_head] * len(clients)
        self.round_reports_ = tr.rounds
        self.client_class_counts_ = np.array([p.class_counts for p in parts])
        return self

    def _features(self, X):
        check_is_fitted(self, "backbone_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.backbone_.transform(X)

    def transform(self, X):
        """Backbone features ``f(X, theta)``."""
        return self._features(X)

    def decision_function(self, X):
        h = self._features(X)
        return logits(h, self.global_head_)

    def predict(self, X):
        z = self.decision_function(X)
        return self.classes_[np.argmax(z, axis=1)]

    def predict_local(self, X, client):
        """Predict with client ``client``'s personal head."""
        h = self._features(X)
        return self.classes_[np.argmax(logits(h, self.personal_heads_[client]), axis=1)]
