"""End-to-end experiment: data, partition, stage-1 federation, realignment,
local finetuning and evaluation, all driven from one seed."""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import datagen, evalkit
from .errors import StageError, ValidationError
from .federation import ClientState, FedConfig, GlobalState, RoundReport, run_stage1
from .model import Backbone
from .numerics import RngStream, SgdConfig
from .realign import ga_fr, la_fr, local_finetune
from .ssec import SparseMask, SsecConfig, build_ssec, make_dense_etf

log = logging.getLogger(__name__)

METHODS = ("fedloge", "fedavg", "dense_etf_frozen")


@contextmanager
def stage(name):
    """Re-raise failures as :class:`StageError` naming the stage (validation errors pass through)."""
    try:
        yield
    except (StageError, ValidationError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class DataConfig:
    spec: datagen.DatasetSpec = field(default_factory=datagen.DatasetSpec)
    test_per_class: int = 250
    local_test_budget: int = 200
    alpha: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (64, 64)
    feature_dim: int = 64
    output_activation: str = "relu"


@dataclass(frozen=True)
class RealignConfig:
    finetune_epochs: int = 15
    finetune_sgd: SgdConfig = field(default_factory=lambda: SgdConfig(learning_rate=0.05, batch_size=32))
    direction: str = "normalized"


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "fedloge"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    ssec: SsecConfig = field(default_factory=SsecConfig)
    realign: RealignConfig = field(default_factory=RealignConfig)
    eval_every: int = 1


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    backbone: Backbone
    rounds: list
    metrics: dict
    split: dict
    train: datagen.LabeledSet
    test: datagen.LabeledSet
    clients: list
    plan: datagen.PartitionPlan
    heads: dict = field(default_factory=dict)
    personal_heads: dict = field(default_factory=dict)
    mask: SparseMask | None = None
    ssec_diagnostics: object = None


@dataclass
class Setup:
    train: datagen.LabeledSet
    test: datagen.LabeledSet
    plan: datagen.PartitionPlan
    clients: list
    split: dict


def build_data(cfg: ExperimentConfig, rng: RngStream) -> Setup:
    spec = cfg.data.spec
    counts = datagen.longtail_counts(spec)
    centers = datagen.class_centers(spec, rng.child("centers"))
    train = datagen.make_gaussian_mixture(spec, counts, rng.child("train"), centers)
    test = datagen.make_gaussian_mixture(spec, np.full(spec.n_classes, cfg.data.test_per_class),
                                         rng.child("test"), centers)
    plan = datagen.dirichlet_partition(train, cfg.fed.n_clients, cfg.data.alpha, rng.child("partition"))
    parts = datagen.apply_partition(train, plan, rng.child("assign"))
    d, C = cfg.model.feature_dim, spec.n_classes
    clients = []
    for k, part in enumerate(parts):
        local_test = datagen.make_local_test(test, plan, k, rng.child(f"localtest{k}"),
                                             cfg.data.local_test_budget)
        clients.append(ClientState(k, part, local_test, np.zeros((d, C))))
    return Setup(train, test, plan, clients, evalkit.class_split(counts))


def frozen_head_for(cfg: ExperimentConfig, rng: RngStream):
    """Frozen classifier for the chosen method: ``(head, mask, diagnostics)``."""
    d, C = cfg.model.feature_dim, cfg.data.spec.n_classes
    if cfg.method == "fedloge":
        res = build_ssec(cfg.ssec, d, C, rng.child("ssec"))
        return res.weights, res.mask, res.diagnostics
    if cfg.method == "dense_etf_frozen":
        return cfg.ssec.gamma * make_dense_etf(d, C, rng.child("ssec").child("etf")), None, None
    if cfg.method == "fedavg":
        return None, None, None
    raise ValueError(f"unknown method {cfg.method!r}")


def _stage1_reporter(cfg, setup, frozen_head):
    def report(state: GlobalState, clients, rep: RoundReport):
        if cfg.eval_every <= 0 or state.round % cfg.eval_every:
            return
        head = state.aux_head if frozen_head is None else frozen_head
        m = evalkit.evaluate_gm(state.backbone, head, setup.test, setup.split)
        rep.gm_accuracy, rep.many, rep.med, rep.few = m.gm_accuracy, m.many, m.med, m.few
        heads = [state.aux_head if frozen_head is None else c.personal for c in clients]
        rep.pm_accuracy = evalkit.evaluate_pm(state.backbone, heads, [c.test for c in clients])
    return report


def _gm(backbone, head, setup, prefix):
    m = evalkit.evaluate_gm(backbone, head, setup.test, setup.split)
    return {f"{prefix}_accuracy": m.gm_accuracy, f"{prefix}_many": m.many,
            f"{prefix}_med": m.med, f"{prefix}_few": m.few}


@dataclass
class Trained:
    """Everything stage 1 and realignment produce for one method."""

    backbone: Backbone
    aux_head: np.ndarray
    rounds: list
    frozen_head: np.ndarray | None = None
    mask: SparseMask | None = None
    ssec_diagnostics: object = None
    realigned_head: np.ndarray | None = None
    personal: list = field(default_factory=list)
    la_fr: list = field(default_factory=list)
    finetuned: list = field(default_factory=list)

    @property
    def global_head(self):
        return self.aux_head if self.realigned_head is None else self.realigned_head


def train(cfg: ExperimentConfig, clients, input_dim: int, rng: RngStream, report_fn=None) -> Trained:
    """Stage 1 federation followed by GA-FR, LA-FR and local finetuning.

    ``clients`` are :class:`ClientState` objects; their personal heads are
    updated in place during stage 1.
    """
    if cfg.method not in METHODS:
        raise ValueError(f"unknown method {cfg.method!r}")
    d, C = cfg.model.feature_dim, cfg.data.spec.n_classes
    widths = [input_dim, *cfg.model.hidden, d]
    backbone = Backbone.init(widths, rng.child("backbone"), cfg.model.output_activation)
    with stage("ssec"):
        frozen, mask, diag = frozen_head_for(cfg, rng)
    state = GlobalState(backbone, np.zeros((d, C)))
    reporter = report_fn(frozen) if report_fn is not None else None
    with stage("stage1"):
        rounds = run_stage1(state, clients, frozen, cfg.fed, rng.child("fed"), reporter)
    out = Trained(state.backbone, state.aux_head, rounds, frozen, mask, diag)
    if frozen is None:
        return out
    with stage("realign"):
        out.realigned_head = ga_fr(state.aux_head)
        out.personal = [c.personal for c in clients]
        out.la_fr = [la_fr(state.aux_head, p, cfg.realign.direction) for p in out.personal]
    with stage("finetune"):
        out.finetuned = [
            local_finetune(state.backbone, h, c.train, cfg.realign.finetune_epochs,
                           cfg.realign.finetune_sgd, rng.child(f"finetune{c.client_id}"))
            for h, c in zip(out.la_fr, clients)]
    return out


def run(cfg: ExperimentConfig) -> ExperimentResult:
    rng = RngStream(cfg.seed)
    with stage("data"):
        setup = build_data(cfg, rng.child("data"))
    tr = train(cfg, setup.clients, cfg.data.spec.feature_dim, rng,
               lambda frozen: _stage1_reporter(cfg, setup, frozen))
    bb, psi = tr.backbone, tr.aux_head
    tests = [c.test for c in setup.clients]
    metrics = {"final_train_loss": tr.rounds[-1].train_loss}
    heads = {"aux_global": psi}
    personal = {}

    with stage("evaluate"):
        metrics.update(_evaluate(tr, setup, tests))
        if tr.frozen_head is not None:
            heads["frozen"] = tr.frozen_head
            heads["realigned"] = tr.realigned_head
            personal = {"personal": tr.personal, "la_fr": tr.la_fr, "finetuned": tr.finetuned}

    return ExperimentResult(cfg, bb, tr.rounds, metrics, setup.split, setup.train, setup.test,
                            setup.clients, setup.plan, heads, personal, tr.mask, tr.ssec_diagnostics)


def _evaluate(tr: Trained, setup: Setup, tests):
    bb, psi = tr.backbone, tr.aux_head
    metrics = {}
    if tr.frozen_head is None:
        metrics.update(_gm(bb, psi, setup, "gm"))
        metrics["pm_accuracy"] = evalkit.evaluate_pm(bb, [psi] * len(tests), tests)
        return metrics
    metrics.update(_gm(bb, tr.realigned_head, setup, "gm"))
    metrics.update(_gm(bb, psi, setup, "gm_unaligned"))
    metrics.update(_gm(bb, tr.frozen_head, setup, "gm_frozen"))
    metrics["gm_local_accuracy"] = evalkit.evaluate_pm(bb, [tr.realigned_head] * len(tests), tests)
    metrics["pm_unaligned_accuracy"] = evalkit.evaluate_pm(bb, tr.personal, tests)
    metrics["pm_la_fr_accuracy"] = evalkit.evaluate_pm(bb, tr.la_fr, tests)
    metrics["pm_accuracy"] = evalkit.evaluate_pm(bb, tr.finetuned, tests)
    return metrics
