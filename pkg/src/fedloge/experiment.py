"""Run directories: writing every artifact of an experiment and comparing runs.

Layout of a run directory::

    config.ini        exact config snapshot (re-runnable)
    rounds.csv        per-round report
    metrics.csv       final metrics, one header row and one value row
    partition.csv     client x class training counts
    backbone.flgb     backbone checkpoint
    heads/*.ssec      exported heads (aux_global, realigned, frozen, personal_k)
    ssec_diagnostics.csv, pruning.csv   (frozen-head methods only)
    run.log           timestamps; the only non-deterministic file
"""
from __future__ import annotations

import csv
import datetime as _dt
import logging
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import evalkit
from .errors import ValidationError
from .federation import write_round_reports
from .model import Backbone
from .numerics import RngStream
from .pipeline import ExperimentResult, build_data, run
from .ssec import build_ssec, load_head, save_head, save_head_csv

log = logging.getLogger(__name__)

REQUIRED_METRICS = ("gm_accuracy", "gm_many", "gm_med", "gm_few", "pm_accuracy")
PRUNE_RATIOS = np.linspace(0.0, 1.0, 11)


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_metrics(path, metrics):
    keys = list(metrics)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        w.writerow([_fmt(metrics[k]) for k in keys])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2 or len(rows[0]) != len(rows[1]):
        raise ValidationError(f"{path}: expected one header row and one value row")
    return {k: (float(v) if v != "" else None) for k, v in zip(*rows)}


def write_artifacts(result: ExperimentResult, values, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "heads").mkdir(exist_ok=True)
    (out / "config.ini").write_text(config_mod.dump(values))
    write_round_reports(out / "rounds.csv", result.rounds)
    write_metrics(out / "metrics.csv", result.metrics)
    result.plan.to_csv(out / "partition.csv")
    result.backbone.save(out / "backbone.flgb")
    for name, head in result.heads.items():
        mask = result.mask if name == "frozen" else None
        save_head(out / "heads" / f"{name}.ssec", head, mask)
    for k, head in enumerate(result.personal_heads.get("finetuned", [])):
        save_head(out / "heads" / f"personal_{k}.ssec", head)
    frozen = result.heads.get("frozen")
    if frozen is not None:
        curves = {o: evalkit.pruning_sweep(result.backbone, frozen, result.test, o, PRUNE_RATIOS)
                  for o in ("ascending_mean", "descending_mean")}
        evalkit.write_pruning_csv(out / "pruning.csv", curves)
    if result.ssec_diagnostics is not None:
        write_metrics(out / "ssec_diagnostics.csv", result.ssec_diagnostics.as_dict())


def run_experiment(config_path, overrides=None, out=None) -> tuple[ExperimentResult, Path]:
    cfg, values = config_mod.load(config_path, overrides)
    out = Path(out or values["experiment.out"])
    started = _dt.datetime.now().isoformat(timespec="seconds")
    result = run(cfg)
    write_artifacts(result, values, out)
    finished = _dt.datetime.now().isoformat(timespec="seconds")
    (out / "run.log").write_text(f"started {started}\nfinished {finished}\nconfig {config_path}\n")
    return result, out


def compare(run_dirs, out=None):
    """Side-by-side metrics with deltas against the first run.

    Returns the table as a list of rows (header first) and writes it as CSV
    when ``out`` is given.
    """
    if len(run_dirs) < 2:
        raise ValidationError("compare needs at least two run directories")
    tables = []
    for d in run_dirs:
        path = Path(d) / "metrics.csv"
        if not path.exists():
            raise ValidationError(f"{d}: no metrics.csv (incomplete run?)")
        m = read_metrics(path)
        for col in REQUIRED_METRICS:
            if col not in m:
                raise ValidationError(f"{d}: metrics.csv is missing column {col!r}")
        tables.append(m)
    names = [Path(d).name or str(d) for d in run_dirs]
    header = ["metric"] + names + [f"delta_{n}" for n in names[1:]]
    rows = [header]
    for col in REQUIRED_METRICS:
        vals = [t[col] for t in tables]
        base = vals[0]
        deltas = [None if v is None or base is None else v - base for v in vals[1:]]
        rows.append([col] + [_fmt(v) for v in vals] + [_fmt(x) for x in deltas])
    if out is not None:
        with open(out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return rows


def ssec_build(config_path, overrides=None, out=None):
    """Stage-0 only: build the SSE-C head and write it with its diagnostics."""
    cfg, values = config_mod.load(config_path, overrides)
    out = Path(out or values["experiment.out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg.seed)
    # same derivation path as a full run, so the head matches run artifacts
    res = build_ssec(cfg.ssec, cfg.model.feature_dim, cfg.data.spec.n_classes, rng.child("ssec"))
    save_head(out / "ssec.ssec", res.weights, res.mask)
    save_head_csv(out / "ssec.csv", res.weights, res.mask)
    write_metrics(out / "ssec_diagnostics.csv", res.diagnostics.as_dict())
    with open(out / "ssec_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows([s, repr(float(l))] for s, l in res.loss_history)
    (out / "config.ini").write_text(config_mod.dump(values))
    return res, out


def probe(run_dir, klass: int, out=None):
    """Degeneration profile of class ``klass`` for a finished run."""
    run_dir = Path(run_dir)
    cfg, _ = config_mod.load(run_dir / "config.ini")
    backbone = Backbone.load(run_dir / "backbone.flgb", cfg.model.output_activation)
    setup = build_data(cfg, RngStream(cfg.seed).child("data"))
    if not 0 <= klass < cfg.data.spec.n_classes:
        raise ValidationError(f"class {klass} out of range [0, {cfg.data.spec.n_classes})")
    mask = None
    frozen = run_dir / "heads" / "frozen.ssec"
    if frozen.exists():
        _, mask = load_head(frozen)
    profile = evalkit.degeneration_profile(backbone, setup.test, klass, mask)
    out = Path(out) if out else run_dir / f"probe_class{klass}.csv"
    profile.to_csv(out)
    return profile, out
