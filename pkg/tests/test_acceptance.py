"""End-to-end acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import filecmp
import time
import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr

from fedloge import datagen, evalkit, experiment
from fedloge.datagen import DatasetSpec, LabeledSet
from fedloge.model import Backbone, ce_loss_and_grads
from fedloge.numerics import RngStream, finite_diff_grad
from fedloge.realign import ga_fr, la_fr
from fedloge.ssec import (SsecConfig, angle_loss, build_ssec, make_dense_etf, make_mask, norm_loss,
                          ssec_grad, ssec_loss)

SEEDS = (0, 1, 2)


def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


# 1 ---------------------------------------------------------------------------

def test_c1_dense_etf_geometry(verdict):
    worst_cos, worst_norm = 0.0, 0.0
    for C in (3, 10, 100):
        psi = make_dense_etf(C + 7, C, RngStream(C))
        G = psi.T @ psi / np.outer(np.linalg.norm(psi, axis=0), np.linalg.norm(psi, axis=0))
        worst_cos = max(worst_cos, np.max(np.abs(G[~np.eye(C, dtype=bool)] + 1 / (C - 1))))
        worst_norm = max(worst_norm, np.max(np.abs(np.linalg.norm(psi, axis=0) - 1)))
    ok = worst_cos <= 1e-9 and worst_norm <= 1e-9
    assert verdict(1, ok, f"max cosine error {worst_cos:.2e}, max norm error {worst_norm:.2e} (tol 1e-9)")


# 2 ---------------------------------------------------------------------------

def test_c2_ssec_construction(verdict):
    cfg = SsecConfig()  # gamma 1.0, beta 0.6, lr 1e-4, 10,000 steps
    assert (cfg.gamma, cfg.beta, cfg.sgd.learning_rate, cfg.sgd.steps) == (1.0, 0.6, 1e-4, 10_000)
    t0 = time.perf_counter()
    res = build_ssec(cfg, 512, 100, RngStream(0).child("ssec"))
    elapsed = time.perf_counter() - t0
    d = res.diagnostics
    ok = (d.norm_var <= 1e-6 and abs(d.norm_mean - 1.0) <= 0.01
          and 89.0 <= d.angle_mean_deg <= 91.5 and d.min_angle_deg >= 85.0 and elapsed < 300)
    assert verdict(2, ok, f"norm_mean {d.norm_mean:.6f}, norm_var {d.norm_var:.3e}, "
                          f"angle_mean {d.angle_mean_deg:.3f} deg, min_angle {d.min_angle_deg:.3f} deg, "
                          f"{elapsed:.1f}s")


# 3 ---------------------------------------------------------------------------

def _max_tie_gap(W):
    Wn = W / np.linalg.norm(W, axis=0)
    G = Wn.T @ Wn
    np.fill_diagonal(G, -np.inf)
    top = np.sort(G, axis=1)[:, -2:]
    return float(np.min(top[:, 1] - top[:, 0]))


def test_c3_gradient_correctness(verdict):
    errs = {"norm": [], "angle": [], "ssec": [], "ce": [], "backprop": []}
    seed = 0
    while len(errs["ssec"]) < 10:
        r = RngStream(seed, "c3")
        seed += 1
        W = r.normal(size=(12, 5))
        S = make_mask(12, 5, 0.4, r.child("mask"))
        if _max_tie_gap(W * S.mask) < 1e-6:
            continue
        full = SsecConfig(beta=0.4)
        only_norm = SsecConfig(beta=0.4, angle_weight=0.0)
        g_norm = ssec_grad(W, only_norm, S)
        g_angle = ssec_grad(W, full, S) - g_norm
        errs["norm"].append(_rel_err(g_norm, finite_diff_grad(lambda x: norm_loss(x, 1.0, S), W, 1e-6)))
        errs["angle"].append(_rel_err(g_angle, finite_diff_grad(lambda x: angle_loss(x, S), W, 1e-6)))
        errs["ssec"].append(_rel_err(ssec_grad(W, full, S),
                                     finite_diff_grad(lambda x: ssec_loss(x, full, S), W, 1e-6)))
    for seed in range(10):
        r = RngStream(seed, "c3ce")
        h, head, y = r.normal(size=(4, 8)), r.normal(size=(8, 5)), r.choice(5, size=4)
        _, gh, gw = ce_loss_and_grads(h, head, y)
        errs["ce"].append(max(
            _rel_err(gh, finite_diff_grad(lambda v: ce_loss_and_grads(v, head, y)[0], h, 1e-6)),
            _rel_err(gw, finite_diff_grad(lambda v: ce_loss_and_grads(h, v, y)[0], head, 1e-6))))
        bb = Backbone.init([5, 8, 8], r.child("bb"))
        X, yb = r.normal(size=(6, 5)), r.choice(5, size=6)
        hh, cache = bb.forward(X)
        grads = bb.backward(cache, ce_loss_and_grads(hh, head, yb)[1])
        worst = 0.0
        params = bb.params()
        for i, p in enumerate(params):
            def f(v, i=i):
                trial = list(params)
                trial[i] = v
                b2 = bb.copy()
                b2.set_params(trial)
                return ce_loss_and_grads(b2.transform(X), head, yb)[0]
            worst = max(worst, _rel_err(grads[i], finite_diff_grad(f, p, 1e-6)))
        errs["backprop"].append(worst)
    worst = {k: max(v) for k, v in errs.items()}
    ok = all(len(v) >= 10 for v in errs.values()) and all(w <= 1e-4 for w in worst.values())
    detail = ", ".join(f"{k} {w:.1e} (n={len(errs[k])})" for k, w in worst.items())
    assert verdict(3, ok, f"max relative error: {detail} (tol 1e-4)")


# 4 ---------------------------------------------------------------------------

def test_c4_realignment_exactness(verdict):
    worst = 0.0
    for seed in range(20):
        r = RngStream(seed, "c4")
        psi = r.normal(size=(16, 10)) * r.child("s").normal(size=10) ** 2
        phi = r.normal(size=(16, 10)) * r.child("t").normal(size=10) ** 2
        g = ga_fr(psi)
        nps = np.linalg.norm(psi, axis=0)
        worst = max(worst, np.max(np.abs(np.linalg.norm(g, axis=0) - 1)),
                    np.max(np.abs(np.sum(g * psi, axis=0) / nps - 1)))
        l = la_fr(psi, phi)
        nl, nphi = np.linalg.norm(l, axis=0), np.linalg.norm(phi, axis=0)
        worst = max(worst, np.max(np.abs(nl - nphi)),
                    np.max(np.abs(np.sum(l * psi, axis=0) / (nl * nps) - 1)))
    ok = worst <= 1e-9
    assert verdict(4, ok, f"max deviation {worst:.2e} (tol 1e-9)")


# 5 ---------------------------------------------------------------------------

def _labels(counts):
    y = np.repeat(np.arange(len(counts)), counts)
    return LabeledSet(np.zeros((y.size, 1)), y, len(counts))


def test_c5_partition_conservation_and_heterogeneity(verdict):
    draw = np.random.default_rng(2024)
    data = _labels(datagen.longtail_counts(DatasetSpec(n_classes=10, n_max=500, imbalance_factor=100)))
    conserved = 0
    for _ in range(100):
        K = int(draw.integers(1, 41))
        alpha = float(10 ** draw.uniform(-2, 2))
        seed = int(draw.integers(0, 2**32))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            plan = datagen.dirichlet_partition(data, K, alpha, RngStream(seed))
        conserved += int(np.array_equal(plan.counts.sum(axis=0), data.class_counts) and plan.counts.min() >= 0)
    tv = np.array([[datagen.mean_heterogeneity(datagen.dirichlet_partition(data, 8, a, RngStream(s)))
                    for a in (0.1, 1.0, 10.0)] for s in range(5)])
    per_seed = np.all(tv[:, 0] > tv[:, 1]) and np.all(tv[:, 1] > tv[:, 2])
    ok = conserved == 100 and per_seed
    assert verdict(5, ok, f"{conserved}/100 triples conserve counts; mean TV at alpha 0.1/1/10 = "
                          f"{np.round(tv.mean(axis=0), 4).tolist()}, strictly decreasing in every seed: {per_seed}")


# 6 ---------------------------------------------------------------------------

def test_c6_norm_cardinality_correlation(bench, verdict):
    means = []
    for seed in SEEDS:
        res = bench("fedloge", seed)
        rhos = []
        for c in res.clients:
            n = c.train.class_counts
            present = n > 0
            if present.sum() < 3 or np.unique(n[present]).size < 2:
                continue
            rho = spearmanr(np.linalg.norm(c.personal, axis=0)[present], n[present]).statistic
            rhos.append(rho)
        means.append(float(np.mean(rhos)))
    ok = all(m >= 0.6 for m in means)
    assert verdict(6, ok, f"mean per-client Spearman rho by seed {np.round(means, 3).tolist()} (need >= 0.6)")


# 7 ---------------------------------------------------------------------------

def test_c7_directional_end_to_end(bench, verdict):
    rows, wins = [], 0
    for seed in SEEDS:
        fl, fa = bench("fedloge", seed).metrics, bench("fedavg", seed).metrics
        checks = {
            "a": fl["gm_accuracy"] >= fa["gm_accuracy"],
            "b": fl["gm_few"] >= fa["gm_few"],
            "c": fl["pm_accuracy"] >= fl["gm_local_accuracy"],
            "d": (fl["gm_accuracy"] >= fl["gm_unaligned_accuracy"]
                  and fl["pm_la_fr_accuracy"] >= fl["pm_unaligned_accuracy"]),
        }
        wins += all(checks.values())
        rows.append(f"seed {seed}: GM {fl['gm_accuracy']:.3f} vs {fa['gm_accuracy']:.3f}, "
                    f"few {fl['gm_few']:.3f} vs {fa['gm_few']:.3f}, PM {fl['pm_accuracy']:.3f} vs "
                    f"local GM {fl['gm_local_accuracy']:.3f}, GA-FR {fl['gm_accuracy']:.3f} vs "
                    f"{fl['gm_unaligned_accuracy']:.3f}, LA-FR PM {fl['pm_la_fr_accuracy']:.3f} vs "
                    f"{fl['pm_unaligned_accuracy']:.3f} -> {''.join(k for k, v in checks.items() if v)}")
    for r in rows:
        print(r)
    assert verdict(7, wins >= 2, f"all of (a)-(d) hold in {wins}/3 seeds (need >= 2)")


# 8 ---------------------------------------------------------------------------

def test_c8_pruning_asymmetry(bench, verdict):
    wins, endpoints, notes = 0, True, []
    for seed in SEEDS:
        res = bench("fedloge", seed)
        head = res.heads["frozen"]
        base = evalkit.accuracy(res.backbone, head, res.test)
        _, asc = evalkit.pruning_sweep(res.backbone, head, res.test, "ascending_mean", [0.0, 0.5, 1.0])
        _, desc = evalkit.pruning_sweep(res.backbone, head, res.test, "descending_mean", [0.0, 0.5, 1.0])
        C = res.test.n_classes
        endpoints &= asc[0] == base and desc[0] == base and asc[-1] == 1 / C and desc[-1] == 1 / C
        drop_asc, drop_desc = base - asc[1], base - desc[1]
        wins += drop_asc < drop_desc
        notes.append(f"{drop_asc:.3f}<{drop_desc:.3f}")
    ok = wins >= 2 and endpoints
    assert verdict(8, ok, f"50% drop ascending<descending in {wins}/3 seeds ({', '.join(notes)}); "
                          f"exact endpoints: {endpoints}")


# 9 ---------------------------------------------------------------------------

def test_c9_degeneration_probe(bench, verdict):
    wins, notes = 0, []
    for seed in SEEDS:
        res = bench("fedloge", seed)
        raw, rel = [], []
        for c in range(res.test.n_classes):
            prof = evalkit.degeneration_profile(res.backbone, res.test, c, res.mask)
            raw.append(evalkit.masked_vs_dominant_variance(prof))
            rv = prof.relative_variance
            top = np.flatnonzero(~prof.masked)[:max(1, int((~prof.masked).sum()) // 4)]
            rel.append((np.nanmean(rv[prof.masked]), np.nanmean(rv[top])))
        vm, vt = np.mean(raw, axis=0)
        wins += vm >= vt
        rm, rt = np.nanmean(rel, axis=0)
        notes.append(f"seed {seed}: masked {vm:.3f} vs top-quartile {vt:.3f} "
                     f"(variance/|mean|: {rm:.3f} vs {rt:.3f})")
    for n in notes:
        print(n)
    assert verdict(9, wins >= 2, f"masked-position variance >= top-quartile unmasked variance in {wins}/3 "
                                 f"seeds (need >= 2)")


# 10 --------------------------------------------------------------------------

DET = """
[experiment]
method = {method}
seed = 11
[dataset]
n_classes = 10
feature_dim = 20
n_max = 300
imbalance_factor = 100
[federation]
rounds = 15
[ssec]
steps = 1500
"""


@pytest.mark.parametrize("method", ["fedloge", "fedavg", "dense_etf_frozen"])
def test_c10_determinism(method, tmp_path, verdict):
    path = tmp_path / "cfg.ini"
    path.write_text(DET.format(method=method))
    experiment.run_experiment(path, out=tmp_path / "a")
    experiment.run_experiment(path, out=tmp_path / "b")
    names = sorted(str(p.relative_to(tmp_path / "a")) for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name != "run.log")
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    checked = [n for n in names if n.endswith((".csv", ".flgb", ".ssec"))]
    ok = not mismatch and not errors and "metrics.csv" in checked and "backbone.flgb" in checked
    assert verdict(10, ok, f"{method}: {len(names)} artifacts ({len(checked)} CSV/checkpoint) byte-identical; "
                           f"mismatches {mismatch + errors}")
