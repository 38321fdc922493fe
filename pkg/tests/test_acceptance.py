"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The experiment-scale criteria (5 to 8) run the same code paths as the CLI
and take minutes each on one CPU; they carry the ``slow`` marker so that
``-m "not slow"`` skips them, but they run by default.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from dvge import autodiff as ad
from dvge import experiment as ex
from dvge.baselines import train_sensitive_classifier
from dvge.debias import DvgeTrainRun, PerturbationConfig, clip_eps, perturb, train_dvge, train_plain
from dvge.fairness import (
    EvalBatch, FairnessReport, accuracy, delta_dp, delta_eo, delta_eo_fnr, dominance_fraction, pareto_front,
)
from dvge.nn import ACTIVATIONS, FitConfig, Mlp, MlpSpec, cross_entropy
from dvge.vae import (
    VaeConfig, discriminator_accuracy, fit_tc_discriminator, kl_standard_normal, train_factor_vae, train_vanilla_vae,
)

ROOT = Path(__file__).parents[1]
CREDIT = Path(os.environ.get("DVGE_CREDIT_PATH", ROOT / "data" / "german_credit.asc"))


# ---------------------------------------------------------------------------
# 1. gradient correctness


def _mlp_loss(model, x, y):
    return cross_entropy(model(x), y, reduction="sum")


def test_c1_gradients_match_finite_differences(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    h = 1e-4
    worst = 0.0
    for _ in range(100):
        depth = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 17, size=depth)]
        spec = MlpSpec(tuple(widths), int(rng.integers(2, 17)), activation=str(rng.choice(ACTIVATIONS)))
        model = Mlp.init(spec, rng)
        for p in model.params:
            p.data += rng.normal(0.0, 0.1, size=p.data.shape)
        x = ad.Tensor(rng.normal(size=(int(rng.integers(1, 6)), widths[0])), requires_grad=True)
        y = rng.integers(0, spec.output_width, size=x.shape[0])
        wrt = model.params + [x]
        grads = ad.backward(_mlp_loss(model, x, y), wrt)
        for t in wrt:
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                fp = _mlp_loss(model, x, y).item()
                flat[i] = old - h
                fm = _mlp_loss(model, x, y).item()
                flat[i] = old
                num = (fp - fm) / (2 * h)
                ana = grads[t].reshape(-1)[i]
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    seconds = time.perf_counter() - start
    ok = worst < 1e-3 and seconds < 30
    criterion(ok, f"max relative error {worst:.2e} over 100 MLPs, {seconds:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. metric oracles


def _brute_rate(pred, mask):
    members = [pred[i] for i in range(len(pred)) if mask[i]]
    return sum(members) / len(members)


def _brute_front(points):
    keep = []
    for i, (a, d) in enumerate(points):
        dominated = any(a2 >= a and d2 <= d and (a2 > a or d2 < d) for a2, d2 in points)
        if not dominated and points[i] not in [points[j] for j in keep]:
            keep.append(i)
    return sorted((points[i] for i in keep), key=lambda q: q[1])


def test_c2_metrics_match_brute_force(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    fronts_ok = True
    eq_forms_ok = True
    for _ in range(1000):
        n = int(rng.integers(4, 501))
        pred, lab, grp = (rng.integers(0, 2, size=n) for _ in range(3))
        grp[:2] = (0, 1)
        lab[:2] = 1
        lab[2:4] = 1
        grp[2:4] = (0, 1)
        batch = EvalBatch(pred, lab, grp)
        dp = abs(_brute_rate(pred, grp == 1) - _brute_rate(pred, grp == 0))
        eo = abs(_brute_rate(pred, (grp == 1) & (lab == 1)) - _brute_rate(pred, (grp == 0) & (lab == 1)))
        acc = sum(int(pred[i] == lab[i]) for i in range(n)) / n
        report = FairnessReport.evaluate(pred, lab, grp)
        worst = max(worst, abs(delta_dp(batch) - dp), abs(delta_eo(batch) - eo), abs(accuracy(batch) - acc),
                    abs(report.delta_dp - dp), abs(report.delta_eo - eo), abs(report.accuracy - acc))
        eq_forms_ok &= abs(delta_eo(batch) - delta_eo_fnr(batch)) <= 1e-12
        points = [(float(a), float(d)) for a, d in rng.integers(0, 20, size=(int(rng.integers(1, 30)), 2)) / 20]
        fronts_ok &= pareto_front(points) == _brute_front(points)
    ok = worst <= 1e-12 and fronts_ok and eq_forms_ok
    criterion(ok, f"max metric error {worst:.1e}, fronts exact: {fronts_ok}, TPR/FNR forms agree: {eq_forms_ok}")
    assert ok


# ---------------------------------------------------------------------------
# 3. perturbation invariants


def test_c3_perturbation_invariants(criterion):
    rng = np.random.default_rng(3)
    bound_ok = identity_ok = True
    for _ in range(10_000):
        width = int(rng.integers(1, 12))
        scale = 10.0 ** rng.uniform(-3, 3)
        z = rng.normal(size=(1, width)) * scale
        z[0, rng.random(width) < 0.05] = 0.0
        f_sens, f_task = rng.normal(size=(2, 1, width)) * 10.0 ** rng.uniform(-3, 3)
        eta1, eta2 = rng.exponential(1.0, size=2)
        out = perturb(z, f_sens, f_task, PerturbationConfig(eta1, eta2))
        bound_ok &= bool(np.all(np.abs(out - z) <= 0.1 * np.abs(z)))
        same = perturb(z, f_sens, f_task, PerturbationConfig(0.0, 0.0))
        identity_ok &= same.tobytes() == z.tobytes()
    clip = clip_eps(np.array([0.7, -0.7, 0.3]), 0.5)
    clip_ok = clip.tolist() == [0.5, -0.5, 0.3]
    ok = bound_ok and identity_ok and clip_ok
    criterion(ok, f"bound exact: {bound_ok}, zero etas bitwise: {identity_ok}, clip examples: {clip_ok}")
    assert ok


# ---------------------------------------------------------------------------
# 4. identity path


def test_c4_identity_path(criterion):
    cfg = ex.make_config({"schema_version": 1, "data": {"synthetic": {"n": 1000}},
                          "vae": {"epochs": 5}, "sensitive_classifier": {"epochs": 5}})
    data = ex.prepare_data(cfg, 0)
    vae = train_vanilla_vae(data.x_train, ex.vae_config(cfg, "vanilla", 0.0, 1))
    z = vae.encode_mean(data.x_train)
    d = train_sensitive_classifier(z, data.s_train, FitConfig(epochs=5), seed=2).model
    fit = FitConfig(epochs=10)
    checks = []
    for seed in (0, 1, 2):
        dv = train_dvge(DvgeTrainRun(d, PerturbationConfig(0.0, 0.0), fit, seed=seed), z, data.y_train).model
        checks.append(dv.checksum() == train_plain(z, data.y_train, fit, seed=seed).checksum())
    ok = all(checks)
    criterion(ok, f"bit-identical task models for seeds 0,1,2: {checks}")
    assert ok


# ---------------------------------------------------------------------------
# 5. synthetic debiasing trend


@pytest.mark.slow
def test_c5_synthetic_debiasing_trend(criterion, tmp_path):
    cfg = ex.make_config({
        "schema_version": 1, "experiment": "synthetic_trend", "seeds": [0, 1, 2, 3, 4],
        "data": {"synthetic": {"n": 10_000, "beta_s": 0.3, "rho_p": 0.8}},
        "sweep": {"dvge": {"eta1": [0.0, 0.5, 1.0, 2.0], "eta2": [0.5]}},
    })
    start = time.perf_counter()
    path, _ = ex.cmd_sweep(cfg, 0, tmp_path)
    seconds = time.perf_counter() - start
    means = ex.seed_means(ex.read_results(path))
    dp = [p.delta_dp for p in means]
    acc = [p.accuracy for p in means]
    steps = np.diff(dp)
    inversions = steps[steps > 0]
    trend_ok = len(inversions) <= 1 and bool(np.all(inversions < 0.01))
    acc_ok = abs(acc[-1] - acc[0]) <= 0.15
    ok = trend_ok and acc_ok and seconds < 15 * 60 and all(p.n == 5 for p in means)
    criterion(ok, f"mean dDP over eta1 0,0.5,1,2 = {np.round(dp, 4).tolist()}, "
                  f"accuracy {acc[0]:.4f} -> {acc[-1]:.4f}, {seconds / 60:.1f} min")
    assert ok


# ---------------------------------------------------------------------------
# 6. ablation trends


ABLATION_BUDGET = {"sensitive_classifier": {"epochs": 20}}


@pytest.mark.slow
def test_c6_ablation_trends(criterion, tmp_path):
    cfg = ex.make_config({
        "schema_version": 1, "experiment": "ablation", "seeds": [0, 1, 2, 3, 4], **ABLATION_BUDGET,
        "data": {"synthetic": {"n": 10_000, "rho_p": 0.8}},
    })
    ex.cmd_ablation(cfg, 0, tmp_path)
    grid = cfg["ablation"]["eta1"]
    retrained = _read_ablation(tmp_path / "ablation_retrained.csv")
    fixed = _read_ablation(tmp_path / "ablation_fixed.csv")
    details, ok = [], True
    for encoder in ("vanilla", "factor"):
        r, f = retrained[encoder], fixed[encoder]
        rho = spearmanr(grid, r["eta"]).statistic
        if np.isnan(rho):
            rho = 0.0
        crosses = any(acc < r["removed"] for eta, acc in zip(grid, r["eta"]) if eta <= 0.5)
        faster = all(f["no_removal"] - fa >= r["no_removal"] - ra for fa, ra in zip(f["eta"], r["eta"]))
        ok &= rho <= -0.9 and crosses and faster
        details.append(f"{encoder}: spearman {rho:.2f}, below removal at eta<=0.5 {crosses}, "
                       f"fixed drops faster {faster}, retrained {np.round(r['eta'], 3).tolist()} "
                       f"vs removed {r['removed']:.3f}, fixed {np.round(f['eta'], 3).tolist()}")
    criterion(ok, "; ".join(details))
    assert ok


def _read_ablation(path):
    rows = {}
    for line in path.read_text().splitlines()[1:]:
        encoder, no_removal, removed, *etas = line.split(",")
        rows[encoder] = {"no_removal": float(no_removal), "removed": float(removed), "eta": [float(v) for v in etas]}
    return rows


# ---------------------------------------------------------------------------
# 7. proxy coverage


@pytest.mark.slow
def test_c7_proxy_coverage(criterion, tmp_path):
    cfg = ex.make_config({
        "schema_version": 1, "experiment": "proxy", "seeds": [0, 1, 2, 3, 4], **ABLATION_BUDGET,
        "data": {"synthetic": {"n": 10_000, "rho_p": 1.0}},
        "ablation": {"encoders": ["vanilla"], "eta1": [1.0], "k": 1},
    })
    ex.cmd_ablation(cfg, 0, tmp_path)
    row = _read_ablation(tmp_path / "ablation_retrained.csv")["vanilla"]
    removed, dvge = row["removed"], row["eta"][0]
    ok = removed > 0.9 and dvge < 0.7
    criterion(ok, f"retrained sensitive accuracy: removal baseline {removed:.4f} (needs > 0.9), "
                  f"DVGE eta1=1 {dvge:.4f} (needs < 0.7)")
    assert ok


# ---------------------------------------------------------------------------
# 8. credit end to end


@pytest.mark.slow
def test_c8_credit_end_to_end(criterion, tmp_path):
    if not CREDIT.exists():
        criterion(False, f"credit data not found at {CREDIT}")
        pytest.fail(f"credit data not found at {CREDIT}")
    cfg = ex.make_config({
        "schema_version": 1, "experiment": "credit", "seeds": [0, 1, 2],
        "data": {"source": "credit", "path": str(CREDIT), "sensitive": [{"column": "age", "rule": ">=25"}]},
        "vae": {"latent_dim": 10},
        "sweep": {
            "plain": {},
            "dvge": {"eta1": [0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0], "eta2": [0.0, 0.1, 0.5, 1.0, 2.0]},
            "dim_removal": {"k": list(range(1, 10))},
        },
    })
    start = time.perf_counter()
    path, _ = ex.cmd_sweep(cfg, 0, tmp_path)
    seconds = time.perf_counter() - start
    means = ex.seed_means(ex.read_results(path))
    by = {m: [(p.accuracy, p.delta_dp) for p in means if p.method == m] for m in ("plain", "dvge", "dim_removal")}
    dominance = dominance_fraction(pareto_front(by["dvge"]), pareto_front(by["dim_removal"]))
    plain_acc = by["plain"][0][0]
    reach = [(a, d) for a, d in by["dvge"] if d < 0.05 and a >= plain_acc - 0.1]
    ok = seconds < 20 * 60 and dominance >= 0.5 and bool(reach) and len(by["dvge"]) == 40
    best = max(reach) if reach else None
    criterion(ok, f"dominance {dominance:.2f}, plain accuracy {plain_acc:.3f} (dDP {by['plain'][0][1]:.3f}), "
                  f"reachable point {best}, {seconds / 60:.1f} min")
    assert ok


# ---------------------------------------------------------------------------
# 9. VAE correctness


def test_c9_vae_correctness(criterion):
    zero = kl_standard_normal(np.zeros(4), np.zeros(4)).item()
    unit = kl_standard_normal(np.ones(4), np.zeros(4)).item()
    kl_ok = abs(zero) <= 1e-12 and abs(unit - 0.5 * 4) <= 1e-12
    x = np.random.default_rng(5).uniform(size=(300, 6))
    vcfg = VaeConfig(latent_dim=3, hidden=(16, 16), disc_hidden=(16,), epochs=3, gamma=0.0, seed=9)
    vanilla = train_vanilla_vae(x, vcfg)
    factor, _ = train_factor_vae(x, vcfg)
    same = vanilla.checksum() == factor.checksum() and vanilla.history == factor.history
    z = np.random.default_rng(0).normal(size=(4000, 4))
    disc = fit_tc_discriminator(z, epochs=5, seed=1)
    disc_acc = discriminator_accuracy(disc, z, np.random.default_rng(2))
    ok = kl_ok and same and abs(disc_acc - 0.5) <= 0.05
    criterion(ok, f"KL 0 -> {zero}, KL mu=1 -> {unit / 4} per dim, gamma=0 bit-identical {same}, "
                  f"discriminator accuracy {disc_acc:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 10. determinism


def test_c10_determinism(criterion, tmp_path):
    cfg = ex.make_config({
        "schema_version": 1, "experiment": "determinism", "seeds": [0, 1],
        "data": {"synthetic": {"n": 600}},
        "vae": {"epochs": 4, "hidden": [16, 16], "disc_hidden": [16], "kind": "factor", "gamma": 2.0},
        "sensitive_classifier": {"epochs": 3, "hidden": [16]},
        "task": {"epochs": 3, "hidden": [16]},
        "sweep": {"plain": {}, "dvge": {"eta1": [0.5], "eta2": [0.5, 1.0]}, "dim_removal": {"k": [1]},
                  "adt": {"lambda": [0.5]}},
    })
    first, _ = ex.cmd_sweep(cfg, 11, tmp_path / "a")
    second, _ = ex.cmd_sweep(cfg, 11, tmp_path / "b")
    abl = {"ablation": {"eta1": [0.2, 0.4]}}
    abl_a, _ = ex.cmd_ablation(ex.make_config({**cfg, **abl}), 11, tmp_path / "c")
    abl_b, _ = ex.cmd_ablation(ex.make_config({**cfg, **abl}), 11, tmp_path / "d")
    same = first.read_bytes() == second.read_bytes()
    same_abl = all(a.read_bytes() == b.read_bytes() for a, b in zip(abl_a, abl_b))
    ok = same and same_abl
    criterion(ok, f"results CSV bit-identical {same}, ablation CSVs bit-identical {same_abl}")
    assert ok
