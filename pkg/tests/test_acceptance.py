"""End-to-end acceptance gate.

Each test evaluates one acceptance criterion at its stated tolerance and
prints a single pass/fail line to the terminal (bypassing capture), then
asserts.  The slow criteria (1 and 2) run the full experiment protocol;
expect the module to take tens of minutes on one core.
"""

import math

import numpy as np
import pytest

from brl import (
    ExcessCurveConfig,
    HeatmapConfig,
    LabeledDataset,
    LinearScore,
    TruncatedClassSampler,
    balanced_risk_gradient,
    bernstein_empirical_check,
    chernoff_interval,
    compute_subroot_constant,
    fit_knn,
    identity_cross_check,
    knn_classify,
    knn_eta,
    make_loss,
    run_excess_curve,
    run_knn_heatmap,
    subroot_fixed_point,
    vc_transform,
)
from brl.bounds import default_constants
from brl.cli import main
from brl.data import StudentMixtureParams
from brl.scoring import LOSS_NAMES
from conftest import random_dataset


def report(capsys, num, name, ok, detail=""):
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    with capsys.disabled():
        print(line, flush=True)
    return ok


def test_criterion_1_heatmap_frontier(capsys):
    config = HeatmapConfig(n=10_000, reps=20, seed=0)
    rows = run_knn_heatmap(config)
    bad = []
    for r in rows:
        ratio = config.n ** (r["b"] - r["a"])
        if ratio <= 0.1 and not (0.45 <= r["am_mean"] <= 0.55):
            bad.append((r["a"], r["b"], r["am_mean"]))
        if ratio >= 50.0 and not (r["am_mean"] <= 0.45):
            bad.append((r["a"], r["b"], r["am_mean"]))
    ok = all(r["valid"] == 1 for r in rows) and not bad
    detail = f"25 cells, offenders: {bad}" if bad else "25 cells in range"
    assert report(capsys, 1, "heatmap frontier", ok, detail)


def test_criterion_2_fast_rate_scaling(capsys):
    slopes = {}
    for a in (1.0 / 3.0, 0.5):
        config = ExcessCurveConfig(a=a, seed=0)
        rows = run_excess_curve(config)
        log_np = [math.log(r["n"] * r["p"]) for r in rows]
        log_excess = [math.log(r["excess_mean"]) for r in rows]
        slope = float(np.polyfit(log_np, log_excess, 1)[0])
        slopes[a] = slope
    ok = all(-1.35 <= s <= -0.65 for s in slopes.values())
    detail = ", ".join(f"a={a:.3g}: slope={s:.4f}" for a, s in slopes.items())
    assert report(capsys, 2, "fast-rate scaling", ok, detail)


def test_criterion_3_knn_oracle_equivalence(capsys):
    rng = np.random.default_rng(31)
    dims = [1, 2, 5] * 7
    mismatches = 0
    for idx in range(20):
        d = dims[idx]
        n = 600
        # small integer lattice: duplicated coordinates force distance ties
        feats = rng.integers(0, 6, size=(n, d)).astype(float)
        labels = np.where(rng.random(n) < 0.4, 1, -1)
        labels[:2] = [1, -1]
        train = LabeledDataset(feats, labels.astype(np.int8))
        k = int(rng.choice([1, 3, 17, 150]))
        kd = fit_knn(train, k, method="kdtree")
        br = fit_knn(train, k, method="brute")
        queries = np.vstack(
            [
                rng.integers(0, 6, size=(500, d)).astype(float),
                feats[rng.integers(0, n, size=500)],
            ]
        )
        if not np.array_equal(knn_classify(kd, queries), knn_classify(br, queries)):
            mismatches += 1
        elif not np.array_equal(knn_eta(kd, queries), knn_eta(br, queries)):
            mismatches += 1
    ok = mismatches == 0
    assert report(
        capsys, 3, "k-NN oracle equivalence", ok,
        f"20 datasets x 1000 queries, {mismatches} mismatching",
    )


def fd_gradient(data, beta, loss, q, h=1e-6):
    from brl import LinearScore, balanced_empirical_risk

    grad = np.empty_like(beta)
    for j in range(len(beta)):
        up, dn = beta.copy(), beta.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (
            balanced_empirical_risk(data, LinearScore(up), loss, q)
            - balanced_empirical_risk(data, LinearScore(dn), loss, q)
        ) / (2.0 * h)
    return grad


def test_criterion_4_gradient_check(capsys):
    rng = np.random.default_rng(44)
    worst = 0.0
    for name in LOSS_NAMES:
        loss = make_loss(name)
        for q in (0.01, 0.5, 0.99):
            for _ in range(50):
                data = random_dataset(rng, n=40, d=3, p=0.3)
                beta = 0.5 * rng.normal(size=3)
                analytic = balanced_risk_gradient(data, LinearScore(beta), loss, q)
                fd = fd_gradient(data, beta, loss, q)
                scale = max(
                    float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)), 1e-12
                )
                worst = max(worst, float(np.linalg.norm(analytic - fd)) / scale)
    ok = worst < 1e-5
    assert report(
        capsys, 4, "gradient check", ok,
        f"50 instances x 4 losses x 3 weights, worst rel err {worst:.3g}",
    )


def test_criterion_5_excess_risk_identity(capsys):
    result = identity_cross_check(p=0.05, draws=1_000_000, seed=0)
    ok = result.agree
    assert report(
        capsys, 5, "excess-risk identity", ok,
        f"identity {result.identity.value:.6f} vs direct {result.direct.value:.6f}"
        f" = {result.n_se:.2f} combined SE",
    )


def test_criterion_6_chernoff_coverage(capsys):
    n, p, sims = 10_000, 0.01, 10_000
    lo, hi = chernoff_interval(n * p, 0.025)
    counts = np.random.default_rng(66).binomial(n, p, size=sims)
    coverage = float(np.mean((counts >= lo) & (counts <= hi)))
    ok = coverage >= 0.94
    assert report(
        capsys, 6, "Chernoff coverage", ok,
        f"coverage {coverage:.4f} with interval [{lo:.1f}, {hi:.1f}]",
    )


def test_criterion_7_constant_chain(capsys):
    c = compute_subroot_constant()
    # independent route: 1e7-panel midpoint rule on [0, 60]
    panels, upper, blocks = 10_000_000, 60.0, 50
    width = upper / panels
    per_block = panels // blocks
    total = 0.0
    for b in range(blocks):
        i = np.arange(b * per_block, (b + 1) * per_block, dtype=np.float64)
        t = (i + 0.5) * width
        total += float(np.sum(np.exp(-t) * np.sqrt(1.0 + t)))
    riemann = 12.0 * total * width
    table = default_constants()
    checks = {
        "riemann": abs(c - riemann) <= 1e-8,
        "c1": table.c1 == 108.0 * table.c_subroot**2,
        "vc": vc_transform(1.0, 1.0) == (5.0, 6.0),
    }
    rng = np.random.default_rng(77)
    fixed_ok = True
    for b, cc in zip(10.0 * rng.random(1000), 10.0 * rng.random(1000)):
        out = subroot_fixed_point(b, cc)
        psi = b * math.sqrt(out.r_star) + cc
        if abs(psi - out.r_star) > 1e-10 * max(1.0, out.r_star):
            fixed_ok = False
        if out.r_star > out.upper * (1.0 + 1e-12):
            fixed_ok = False
    checks["fixed_point"] = fixed_ok
    ok = all(checks.values())
    detail = f"|quad-riemann| = {abs(c - riemann):.2e}" + (
        "" if ok else f", failing: {[k for k, v in checks.items() if not v]}"
    )
    assert report(capsys, 7, "constant chain", ok, detail)


def test_criterion_8_bernstein_sanity(capsys):
    params = StudentMixtureParams.default(0.05)
    sampler = TruncatedClassSampler(params, radius=3.0)
    loss = make_loss("logistic", interval_bound=3.0)
    check = bernstein_empirical_check(
        sampler, loss, 1.0, 0.05, 0.05, num_scores=100, draws=30_000, seed=9
    )
    slack = 3.0 * float(check.stderrs[int(np.argmax(check.ratios))])
    ok = check.max_ratio <= check.analytic_bound + slack
    assert report(
        capsys, 8, "Bernstein sanity", ok,
        f"max ratio {check.max_ratio:.3f} vs analytic B {check.analytic_bound:.3f}"
        f" (+3 SE {slack:.3f}), {check.skipped} skipped",
    )


def test_criterion_9_thread_count_determinism(capsys, tmp_path):
    recipes = {
        "knn-heatmap": [
            "knn-heatmap", "--n", "400", "--a-grid", "0.375,0.625",
            "--b-grid", "0.375,0.625", "--reps", "2", "--test-queries", "200",
            "--seed", "4",
        ],
        "erm-curve": [
            "erm-curve", "--n-grid", "100,316", "--a", "0.5", "--reps", "4",
            "--oracle-draws", "1000", "--risk-draws", "1000", "--seed", "5",
        ],
    }
    stable = {}
    for name, args in recipes.items():
        outputs = []
        for threads in (1, 4, 8):
            out = tmp_path / f"{name}-{threads}.csv"
            code = main(args + ["--threads", str(threads), "--out", str(out)])
            assert code == 0
            outputs.append(out.read_bytes())
        stable[name] = outputs[0] == outputs[1] == outputs[2]
    ok = all(stable.values())
    assert report(
        capsys, 9, "thread-count determinism", ok,
        ", ".join(f"{k}: {'stable' if v else 'UNSTABLE'}" for k, v in stable.items()),
    )
