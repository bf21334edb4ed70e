"""Reproducible experiment drivers.

Two studies are provided: a learning-frontier heatmap for the balanced
k-NN classifier over a grid of imbalance/neighbour exponents (p = n^-a,
k = n^b), and an excess-balanced-risk scaling curve for the constrained
minimizer as n grows with p = n^-a.

Every random quantity is keyed by an explicit seed tuple (master seed,
grid position, repetition, purpose), so results are a pure function of
the config.  Worker processes only ever receive those tuples, which
makes the output byte-identical for any worker count.  CSV output uses
17-significant-digit floats (lossless for float64) and echoes the
scientific parameters as leading "# key=value" comment lines; execution
resources such as the worker count are deliberately not echoed.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Optional, Sequence

import numpy as np

from . import bounds as bounds_mod
from .bounds import BoundInputs, BoundValue, ConstantTable, default_constants
from .data import EtaFn, MarginalSampler, StudentMixtureParams, sample_student_mixture
from .erm import OptimizerConfig, estimate_oracle_score, fit_constrained_balanced_erm
from .knn import (
    BayesOracle,
    ConstantClassifier,
    KnnClassifierFn,
    bayes_balanced_classify,
    excess_am_risk_identity,
    fit_knn,
)
from .measures import (
    LabeledDataset,
    MCEstimate,
    mc_weighted_excess,
    zero_one_am_risk,
)
from .scoring import LinearScore, make_loss

logger = logging.getLogger(__name__)

THREADS_ENV = "BRL_THREADS"
DEFAULT_EXPONENT_GRID = (0.25, 0.375, 0.5, 0.625, 0.75)


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count: explicit argument, else BRL_THREADS, else 1."""
    if workers is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError(f"worker count must be at least 1, got {workers}")
    return workers


def _map_tasks(fn, tasks: list, workers: int) -> list:
    """Run tasks in order-stable fashion, inline when workers == 1."""
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


# ---------------------------------------------------------------------------
# k-NN learning-frontier heatmap


@dataclass(frozen=True)
class HeatmapConfig:
    """Grid study of the balanced k-NN classifier.

    Cell (a, b) draws training sets of size n from the benchmark mixture
    at p = n^-a and evaluates k-NN with k = round(n^b) on a fresh
    class-balanced test set of test_queries rows per class.
    """

    n: int = 10_000
    a_grid: tuple[float, ...] = DEFAULT_EXPONENT_GRID
    b_grid: tuple[float, ...] = DEFAULT_EXPONENT_GRID
    reps: int = 20
    seed: int = 0
    test_queries: int = 2000
    method: str = "auto"
    max_redraws: int = 100

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.test_queries < 1:
            raise ValueError("test_queries must be at least 1")
        for a in self.a_grid:
            if not (0.0 < a < 1.0):
                raise ValueError(f"imbalance exponents must lie in (0, 1), got {a}")
        for b in self.b_grid:
            if not (0.0 < b <= 1.0):
                raise ValueError(f"neighbour exponents must lie in (0, 1], got {b}")


HEATMAP_COLUMNS = (
    "a", "b", "n", "p", "k", "am_mean", "am_q10", "am_q90",
    "valid", "redraws", "reps",
)


def _heatmap_cell(task: tuple[HeatmapConfig, int, float, float]) -> dict:
    config, cell, a, b = task
    n = config.n
    p = float(n ** (-a))
    k = min(max(int(round(n**b)), 1), n)
    params = StudentMixtureParams.default(p)
    ams: list[float] = []
    redraws = 0
    for rep in range(config.reps):
        train = None
        for attempt in range(config.max_redraws + 1):
            ds = sample_student_mixture(
                params, n, seed=(config.seed, cell, rep, 0, attempt)
            )
            n_pos, n_neg = ds.class_counts()
            if n_pos and n_neg:
                train = ds
                break
            redraws += 1
            logger.debug(
                "cell %d rep %d: one-class draw (attempt %d), redrawing",
                cell, rep, attempt,
            )
        if train is None:
            return {
                "a": a, "b": b, "n": n, "p": p, "k": k,
                "am_mean": float("nan"), "am_q10": float("nan"),
                "am_q90": float("nan"), "valid": 0,
                "redraws": redraws, "reps": config.reps,
            }
        model = fit_knn(train, k, config.method)
        rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, cell, rep, 1))
        )
        x_pos = params.sample_class(1, config.test_queries, rng)
        x_neg = params.sample_class(-1, config.test_queries, rng)
        test = LabeledDataset(
            np.vstack([x_pos, x_neg]),
            np.concatenate(
                [
                    np.ones(config.test_queries, dtype=np.int8),
                    -np.ones(config.test_queries, dtype=np.int8),
                ]
            ),
        )
        ams.append(zero_one_am_risk(test, KnnClassifierFn(model)))
    arr = np.asarray(ams)
    q10, q90 = np.quantile(arr, [0.1, 0.9])
    assert q10 <= q90
    return {
        "a": a, "b": b, "n": n, "p": p, "k": k,
        "am_mean": float(arr.mean()), "am_q10": float(q10), "am_q90": float(q90),
        "valid": 1, "redraws": redraws, "reps": config.reps,
    }


def run_knn_heatmap(config: HeatmapConfig, workers: Optional[int] = None) -> list[dict]:
    """Run every grid cell; returns one row dict per (a, b) in grid order."""
    workers = resolve_workers(workers)
    tasks = []
    cell = 0
    for a in config.a_grid:
        for b in config.b_grid:
            tasks.append((config, cell, a, b))
            cell += 1
    return _map_tasks(_heatmap_cell, tasks, workers)


# ---------------------------------------------------------------------------
# excess-risk scaling curve for the constrained minimizer


@dataclass(frozen=True)
class ExcessCurveConfig:
    """Excess balanced risk of the fitted score as n grows, p = n^-a.

    For each n an oracle score is fitted on a large class-conditional
    sample, then ``reps`` independent training draws are fitted and the
    excess risk of each is estimated on one shared evaluation sample
    per n (paired draws, so heavy tails cancel in the difference).
    """

    n_grid: tuple[int, ...] = (100, 316, 1000, 3162, 10_000)
    a: float = 1.0 / 3.0
    u: float = 10.0
    loss_name: str = "logistic"
    reps: int = 100
    oracle_draws: int = 100_000
    risk_draws: int = 10_000
    seed: int = 0
    max_redraws: int = 100
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self) -> None:
        if not self.n_grid:
            raise ValueError("n_grid must be nonempty")
        for n in self.n_grid:
            if n < 4:
                raise ValueError(f"every n must be at least 4, got {n}")
        if not (0.0 < self.a < 1.0):
            raise ValueError(f"a must lie in (0, 1), got {self.a}")
        if not (self.u > 0):
            raise ValueError("u must be positive")
        if self.reps < 2:
            raise ValueError("reps must be at least 2")
        if self.oracle_draws < 10 or self.risk_draws < 2:
            raise ValueError("draw counts too small")


CURVE_COLUMNS = (
    "n", "p", "excess_mean", "excess_q10", "excess_q90",
    "excess_raw_mean", "reps", "converged_frac",
)


def _int_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _curve_rep(task: tuple) -> tuple[int, int, float, float, bool, bool]:
    config, n_index, n, p, rep, oracle_beta, eval_seed = task
    params = StudentMixtureParams.default(p)
    loss = make_loss(config.loss_name)
    train = None
    for attempt in range(config.max_redraws + 1):
        ds = sample_student_mixture(
            params, n, seed=(config.seed, n_index, 2, rep, attempt)
        )
        n_pos, n_neg = ds.class_counts()
        if n_pos and n_neg:
            train = ds
            break
        logger.debug("n=%d rep %d: one-class draw, redrawing", n, rep)
    if train is None:
        return n_index, rep, float("nan"), float("nan"), False, False
    fit = fit_constrained_balanced_erm(
        train, loss, config.u, config=config.optimizer
    )
    est = mc_weighted_excess(
        params.sample_class,
        fit.score,
        LinearScore(oracle_beta, norm_cap=config.u),
        loss,
        p,
        config.risk_draws,
        seed=eval_seed,
    )
    return n_index, rep, est.value, est.stderr, fit.converged, True


def run_excess_curve(
    config: ExcessCurveConfig,
    workers: Optional[int] = None,
    keep_reps: bool = False,
) -> list[dict] | tuple[list[dict], list[dict]]:
    """Fit oracles, run the reps, and aggregate one row per n.

    Per-rep excess values are clamped below at zero for the aggregate
    columns; the unclamped mean travels in excess_raw_mean.  With
    ``keep_reps`` the per-rep records (raw value, MC stderr, solver
    convergence) are returned as well.
    """
    workers = resolve_workers(workers)
    oracles: dict[int, np.ndarray] = {}
    grid: list[tuple[int, int, float]] = []
    for i, n in enumerate(config.n_grid):
        p = float(n ** (-config.a))
        params = StudentMixtureParams.default(p)
        loss = make_loss(config.loss_name)
        score = estimate_oracle_score(
            params.sample_class,
            loss,
            config.u,
            p,
            config.oracle_draws,
            seed=_int_seed(config.seed, i, 0),
            config=config.optimizer,
        )
        oracles[i] = score.beta
        grid.append((i, n, p))

    tasks = [
        (config, i, n, p, rep, oracles[i], _int_seed(config.seed, i, 1))
        for (i, n, p) in grid
        for rep in range(config.reps)
    ]
    results = _map_tasks(_curve_rep, tasks, workers)

    per_n: dict[int, list[tuple[int, float, float, bool, bool]]] = {i: [] for i, _, _ in grid}
    for n_index, rep, raw, se, converged, ok in results:
        per_n[n_index].append((rep, raw, se, converged, ok))

    rows: list[dict] = []
    rep_records: list[dict] = []
    for i, n, p in grid:
        recs = sorted(per_n[i])
        raws = np.asarray([r[1] for r in recs if r[4]])
        conv = np.asarray([r[3] for r in recs if r[4]], dtype=bool)
        if keep_reps:
            for rep, raw, se, converged, ok in recs:
                rep_records.append(
                    {
                        "n": n, "p": p, "rep": rep, "raw": raw, "stderr": se,
                        "clamped": max(raw, 0.0) if ok else float("nan"),
                        "converged": converged, "ok": ok,
                    }
                )
        if raws.size == 0:
            rows.append(
                {
                    "n": n, "p": p, "excess_mean": float("nan"),
                    "excess_q10": float("nan"), "excess_q90": float("nan"),
                    "excess_raw_mean": float("nan"), "reps": 0,
                    "converged_frac": float("nan"),
                }
            )
            continue
        clamped = np.maximum(raws, 0.0)
        q10, q90 = np.quantile(clamped, [0.1, 0.9])
        assert q10 <= q90
        rows.append(
            {
                "n": n,
                "p": p,
                "excess_mean": float(clamped.mean()),
                "excess_q10": float(q10),
                "excess_q90": float(q90),
                "excess_raw_mean": float(raws.mean()),
                "reps": int(raws.size),
                "converged_frac": float(conv.mean()),
            }
        )
    if keep_reps:
        return rows, rep_records
    return rows


# ---------------------------------------------------------------------------
# excess-risk identity cross-check


@dataclass(frozen=True)
class CrossCheckResult:
    """Identity-based vs direct excess-AM-risk estimates."""

    identity: MCEstimate
    direct: MCEstimate
    difference: float
    combined_se: float
    n_se: float

    @property
    def agree(self) -> bool:
        return abs(self.difference) <= 3.0 * self.combined_se


def identity_cross_check(
    p: float = 0.05,
    draws: int = 1_000_000,
    seed: int = 0,
    params: Optional[StudentMixtureParams] = None,
) -> CrossCheckResult:
    """Check the excess-risk identity on the always-positive rule.

    The identity route averages 1{g != g*} |eta - p| / (p(1-p)) over
    feature draws.  The direct route estimates the same quantity as a
    risk difference, where the risk is the identity's own normalization:
    the sum err_pos + err_neg of the class-conditional error rates
    (twice the AM average).  For the constant +1 rule that sum is
    exactly 1 (no error on positives, total error on negatives), so
    only the oracle risk needs estimating.  Both routes use ``draws``
    draws.
    """
    params = params or StudentMixtureParams.default(p)
    if params.p != p:
        raise ValueError("params.p must match p")
    oracle = BayesOracle(eta=EtaFn(params), p=p)
    identity = excess_am_risk_identity(
        oracle,
        ConstantClassifier(1),
        MarginalSampler(params),
        draws,
        seed=_int_seed(seed, 0),
    )
    rng_pos = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    rng_neg = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    err_pos = bayes_balanced_classify(oracle, params.sample_class(1, draws, rng_pos)) == -1
    err_neg = bayes_balanced_classify(oracle, params.sample_class(-1, draws, rng_neg)) == 1
    rate_pos = float(np.mean(err_pos))
    rate_neg = float(np.mean(err_neg))
    oracle_risk = rate_pos + rate_neg
    se = float(
        np.sqrt(
            rate_pos * (1 - rate_pos) / draws + rate_neg * (1 - rate_neg) / draws
        )
    )
    direct = MCEstimate(1.0 - oracle_risk, se, 2 * draws)
    diff = identity.value - direct.value
    combined = float(np.hypot(identity.stderr, direct.stderr))
    return CrossCheckResult(
        identity=identity,
        direct=direct,
        difference=diff,
        combined_se=combined,
        n_se=abs(diff) / combined if combined > 0 else float("inf"),
    )


# ---------------------------------------------------------------------------
# bound report

REPORT_COLUMNS = ("bound", "value", "valid")


def _report_row(name: str, fn) -> dict:
    try:
        value, valid = fn()
    except ValueError:
        value, valid = float("nan"), False
    return {"bound": name, "value": float(value), "valid": bool(valid)}


def run_bound_report(
    inputs: BoundInputs,
    K_slow: float = 60.0,
    K_fast: float = 2.0,
    d: Optional[int] = None,
    deriv_bound: Optional[float] = None,
    curvature_min: Optional[float] = None,
    knn_params: Optional[bounds_mod.KnnBoundParams] = None,
    k: Optional[int] = None,
    constants: Optional[ConstantTable] = None,
) -> list[dict]:
    """Evaluate every applicable bound at one input set.

    Returns rows (bound, value, valid).  A row whose preconditions fail
    carries valid=False (NaN value if the formula itself rejected the
    inputs); other rows are unaffected.  The constrained-minimizer row
    needs d, deriv_bound and curvature_min; the radius-envelope row
    needs knn_params and k.
    """
    constants = constants or default_constants()
    B = inputs.B if inputs.B is not None else 2.0 * inputs.U
    v_t, A_t = bounds_mod.vc_transform(inputs.v, inputs.A)
    q = inputs.q_eff
    rows = [
        _report_row("c_subroot", lambda: (constants.c_subroot, True)),
        _report_row("c1", lambda: (constants.c1, True)),
        _report_row("v_transformed", lambda: (v_t, True)),
        _report_row("A_transformed", lambda: (A_t, True)),
    ]

    def slow():
        r = bounds_mod.slow_rate_bound(inputs, K=K_slow)
        return r.value, r.valid

    def slow_erm():
        r = bounds_mod.slow_rate_erm_bound(inputs, K=K_slow)
        return r.value, r.valid

    def fast():
        val = bounds_mod.fast_rate_bound(
            inputs.n, q, B, v_t, A_t, inputs.delta, K_fast, constants
        )
        return val, B >= 2.0 * inputs.U

    slow_row = _report_row("slow_rate", slow)
    fast_row = _report_row("fast_rate", fast)
    rows.append(slow_row)
    rows.append(_report_row("slow_rate_erm", slow_erm))
    rows.append(fast_row)

    def ratio():
        return fast_row["value"] / slow_row["value"], bool(
            slow_row["valid"] and fast_row["valid"] and slow_row["value"] > 0
        )

    rows.append(_report_row("fast_slow_ratio", ratio))

    mu_count = inputs.n * inputs.p
    rows.append(
        _report_row(
            "chernoff_lower",
            lambda: (bounds_mod.chernoff_interval(mu_count, inputs.delta)[0], True),
        )
    )
    rows.append(
        _report_row(
            "chernoff_upper",
            lambda: (bounds_mod.chernoff_interval(mu_count, inputs.delta)[1], True),
        )
    )

    pr = bounds_mod.p_ratio_bound(inputs.n, inputs.p, inputs.delta)
    rows.append(_report_row("p_ratio_z", lambda: (pr.z, True)))
    rows.append(_report_row("p_ratio", lambda: (pr.ratio_bound, pr.valid)))
    rows.append(_report_row("p_ratio_simple", lambda: (pr.simple_bound, pr.simple_valid)))

    if d is not None and deriv_bound is not None and curvature_min is not None:
        def bern():
            return (
                bounds_mod.bernstein_constant_linear(
                    deriv_bound, curvature_min, inputs.sigma_max, inputs.sigma_min
                ),
                True,
            )

        def constrained():
            return (
                bounds_mod.constrained_excess_bound(
                    inputs.n, q, d, deriv_bound, curvature_min,
                    inputs.sigma_max, inputs.sigma_min, inputs.A, inputs.delta,
                    constants,
                ),
                True,
            )

        rows.append(_report_row("bernstein_constant", bern))
        rows.append(_report_row("constrained_excess", constrained))

    if knn_params is not None and k is not None:
        def envelope():
            r = bounds_mod.knn_radius_envelope(knn_params, k, inputs.n)
            return r.tau_bar, r.precondition_ok

        rows.append(_report_row("knn_radius_envelope", envelope))
    return rows


# ---------------------------------------------------------------------------
# CSV output

CSV_FLOAT_FORMAT = "%.17g"


def _format_cell(value) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return CSV_FLOAT_FORMAT % float(value)
    return str(value)


def write_csv(
    out: str | IO[str],
    columns: Sequence[str],
    rows: Sequence[dict],
    comments: Optional[dict] = None,
) -> None:
    """Write rows with a fixed column order and # key=value comments.

    Floats use 17 significant digits, which round-trips float64 exactly.
    """
    own = isinstance(out, str)
    fh = open(out, "w", newline="") if own else out
    try:
        for key, value in (comments or {}).items():
            fh.write(f"# {key}={_format_cell(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row[col]) for col in columns])
    finally:
        if own:
            fh.close()


def read_csv_rows(path: str) -> tuple[dict, list[dict]]:
    """Read a file written by write_csv: (comments, row dicts of strings)."""
    comments: dict[str, str] = {}
    rows: list[dict] = []
    header: Optional[list[str]] = None
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                comments[key.strip()] = value
                continue
            record = next(csv.reader([line]))
            if header is None:
                header = record
            else:
                rows.append(dict(zip(header, record)))
    return comments, rows
