"""Synthetic data generator and evaluation harness for selection benchmarks.

Predictor curves are random sums of five sine terms with frequency tied to the
amplitude draw; true coefficient curves come from a fixed catalog of gamma- and
exponential-density shapes (constants documented in the README). Noise is
calibrated so var(signal)/var(noise) matches the requested ratio.

All randomness flows through counter-based Philox streams spawned from the
scenario seed (one child per replication, then separate grandchildren for
train curves, train noise, test curves, test noise, and fold shuffling), and
normals are produced by inverse-CDF from the uniform stream, so results are
bit-reproducible regardless of thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .dataset import FunctionalDataset
from .errors import DegenerateSignalError, ScenarioError
from .function_space import Grid, GridFunction, uniform_grid
from .kernels import KernelSpec
from .model_selection import CvSpec
from .solver import (
    FitOptions,
    FitResult,
    PathSpec,
    fit_dataset,
    kkt_check,
    objective_value,
    oracle_fit,
    predict,
)

NOISE_FREE_SNR = 1e12


@dataclass(frozen=True)
class Scenario:
    p: int
    p0: int
    snr: float
    seed: int
    n: int = 500
    grid_size: int = 50
    n_test: int = 100

    def __post_init__(self):
        if self.p0 > self.p:
            raise ScenarioError("p0 cannot exceed p")
        if not self.snr > 0:
            raise ScenarioError("snr must be positive")
        if self.n < 2:
            raise ScenarioError("need at least 2 observations")
        if self.n_test < 1:
            raise ScenarioError("need at least 1 test observation")
        if self.grid_size < 2:
            raise ScenarioError("grid needs at least 2 points")


@dataclass(frozen=True)
class SelectionMetrics:
    tp: int
    fp: int
    rmse: float


#: (kind, shape-or-rate, stretch, peak); each curve is a gamma or exponential
#: density evaluated at stretch*t and rescaled so its maximum equals `peak`.
BETA_CATALOG = (
    ("gamma", 3.0, 8.0, 3.0),
    ("exponential", 2.5, 1.0, 3.0),
    ("gamma", 6.0, 12.0, 3.2),
    ("exponential", 4.0, 1.0, 3.5),
    ("gamma", 8.0, 14.0, 2.8),
    ("exponential", 2.0, 1.0, 2.5),
    ("gamma", 2.0, 7.0, 3.0),
    ("exponential", 5.0, 1.0, 3.2),
    ("gamma", 10.0, 16.0, 2.6),
    ("exponential", 3.0, 1.0, 2.7),
)


def _gamma_pdf(x: np.ndarray, shape: float) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] ** (shape - 1.0) * np.exp(-x[pos]) / math.gamma(shape)
    return out


def true_betas(p0: int, grid: Grid):
    """The first p0 curves of the fixed coefficient catalog."""
    if p0 not in (5, 10):
        raise ScenarioError(f"the coefficient catalog supports p0 in {{5, 10}}, got {p0}")
    t = grid.points
    betas = []
    for kind, param, stretch, peak in BETA_CATALOG[:p0]:
        x = stretch * t
        if kind == "gamma":
            mode_value = _gamma_pdf(np.array([param - 1.0]), param)[0]
            values = (peak / mode_value) * _gamma_pdf(x, param)
        else:
            # exponential density rate * exp(-rate * x) peaks at the origin
            values = peak * np.exp(-param * x)
        betas.append(GridFunction(grid=grid, values=values))
    return betas


def _replication_streams(scenario: Scenario, replications: int):
    root = np.random.SeedSequence(scenario.seed)
    return [rep.spawn(5) for rep in root.spawn(replications)]


def _uniform_open(gen: np.random.Generator, size) -> np.ndarray:
    # strictly inside (0,1) so the inverse normal CDF stays finite
    return (gen.integers(0, 1 << 53, size=size, dtype=np.uint64) + 0.5) / (1 << 53)


def _normals(seed_seq, size) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(seed_seq))
    return ndtri(_uniform_open(gen, size))


def sine_mixture(amplitudes: np.ndarray, shifts: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Curve values 0.01 * (sum_r (a_r sin(2 pi t (5 - a_r)) - m_r) + 15).

    `amplitudes` and `shifts` have the mixture terms on their last axis; the
    result appends the grid axis.
    """
    a = np.asarray(amplitudes, dtype=float)[..., None]
    m = np.asarray(shifts, dtype=float)[..., None]
    terms = a * np.sin(2.0 * np.pi * points * (5.0 - a)) - m
    return 0.01 * (terms.sum(axis=-2) + 15.0)


def _draw_curves(seed_seq, n: int, p: int, grid: Grid) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(seed_seq))
    a = 5.0 * _uniform_open(gen, (n, p, 5))
    shift = 2.0 * np.pi * _uniform_open(gen, (n, p, 5))
    return sine_mixture(a, shift, grid.points)


def scenario_grid(scenario: Scenario) -> Grid:
    return uniform_grid(scenario.grid_size)


def generate_predictors(scenario: Scenario, replication: int = 0, stream: str = "train") -> np.ndarray:
    """Curves for one replication, shape (n or n_test, p, grid_size).

    Train and test curves come from disjoint child streams of the replication
    seed; identical scenarios produce bit-identical draws.
    """
    if stream not in ("train", "test"):
        raise ValueError("stream must be 'train' or 'test'")
    kids = _replication_streams(scenario, replication + 1)[replication]
    grid = scenario_grid(scenario)
    if stream == "train":
        return _draw_curves(kids[0], scenario.n, scenario.p, grid)
    return _draw_curves(kids[2], scenario.n_test, scenario.p, grid)


def signal_values(curves: np.ndarray, betas, grid: Grid) -> np.ndarray:
    """Noise-free responses sum_j <beta_j, X_ij> over the catalog curves."""
    beta_mat = np.stack([b.values for b in betas])
    return np.einsum("ijg,jg,g->i", curves[:, : len(betas), :], beta_mat, grid.weights)


def generate_response(curves: np.ndarray, betas, snr: float, seed) -> tuple:
    """Responses with noise variance var(signal)/snr; returns (y, sigma2).

    At snr >= NOISE_FREE_SNR the noise draw is skipped entirely and the exact
    signal is returned.
    """
    if not snr > 0:
        raise ScenarioError("snr must be positive")
    grid = betas[0].grid
    y_true = signal_values(curves, betas, grid)
    var = float(np.var(y_true, ddof=1))
    if var <= 0:
        raise DegenerateSignalError("noise-free responses have zero variance")
    sigma2 = var / snr
    if snr >= NOISE_FREE_SNR:
        return y_true, sigma2
    noise = math.sqrt(sigma2) * _normals(seed, y_true.shape[0])
    return y_true + noise, sigma2


def selection_metrics(fit: FitResult, true_active, predictions, actual) -> SelectionMetrics:
    """Support-recovery counts against the known truth plus prediction RMSE."""
    active = set(fit.active_set)
    truth = set(int(j) for j in true_active)
    predictions = np.asarray(predictions, dtype=float)
    actual = np.asarray(actual, dtype=float)
    rmse = float(np.sqrt(np.mean((predictions - actual) ** 2)))
    return SelectionMetrics(
        tp=len(active & truth), fp=len(active - truth), rmse=rmse
    )


@dataclass(frozen=True)
class ReplicationOutcome:
    replication: int
    metrics: SelectionMetrics
    lambda1: float
    lambda2: float
    n_iter1: int
    n_iter2: int
    oracle_rmse: float
    kkt_passed: bool


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    kernel: KernelSpec
    rows: tuple

    @property
    def mean_tp(self) -> float:
        return float(np.mean([r.metrics.tp for r in self.rows]))

    @property
    def mean_fp(self) -> float:
        return float(np.mean([r.metrics.fp for r in self.rows]))

    @property
    def mean_rmse(self) -> float:
        return float(np.mean([r.metrics.rmse for r in self.rows]))

    def csv_text(self) -> str:
        lines = ["replication,tp,fp,rmse,lambda1,lambda2,n_iter1,n_iter2"]
        for r in self.rows:
            lines.append(
                f"{r.replication},{r.metrics.tp},{r.metrics.fp},{r.metrics.rmse!r},"
                f"{r.lambda1!r},{r.lambda2!r},{r.n_iter1},{r.n_iter2}"
            )
        mean = [
            np.mean([r.metrics.tp for r in self.rows]),
            np.mean([r.metrics.fp for r in self.rows]),
            np.mean([r.metrics.rmse for r in self.rows]),
            np.mean([r.lambda1 for r in self.rows]),
            np.mean([r.lambda2 for r in self.rows]),
            np.mean([r.n_iter1 for r in self.rows]),
            np.mean([r.n_iter2 for r in self.rows]),
        ]
        lines.append("mean," + ",".join(repr(float(v)) for v in mean))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.csv_text())


def _run_replication(scenario: Scenario, kernel: KernelSpec, rep: int, streams, opts, path_spec):
    grid = scenario_grid(scenario)
    betas = true_betas(scenario.p0, grid)
    names = tuple(f"X{j + 1:03d}" for j in range(scenario.p))

    train_x = _draw_curves(streams[0], scenario.n, scenario.p, grid)
    y_train, sigma2 = generate_response(train_x, betas, scenario.snr, streams[1])
    test_x = _draw_curves(streams[2], scenario.n_test, scenario.p, grid)
    y_test = signal_values(test_x, betas, grid)
    if scenario.snr < NOISE_FREE_SNR:
        y_test = y_test + math.sqrt(sigma2) * _normals(streams[3], scenario.n_test)

    train = FunctionalDataset(
        grid=grid,
        values=train_x,
        response=y_train,
        predictor_names=names,
        obs_ids=tuple(f"i{i:04d}" for i in range(scenario.n)),
    )
    test = FunctionalDataset(
        grid=grid,
        values=test_x,
        response=y_test,
        predictor_names=names,
        obs_ids=tuple(f"j{i:04d}" for i in range(scenario.n_test)),
    )

    cv_seed = int(streams[4].generate_state(1)[0])
    pipeline = fit_dataset(
        train,
        kernel,
        opts=opts,
        path_spec=path_spec,
        cv_spec=CvSpec(mode="kfold", folds=5, seed=cv_seed),
    )

    predictions = predict(pipeline.stage2, test)
    true_active = range(scenario.p0)
    metrics = selection_metrics(pipeline.stage2, true_active, predictions, y_test)

    orc = oracle_fit(pipeline.scores, pipeline.response, true_active)
    orc_fit = FitResult(
        coefficients=orc,
        active_set=tuple(true_active),
        lam=0.0,
        weights=np.ones(scenario.p),
        n_iterations=0,
        converged=True,
        stop_reason="least-squares",
        objective=objective_value(orc, pipeline.scores, pipeline.response, 0.0, np.ones(scenario.p)),
        stage="oracle",
        standardization=pipeline.record,
    )
    oracle_rmse = float(np.sqrt(np.mean((predict(orc_fit, test) - y_test) ** 2)))

    kkt_ok = True
    for stage_fit in (pipeline.stage1, pipeline.stage2):
        if stage_fit.converged:
            report = kkt_check(stage_fit, pipeline.scores, pipeline.response, pipeline.basis)
            kkt_ok = kkt_ok and report.all_passed

    return ReplicationOutcome(
        replication=rep + 1,
        metrics=metrics,
        lambda1=pipeline.stage1.lam,
        lambda2=pipeline.stage2.lam,
        n_iter1=pipeline.stage1.n_iterations,
        n_iter2=pipeline.stage2.n_iterations,
        oracle_rmse=oracle_rmse,
        kkt_passed=kkt_ok,
    )


def run_scenario(
    scenario: Scenario,
    kernel: KernelSpec,
    replications: int,
    opts: Optional[FitOptions] = None,
    path_spec: PathSpec = PathSpec(),
    threads: int = 1,
) -> ScenarioResult:
    """Generate, fit, and evaluate `replications` independent datasets.

    Defaults mirror the benchmark driver: a kill switch of 2*p0 and the
    standard 100-value penalty path. Replications are independent and may run
    on several threads; row order is by replication id either way.
    """
    if replications < 1:
        raise ScenarioError("need at least 1 replication")
    if opts is None:
        opts = FitOptions(kill_switch=2 * scenario.p0)
    streams = _replication_streams(scenario, replications)

    def job(rep):
        return _run_replication(scenario, kernel, rep, streams[rep], opts, path_spec)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = tuple(pool.map(job, range(replications)))
    else:
        rows = tuple(job(rep) for rep in range(replications))
    return ScenarioResult(scenario=scenario, kernel=kernel, rows=rows)
