"""Penalty selection by k-fold or rolling-window cross-validation.

Each fold re-standardizes on its own training indices (in score space:
response centering, per-coordinate score centering, per-predictor rescaling to
unit mean squared norm), so no statistic ever leaks from validation rows.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import ScoreTensor
from .errors import DegeneratePredictorError, FoldError
from .kernels import EigenBasis
from .solver import FitOptions, fit_lambda_path


@dataclass(frozen=True)
class CvSpec:
    mode: str = "kfold"
    folds: int = 5
    rolling_train_frac: float = 0.75
    rolling_test_frac: float = 0.05
    rolling_shift_frac: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("kfold", "rolling"):
            raise ValueError("mode must be 'kfold' or 'rolling'")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        for name in ("rolling_train_frac", "rolling_test_frac", "rolling_shift_frac"):
            frac = getattr(self, name)
            if not 0 < frac < 1:
                raise ValueError(f"{name} must lie strictly between 0 and 1")
        if self.rolling_train_frac + self.rolling_test_frac > 1:
            raise ValueError("train and test fractions must sum to at most 1")


@dataclass(frozen=True)
class CvResult:
    lambdas: np.ndarray
    mean_error: np.ndarray
    per_fold_error: np.ndarray
    selected_lambda: float

    def __post_init__(self):
        lams = np.asarray(self.lambdas, dtype=float)
        mean = np.asarray(self.mean_error, dtype=float)
        per = np.asarray(self.per_fold_error, dtype=float)
        for a in (lams, mean, per):
            a.setflags(write=False)
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "mean_error", mean)
        object.__setattr__(self, "per_fold_error", per)
        if np.any(np.diff(lams) >= 0):
            raise ValueError("lambdas must be strictly decreasing")
        best = int(np.argmin(mean))  # first minimum == largest lambda on ties
        if self.selected_lambda != lams[best]:
            raise ValueError("selected_lambda must attain the minimal mean error")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_folds(spec: CvSpec, n: int):
    """Train/validation index pairs.

    kfold: a seeded permutation is split into near-equal contiguous blocks,
    each serving once as validation. rolling: fold f trains on an expanding
    prefix and validates on the block immediately after it, preserving
    temporal order.
    """
    if spec.mode == "kfold":
        if n < spec.folds:
            raise FoldError(f"cannot split {n} observations into {spec.folds} folds")
        rng = np.random.Generator(np.random.Philox(spec.seed))
        perm = rng.permutation(n)
        blocks = np.array_split(perm, spec.folds)
        folds = []
        for f in range(spec.folds):
            val = np.sort(blocks[f])
            train = np.sort(np.concatenate([blocks[g] for g in range(spec.folds) if g != f]))
            if val.size == 0 or train.size == 0:
                raise FoldError(f"fold {f + 1} is empty")
            folds.append((train, val))
        return folds

    train_size = max(1, _round_half_up(spec.rolling_train_frac * n))
    test_size = max(1, _round_half_up(spec.rolling_test_frac * n))
    shift = max(1, _round_half_up(spec.rolling_shift_frac * n))
    folds = []
    for f in range(spec.folds):
        end_train = train_size + f * shift
        end_val = end_train + test_size
        if end_val > n:
            raise FoldError(
                f"fold {f + 1} needs indices up to {end_val} but only {n} observations exist"
            )
        folds.append((np.arange(end_train), np.arange(end_train, end_val)))
    return folds


def _fold_standardize(scores: np.ndarray, y: np.ndarray, train):
    """Score-space analogue of dataset standardization, from training rows only."""
    s_tr = scores[train]
    y_mean = float(y[train].mean())
    col_means = s_tr.mean(axis=0)
    centered = s_tr - col_means[None]
    mean_sq = (centered**2).sum(axis=2).mean(axis=0)
    if np.any(mean_sq < 1e-14):
        j = int(np.argmax(mean_sq < 1e-14))
        raise DegeneratePredictorError(
            f"predictor {j} is constant on the training split"
        )
    scales = np.sqrt(mean_sq)
    return y_mean, col_means, scales


def _fold_errors(scores, y, basis, weights, path, opts, train, val):
    y_mean, col_means, scales = _fold_standardize(scores, y, train)
    s_tr = (scores[train] - col_means[None]) / scales[None, :, None]
    s_va = (scores[val] - col_means[None]) / scales[None, :, None]
    fits = fit_lambda_path(
        ScoreTensor(scores=s_tr, basis=basis), y[train] - y_mean, basis, path, weights, opts
    )
    errors = np.full(len(path), np.inf)
    for k, fit in enumerate(fits):
        if fit is None or fit.stop_reason == "kill-switch":
            continue
        pred = np.einsum("ipl,pl->i", s_va, fit.coefficients.coords) + y_mean
        errors[k] = float(np.sqrt(np.mean((pred - y[val]) ** 2)))
    return errors


def cross_validate(
    scores: ScoreTensor,
    y,
    basis: EigenBasis,
    weights,
    path,
    spec: CvSpec,
    opts: FitOptions = FitOptions(),
    threads: int = 1,
) -> CvResult:
    """Validation RMSE for every penalty level, averaged over folds.

    Penalty levels whose fit tripped the kill switch (or were never reached)
    score infinity in that fold. The selected penalty minimizes the mean RMSE,
    with ties broken toward the larger (sparser) value.
    """
    y = np.asarray(y, dtype=float)
    path = np.asarray(path, dtype=float)
    raw = scores.scores
    folds = make_folds(spec, raw.shape[0])

    def run_fold(f):
        train, val = folds[f]
        try:
            return _fold_errors(raw, y, basis, weights, path, opts, train, val)
        except Exception as exc:
            raise FoldError(f"fold {f + 1} failed: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_fold = np.stack(list(pool.map(run_fold, range(len(folds)))))
    else:
        per_fold = np.stack([run_fold(f) for f in range(len(folds))])

    mean_error = per_fold.mean(axis=0)
    if not np.isfinite(mean_error).any():
        raise FoldError("no penalty level produced a finite validation error")
    best = int(np.argmin(mean_error))
    return CvResult(
        lambdas=path,
        mean_error=mean_error,
        per_fold_error=per_fold,
        selected_lambda=float(path[best]),
    )
