"""Penalized least-squares solver for sparse scalar-on-function regression.

The estimator minimizes a squared loss over curve coefficients expanded in the
kernel eigenbasis, plus a weighted group penalty in the eigenvalue-weighted
(RKHS) norm. Blocks are updated cyclically with a closed-form soft-threshold:
with partial target c_j, the update is zero when ||c_j||_K <= lambda*w_j and
otherwise rescales c_j so its penalty norm drops by exactly lambda*w_j.

The block update treats each predictor's own Gram operator as the identity
(group-wise orthonormality), so the iteration is exact cyclic block descent on
`descent_objective`, the plain objective augmented with the block correction
0.5 * sum_j (||b_j||_K^2 - n^{-1}||S_j b_j||^2). That quantity decreases every
sweep and is what convergence reasoning relies on; the plain `objective_value`
is reported but is not monotone along the iterations in general.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dataset import (
    FunctionalDataset,
    ScoreTensor,
    StandardizationRecord,
    apply_standardization,
    project_scores,
    standardize,
)
from .errors import (
    DegeneratePathError,
    FunselError,
    InvalidWeightsError,
    NumericDivergenceError,
    SingularDesignError,
)
from .function_space import GridFunction
from .kernels import EigenBasis, KernelSpec, build_basis, truncate_basis

#: Coefficient rows with penalty norm below this are treated as exactly zero
#: (in particular before inverting stage-1 norms into adaptive weights).
ZERO_NORM = 1e-10


@dataclass(frozen=True)
class Coefficients:
    """Per-predictor coordinate rows b_{jl} in the eigenbasis, shape (p, m)."""

    coords: np.ndarray
    basis: EigenBasis

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        if c.ndim != 2 or c.shape[1] != self.basis.m:
            raise ValueError("coefficient array must have shape (p, m)")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")

    @property
    def p(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 1000
    tol: float = 1e-6
    kill_switch: Optional[int] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.kill_switch is not None and self.kill_switch < 1:
            raise ValueError("kill_switch must be at least 1 when given")


@dataclass(frozen=True)
class PathSpec:
    count: int = 100
    ratio: float = 0.05

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("path needs at least 2 values")
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie strictly between 0 and 1")


@dataclass(frozen=True)
class FitResult:
    coefficients: Coefficients
    active_set: tuple
    lam: float
    weights: np.ndarray
    n_iterations: int
    converged: bool
    stop_reason: str
    objective: float
    stage: str
    standardization: Optional[StandardizationRecord] = None
    objective_history: tuple = field(default=())
    descent_history: tuple = field(default=())

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "active_set", tuple(int(j) for j in self.active_set))


@dataclass(frozen=True)
class AdaptiveFit:
    """Two-stage result: plain fit, adaptive refit, and their CV traces."""

    stage1: FitResult
    stage2: FitResult
    cv_stage1: Optional[object] = None
    cv_stage2: Optional[object] = None


def rkhs_norm(row, basis: EigenBasis) -> float:
    """Penalty norm sqrt(sum_l b_l^2 / theta_l) of one coefficient row."""
    row = np.asarray(row, dtype=float)
    if row.shape != (basis.m,):
        raise ValueError(f"row must have length {basis.m}")
    return float(np.sqrt(np.sum(row**2 / basis.eigenvalues)))


def _row_norms(coords: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.sqrt((coords**2 / theta).sum(axis=1))


def _check_weights(weights, p: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (p,):
        raise InvalidWeightsError(f"weights must have length {p}")
    if np.any(np.isnan(w)) or np.any(w <= 0):
        raise InvalidWeightsError("weights must be strictly positive (inf allowed)")
    return w


def objective_value(coeffs: Coefficients, scores: ScoreTensor, y, lam: float, weights) -> float:
    """Squared loss (1/2n) sum (y_i - yhat_i)^2 plus lam * sum_j w_j ||b_j||_K.

    Rows that are exactly zero contribute nothing to the penalty, so excluded
    predictors may carry infinite weight.
    """
    y = np.asarray(y, dtype=float)
    S = scores.scores
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    w = _check_weights(weights, coeffs.p)
    fitted = np.einsum("ipl,pl->i", S, coeffs.coords)
    loss = 0.5 * float(np.mean((y - fitted) ** 2))
    norms = _row_norms(coeffs.coords, coeffs.basis.eigenvalues)
    active = norms > 0
    penalty = float(np.sum(w[active] * norms[active])) if active.any() else 0.0
    return loss + lam * penalty


def descent_objective(coeffs: Coefficients, scores: ScoreTensor, y, lam: float, weights) -> float:
    """The merit function the block updates minimize exactly.

    Equals objective_value plus 0.5 * sum_j (||b_j||_K^2 - n^{-1}||S_j b_j||^2);
    the correction is nonnegative for standardized scores and unit-trace
    kernels, and the coordinate sweeps decrease this quantity monotonically.
    """
    base = objective_value(coeffs, scores, y, lam, weights)
    S = scores.scores
    n = S.shape[0]
    theta = coeffs.basis.eigenvalues
    extra = 0.0
    for j in range(coeffs.p):
        b = coeffs.coords[j]
        if not b.any():
            continue
        fit_j = S[:, j, :] @ b
        extra += 0.5 * (float(np.sum(b**2 / theta)) - float(fit_j @ fit_j) / n)
    return base + extra


def partial_target(scores: ScoreTensor, y, coeffs: Coefficients, j: int) -> np.ndarray:
    """Coordinate vector of the j-th block target: theta_l * n^{-1} sum_i r_i s_{ijl},
    where the residual r excludes predictor j's own contribution."""
    y = np.asarray(y, dtype=float)
    S = scores.scores
    n = S.shape[0]
    others = coeffs.coords.copy()
    others[j] = 0.0
    r = y - np.einsum("ipl,pl->i", S, others)
    return scores.basis.eigenvalues * (S[:, j, :].T @ r) / n


def shrink_update(check, basis: EigenBasis, lam: float, weight: float) -> np.ndarray:
    """Soft-threshold a block target in the penalty norm.

    Returns zero when ||check||_K <= lam*weight, else (1 - lam*weight/nu)*check,
    whose penalty norm is exactly nu - lam*weight.
    """
    check = np.asarray(check, dtype=float)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if not weight > 0:
        raise InvalidWeightsError("weight must be positive")
    nu = rkhs_norm(check, basis)
    threshold = lam * weight
    if nu <= threshold:
        return np.zeros_like(check)
    return (1.0 - threshold / nu) * check


def lambda_max(scores: ScoreTensor, y, basis: EigenBasis, weights) -> float:
    """Smallest penalty level at which every predictor is discarded.

    Uses the same per-block arithmetic as the descent sweeps, so a fit at
    exactly this level stays empty rather than activating by one ulp.
    """
    y = np.asarray(y, dtype=float)
    S_pnm = np.ascontiguousarray(np.moveaxis(scores.scores, 1, 0))
    p, n, _ = S_pnm.shape
    w = _check_weights(weights, p)
    theta = basis.eigenvalues
    norms = np.empty(p)
    for j in range(p):
        g = (y @ S_pnm[j]) / n
        norms[j] = np.sqrt(float(np.sum(theta * g**2)))
    with np.errstate(divide="ignore"):
        vals = np.where(np.isinf(w), 0.0, norms / w)
    return float(vals.max())


def lambda_path(scores: ScoreTensor, y, basis: EigenBasis, weights, count: int = 100, ratio: float = 0.05) -> np.ndarray:
    """Geometric grid of `count` penalty levels from lambda_max down to ratio*lambda_max."""
    spec = PathSpec(count=count, ratio=ratio)
    lmax = lambda_max(scores, y, basis, weights)
    if lmax <= 0:
        raise DegeneratePathError("response is orthogonal to every predictor")
    exponents = np.arange(spec.count) / (spec.count - 1)
    return lmax * spec.ratio**exponents


def _cd_core(S_pnm, y, theta, lam, weights, opts, warm=None):
    """Cyclic block descent on the prearranged (p, n, m) score array.

    Returns (coords, n_iterations, converged, stop_reason, obj_history,
    descent_history, residual).
    """
    p, n, m = S_pnm.shape
    inv_theta = 1.0 / theta
    b = np.zeros((p, m)) if warm is None else np.array(warm, dtype=float)
    excluded = np.isinf(weights)
    b[excluded] = 0.0

    r = y - np.einsum("pnm,pm->n", S_pnm, b) if b.any() else y.copy()
    active = np.array([row.any() for row in b])
    n_active = int(active.sum())
    if opts.kill_switch is not None and n_active > opts.kill_switch:
        raise InvalidWeightsError(
            "warm start already exceeds the kill switch active-set cap"
        )

    obj_hist, desc_hist = [], []
    converged = False
    stop_reason = "max-iter"
    sweeps = 0
    for t in range(1, opts.max_iter + 1):
        sweeps = t
        prev = b.copy()
        killed = False
        for j in range(p):
            if excluded[j]:
                continue
            Sj = S_pnm[j]
            if active[j]:
                r += Sj @ b[j]
            g = (r @ Sj) / n
            nu = np.sqrt(float(np.sum(theta * g**2)))
            if not np.isfinite(nu):
                raise NumericDivergenceError(
                    f"non-finite block target for predictor {j} in sweep {t}", sweep=t
                )
            threshold = lam * weights[j]
            if nu > threshold:
                b[j] = (1.0 - threshold / nu) * (theta * g)
                r -= Sj @ b[j]
                if not active[j]:
                    active[j] = True
                    n_active += 1
                    if opts.kill_switch is not None and n_active > opts.kill_switch:
                        killed = True
                        break
            else:
                if active[j]:
                    active[j] = False
                    n_active -= 1
                b[j] = 0.0

        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(r))):
            raise NumericDivergenceError(
                f"non-finite values encountered in sweep {t}", sweep=t
            )

        loss = 0.5 * float(r @ r) / n
        norms = _row_norms(b, theta)
        nz = norms > 0
        penalty = float(np.sum(weights[nz] * norms[nz])) if nz.any() else 0.0
        obj = loss + lam * penalty
        extra = 0.0
        for j in np.nonzero(nz)[0]:
            fit_j = S_pnm[j] @ b[j]
            extra += 0.5 * (norms[j] ** 2 - float(fit_j @ fit_j) / n)
        obj_hist.append(obj)
        desc_hist.append(obj + extra)

        if killed:
            stop_reason = "kill-switch"
            break

        prev_norms = _row_norms(prev, theta)
        delta = _row_norms(b - prev, theta) / (1.0 + prev_norms)
        if delta.max() < opts.tol:
            converged = True
            stop_reason = "converged"
            break

    return b, sweeps, converged, stop_reason, tuple(obj_hist), tuple(desc_hist), r


def coordinate_descent(
    scores: ScoreTensor,
    y,
    basis: EigenBasis,
    lam: float,
    weights,
    opts: FitOptions = FitOptions(),
    warm_start: Optional[Coefficients] = None,
    stage: str = "plain",
) -> FitResult:
    """Solve the penalized problem at one penalty level by cyclic block sweeps.

    Sweeps run in fixed order over predictors, stopping when the largest
    relative change in penalty norm falls below `opts.tol`, the iteration cap
    is hit, or the active set exceeds `opts.kill_switch` (reported as a
    non-converged fit). Predictors with infinite weight stay at zero.
    """
    y = np.asarray(y, dtype=float)
    S = scores.scores
    n, p, m = S.shape
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    w = _check_weights(weights, p)
    S_pnm = np.ascontiguousarray(np.moveaxis(S, 1, 0))
    warm = warm_start.coords if warm_start is not None else None
    b, sweeps, converged, reason, obj_hist, desc_hist, _ = _cd_core(
        S_pnm, y, basis.eigenvalues, lam, w, opts, warm=warm
    )
    coeffs = Coefficients(coords=b, basis=basis)
    active = tuple(int(j) for j in range(p) if b[j].any())
    return FitResult(
        coefficients=coeffs,
        active_set=active,
        lam=float(lam),
        weights=w,
        n_iterations=sweeps,
        converged=converged,
        stop_reason=reason,
        objective=objective_value(coeffs, scores, y, lam, w),
        stage=stage,
        objective_history=obj_hist,
        descent_history=desc_hist,
    )


def fit_lambda_path(scores: ScoreTensor, y, basis: EigenBasis, path, weights, opts: FitOptions, stage: str = "plain"):
    """Fit a descending penalty path with warm starts.

    Returns one FitResult per path value; once a fit trips the kill switch the
    remaining (smaller) penalties are left as None.
    """
    y = np.asarray(y, dtype=float)
    S_pnm = np.ascontiguousarray(np.moveaxis(scores.scores, 1, 0))
    p = S_pnm.shape[0]
    w = _check_weights(weights, p)
    theta = basis.eigenvalues
    results: list[Optional[FitResult]] = []
    warm = None
    for lam in path:
        b, sweeps, converged, reason, obj_hist, desc_hist, _ = _cd_core(
            S_pnm, y, theta, float(lam), w, opts, warm=warm
        )
        coeffs = Coefficients(coords=b, basis=basis)
        result = FitResult(
            coefficients=coeffs,
            active_set=tuple(int(j) for j in range(p) if b[j].any()),
            lam=float(lam),
            weights=w,
            n_iterations=sweeps,
            converged=converged,
            stop_reason=reason,
            objective=objective_value(coeffs, scores, y, float(lam), w),
            stage=stage,
            objective_history=obj_hist,
            descent_history=desc_hist,
        )
        results.append(result)
        if reason == "kill-switch":
            break
        warm = b
    results.extend([None] * (len(path) - len(results)))
    return results


def adaptive_fit(
    scores: ScoreTensor,
    y,
    basis: EigenBasis,
    opts: FitOptions = FitOptions(),
    path_spec: PathSpec = PathSpec(),
    cv_spec=None,
    threads: int = 1,
) -> AdaptiveFit:
    """Two-stage fit: unit-weight path with CV, then adaptive reweighted path.

    Stage 2 keeps only stage-1 survivors, weighting each by the reciprocal of
    its stage-1 penalty norm, and reuses the same CV folds. An empty stage-1
    model short-circuits: stage 2 is the same empty fit flagged `stage1-empty`.
    """
    from .model_selection import CvSpec, cross_validate

    if cv_spec is None:
        cv_spec = CvSpec()
    y = np.asarray(y, dtype=float)
    p = scores.scores.shape[1]

    w1 = np.ones(p)
    path1 = lambda_path(scores, y, basis, w1, count=path_spec.count, ratio=path_spec.ratio)
    cv1 = cross_validate(scores, y, basis, w1, path1, cv_spec, opts, threads=threads)
    stage1 = coordinate_descent(scores, y, basis, cv1.selected_lambda, w1, opts, stage="plain")

    norms1 = _row_norms(stage1.coefficients.coords, basis.eigenvalues)
    survivors = norms1 >= ZERO_NORM
    if not survivors.any():
        stage2 = replace(stage1, stage="adaptive", stop_reason="stage1-empty")
        return AdaptiveFit(stage1=stage1, stage2=stage2, cv_stage1=cv1, cv_stage2=None)

    w2 = np.full(p, np.inf)
    w2[survivors] = 1.0 / norms1[survivors]
    path2 = lambda_path(scores, y, basis, w2, count=path_spec.count, ratio=path_spec.ratio)
    cv2 = cross_validate(scores, y, basis, w2, path2, cv_spec, opts, threads=threads)
    stage2 = coordinate_descent(scores, y, basis, cv2.selected_lambda, w2, opts, stage="adaptive")
    return AdaptiveFit(stage1=stage1, stage2=stage2, cv_stage1=cv1, cv_stage2=cv2)


@dataclass(frozen=True)
class KktReport:
    """Fixed-point optimality check, one row per predictor."""

    is_active: np.ndarray
    residual: np.ndarray
    bound: np.ndarray
    passed: np.ndarray

    @property
    def all_passed(self) -> bool:
        return bool(self.passed.all())


def kkt_check(fit: FitResult, scores: ScoreTensor, y, basis: EigenBasis, tol: float = 1e-5) -> KktReport:
    """Verify the converged fit is a fixed point of the block update.

    Active predictors must reproduce themselves under the soft-threshold of
    their own partial target; inactive ones must have partial-target norm
    below lam * weight (up to slack tol).
    """
    y = np.asarray(y, dtype=float)
    p = fit.coefficients.p
    coords = fit.coefficients.coords
    is_active = np.array([coords[j].any() for j in range(p)])
    residual = np.zeros(p)
    bound = np.zeros(p)
    for j in range(p):
        c = partial_target(scores, y, fit.coefficients, j)
        if is_active[j]:
            updated = shrink_update(c, basis, fit.lam, fit.weights[j])
            residual[j] = rkhs_norm(coords[j] - updated, basis)
            bound[j] = tol * (1.0 + rkhs_norm(coords[j], basis))
        else:
            residual[j] = rkhs_norm(c, basis)
            bound[j] = fit.lam * fit.weights[j] * (1.0 + tol)
    return KktReport(
        is_active=is_active,
        residual=residual,
        bound=bound,
        passed=residual <= bound,
    )


def oracle_fit(scores: ScoreTensor, y, active) -> Coefficients:
    """Unpenalized least squares on the stacked scores of the active predictors."""
    y = np.asarray(y, dtype=float)
    S = scores.scores
    n, p, m = S.shape
    active = sorted(set(int(j) for j in active))
    coords = np.zeros((p, m))
    if not active:
        return Coefficients(coords=coords, basis=scores.basis)
    design = S[:, active, :].reshape(n, len(active) * m)
    svals = np.linalg.svd(design, compute_uv=False)
    cutoff = max(design.shape) * np.finfo(float).eps * svals[0]
    if svals[-1] <= cutoff:
        raise SingularDesignError(
            f"stacked score design is rank deficient (smallest singular value {svals[-1]:g})",
            smallest_singular_value=float(svals[-1]),
        )
    solution, *_ = np.linalg.lstsq(design, y, rcond=None)
    coords[active, :] = solution.reshape(len(active), m)
    return Coefficients(coords=coords, basis=scores.basis)


def predict(fit: FitResult, new_data: FunctionalDataset) -> np.ndarray:
    """Predict responses for new curves by replaying the stored standardization."""
    if fit.standardization is None:
        raise FunselError("fit carries no standardization record; cannot predict")
    basis = fit.coefficients.basis
    standardized = apply_standardization(fit.standardization, new_data)
    scores = project_scores(standardized, basis)
    fitted = np.einsum("ipl,pl->i", scores.scores, fit.coefficients.coords)
    return fitted + fit.standardization.response_mean


def reconstruct_curve(row, basis: EigenBasis) -> GridFunction:
    """Turn one coefficient row back into a curve on the basis grid."""
    row = np.asarray(row, dtype=float)
    if row.shape != (basis.m,):
        raise ValueError(f"row must have length {basis.m}")
    return GridFunction(grid=basis.grid, values=row @ basis.functions)


@dataclass(frozen=True)
class PipelineFit:
    """End-to-end fit of a dataset: standardization, basis, scores, both stages."""

    stage1: FitResult
    stage2: FitResult
    cv_stage1: Optional[object]
    cv_stage2: Optional[object]
    basis: EigenBasis
    record: StandardizationRecord
    scores: ScoreTensor
    response: np.ndarray


def fit_dataset(
    data: FunctionalDataset,
    kernel: KernelSpec,
    basis_fraction: float = 0.99,
    opts: FitOptions = FitOptions(),
    path_spec: PathSpec = PathSpec(),
    cv_spec=None,
    threads: int = 1,
) -> PipelineFit:
    """Standardize, build and truncate the eigenbasis, project, and run the
    two-stage adaptive fit. Stage results carry the standardization record so
    they can predict on raw curves."""
    standardized, record = standardize(data)
    basis = truncate_basis(build_basis(kernel, data.grid), data.n, basis_fraction)
    scores = project_scores(standardized, basis)
    fit = adaptive_fit(
        scores,
        standardized.response,
        basis,
        opts=opts,
        path_spec=path_spec,
        cv_spec=cv_spec,
        threads=threads,
    )
    stage1 = replace(fit.stage1, standardization=record)
    stage2 = replace(fit.stage2, standardization=record)
    return PipelineFit(
        stage1=stage1,
        stage2=stage2,
        cv_stage1=fit.cv_stage1,
        cv_stage2=fit.cv_stage2,
        basis=basis,
        record=record,
        scores=scores,
        response=standardized.response,
    )
