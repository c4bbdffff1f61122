import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from funsel.dataset import FunctionalDataset, ScoreTensor, project_scores, standardize
from funsel.errors import (
    DegeneratePathError,
    FunselError,
    InvalidWeightsError,
    NumericDivergenceError,
    SingularDesignError,
)
from funsel.function_space import uniform_grid
from funsel.kernels import KernelSpec, build_basis, truncate_basis
from funsel.model_selection import CvSpec
from funsel.solver import (
    Coefficients,
    FitOptions,
    adaptive_fit,
    coordinate_descent,
    descent_objective,
    fit_lambda_path,
    kkt_check,
    lambda_max,
    lambda_path,
    objective_value,
    oracle_fit,
    partial_target,
    predict,
    reconstruct_curve,
    rkhs_norm,
    shrink_update,
)

from helpers import (
    fixed_point_norm_root,
    prox_grad_reference,
    standardized_instance,
    synthetic_basis,
)


def unit_theta_basis(m=1):
    theta = np.full(m, 1.0 / m) if m > 1 else np.array([1.0])
    return synthetic_basis(17, m, theta=theta)


class TestRkhsNorm:
    def test_first_axis(self):
        basis = synthetic_basis(0, 3)
        row = np.zeros(3)
        row[0] = 1.0
        assert abs(rkhs_norm(row, basis) - 1 / np.sqrt(basis.eigenvalues[0])) < 1e-12

    def test_zero(self):
        basis = synthetic_basis(1, 4)
        assert rkhs_norm(np.zeros(4), basis) == 0.0

    def test_hand_value(self):
        basis = synthetic_basis(2, 2, theta=np.array([0.5, 0.25]))
        assert abs(rkhs_norm(np.array([1.0, 1.0]), basis) - np.sqrt(6)) < 1e-12


class TestObjective:
    def test_zero_coefficients(self):
        scores, y, basis = standardized_instance(0, 20, 3, 2)
        coeffs = Coefficients(coords=np.zeros((3, 2)), basis=basis)
        expected = 0.5 * np.mean(y**2)
        assert abs(objective_value(coeffs, scores, y, 0.7, np.ones(3)) - expected) < 1e-12

    def test_lambda_zero_is_pure_loss(self):
        scores, y, basis = standardized_instance(1, 15, 2, 2)
        coords = np.random.default_rng(0).normal(size=(2, 2))
        coeffs = Coefficients(coords=coords, basis=basis)
        fitted = np.einsum("ipl,pl->i", scores.scores, coords)
        expected = 0.5 * np.mean((y - fitted) ** 2)
        assert abs(objective_value(coeffs, scores, y, 0.0, np.ones(2)) - expected) < 1e-12

    def test_hand_value(self):
        basis = unit_theta_basis()
        scores = ScoreTensor(scores=np.array([[[1.0]]]), basis=basis)
        coeffs = Coefficients(coords=np.array([[1.0]]), basis=basis)
        value = objective_value(coeffs, scores, np.array([2.0]), 1.0, np.array([1.0]))
        assert abs(value - 1.5) < 1e-12

    def test_invalid_weights(self):
        scores, y, basis = standardized_instance(2, 10, 2, 2)
        coeffs = Coefficients(coords=np.zeros((2, 2)), basis=basis)
        with pytest.raises(InvalidWeightsError):
            objective_value(coeffs, scores, y, 1.0, np.array([1.0, 0.0]))

    def test_infinite_weight_on_zero_row_is_fine(self):
        scores, y, basis = standardized_instance(3, 10, 2, 2)
        coeffs = Coefficients(coords=np.zeros((2, 2)), basis=basis)
        value = objective_value(coeffs, scores, y, 1.0, np.array([1.0, np.inf]))
        assert np.isfinite(value)


class TestPartialTarget:
    def test_zero_coefficients_full_residual(self):
        scores, y, basis = standardized_instance(4, 12, 3, 2)
        coeffs = Coefficients(coords=np.zeros((3, 2)), basis=basis)
        got = partial_target(scores, y, coeffs, 1)
        S = scores.scores
        expected = basis.eigenvalues * (S[:, 1, :].T @ y) / len(y)
        assert np.allclose(got, expected, atol=1e-14)

    def test_all_zero(self):
        scores, _, basis = standardized_instance(5, 12, 2, 2)
        coeffs = Coefficients(coords=np.zeros((2, 2)), basis=basis)
        got = partial_target(scores, np.zeros(12), coeffs, 0)
        assert np.allclose(got, 0.0)

    def test_hand_cancellation(self):
        basis = unit_theta_basis()
        scores = ScoreTensor(scores=np.array([[[1.0]], [[-1.0]]]), basis=basis)
        coeffs = Coefficients(coords=np.array([[0.0]]), basis=basis)
        got = partial_target(scores, np.array([1.0, 1.0]), coeffs, 0)
        assert abs(got[0]) < 1e-15


class TestShrinkUpdate:
    def test_multiplicative_case(self):
        basis = synthetic_basis(6, 2, theta=np.array([0.8, 0.2]))
        check = np.array([0.3, 0.1])
        nu = rkhs_norm(check, basis)
        lam_weight = 0.25 * nu  # knorm 2 vs 0.5 scaled
        out = shrink_update(check, basis, lam_weight, 1.0)
        assert np.allclose(out, 0.75 * check)
        assert abs(rkhs_norm(out, basis) - (nu - lam_weight)) < 1e-12
        # against the numeric fixed-point root
        assert abs(rkhs_norm(out, basis) - fixed_point_norm_root(nu, lam_weight)) < 1e-10

    def test_threshold_case(self):
        basis = synthetic_basis(7, 3)
        check = np.array([0.01, 0.0, 0.0])
        out = shrink_update(check, basis, 10.0, 1.0)
        assert np.array_equal(out, np.zeros(3))

    def test_lambda_zero_identity(self):
        basis = synthetic_basis(8, 3)
        check = np.random.default_rng(0).normal(size=3)
        assert np.array_equal(shrink_update(check, basis, 0.0, 1.0), check)

    @settings(max_examples=100, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        frac=st.floats(0.01, 2.0),
    )
    def test_contraction_property(self, seed, frac):
        rng = np.random.default_rng(seed)
        basis = synthetic_basis(9, 3)
        check = rng.normal(size=3)
        nu = rkhs_norm(check, basis)
        lam_weight = frac * nu
        out = shrink_update(check, basis, lam_weight, 1.0)
        assert abs(rkhs_norm(out, basis) - max(0.0, nu - lam_weight)) < 1e-10 * (1 + nu)
        if out.any():  # parallel to the input
            cross = np.outer(out, check) - np.outer(check, out)
            assert np.max(np.abs(cross)) < 1e-10


class TestLambdaPath:
    def test_zero_response(self):
        scores, _, basis = standardized_instance(10, 10, 2, 2)
        assert lambda_max(scores, np.zeros(10), basis, np.ones(2)) == 0.0

    def test_scaling_in_y(self):
        scores, y, basis = standardized_instance(11, 14, 3, 2)
        w = np.ones(3)
        base = lambda_max(scores, y, basis, w)
        assert abs(lambda_max(scores, -3 * y, basis, w) - 3 * base) < 1e-12 * base

    def test_empty_fit_at_lambda_max(self):
        scores, y, basis = standardized_instance(12, 30, 3, 2)
        lmax = lambda_max(scores, y, basis, np.ones(3))
        fit = coordinate_descent(scores, y, basis, lmax, np.ones(3))
        assert fit.active_set == ()
        assert fit.converged and fit.n_iterations == 1

    def test_geometric_path(self):
        scores, y, basis = standardized_instance(13, 12, 2, 2)
        path = lambda_path(scores, y, basis, np.ones(2), count=3, ratio=0.01)
        lmax = lambda_max(scores, y, basis, np.ones(2))
        assert np.allclose(path, [lmax, 0.1 * lmax, 0.01 * lmax], rtol=1e-12)

    def test_two_point_path(self):
        scores, y, basis = standardized_instance(14, 12, 2, 2)
        path = lambda_path(scores, y, basis, np.ones(2), count=2, ratio=0.05)
        lmax = lambda_max(scores, y, basis, np.ones(2))
        assert np.allclose(path, [lmax, 0.05 * lmax], rtol=1e-12)

    def test_degenerate_path(self):
        scores, _, basis = standardized_instance(15, 12, 2, 2)
        with pytest.raises(DegeneratePathError):
            lambda_path(scores, np.zeros(12), basis, np.ones(2))


class TestCoordinateDescent:
    def test_single_variable_soft_threshold(self):
        # p = 1, m = 1, theta = 1, scores with unit mean square: the fit is the
        # scalar soft threshold of the covariance
        basis = unit_theta_basis()
        rng = np.random.default_rng(0)
        n = 40
        s = rng.normal(size=n)
        s = (s - s.mean())
        s /= np.sqrt(np.mean(s**2))
        y = 0.8 * s + rng.normal(size=n) * 0.3
        scores = ScoreTensor(scores=s.reshape(n, 1, 1), basis=basis)
        c_hat = float(np.mean(y * s))
        for lam in (0.05, 0.2, abs(c_hat) * 1.5):
            fit = coordinate_descent(scores, y, basis, lam, np.ones(1), FitOptions(tol=1e-12))
            expected = max(0.0, 1 - lam / abs(c_hat)) * c_hat
            assert abs(fit.coefficients.coords[0, 0] - expected) < 1e-10

    def test_descent_objective_monotone(self):
        for seed in range(8):
            scores, y, basis = standardized_instance(seed, 35, 4, 3)
            lmax = lambda_max(scores, y, basis, np.ones(4))
            for frac in (0.5, 0.1, 0.02):
                fit = coordinate_descent(
                    scores, y, basis, frac * lmax, np.ones(4), FitOptions(tol=1e-10)
                )
                diffs = np.diff(fit.descent_history)
                assert diffs.max(initial=-np.inf) <= 1e-10

    def test_reported_objective_matches_objective_value(self):
        scores, y, basis = standardized_instance(20, 25, 3, 2)
        lmax = lambda_max(scores, y, basis, np.ones(3))
        fit = coordinate_descent(scores, y, basis, 0.3 * lmax, np.ones(3))
        recomputed = objective_value(fit.coefficients, scores, y, fit.lam, fit.weights)
        assert abs(fit.objective - recomputed) <= 1e-10 * max(1.0, abs(recomputed))

    def test_matches_prox_grad_reference(self):
        for seed in range(6):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(20, 51))
            p = int(rng.integers(1, 3))
            m = int(rng.integers(1, 3))
            scores, y, basis = standardized_instance(seed + 100, n, p, m)
            w = np.ones(p)
            lmax = lambda_max(scores, y, basis, w)
            lam = lmax * rng.uniform(0.05, 0.8)
            fit = coordinate_descent(
                scores, y, basis, lam, w, FitOptions(max_iter=5000, tol=1e-13)
            )
            ref = prox_grad_reference(scores.scores, y, basis.eigenvalues, lam, w)
            obj_cd = objective_value(fit.coefficients, scores, y, lam, w)
            obj_ref = objective_value(Coefficients(coords=ref, basis=basis), scores, y, lam, w)
            assert abs(obj_cd - obj_ref) <= 1e-6 * max(abs(obj_ref), 1e-12)

    def test_warm_start_equivalence(self):
        scores, y, basis = standardized_instance(30, 40, 3, 2)
        w = np.ones(3)
        path = lambda_path(scores, y, basis, w, count=8, ratio=0.05)
        warm_fits = fit_lambda_path(scores, y, basis, path, w, FitOptions(tol=1e-10))
        for lam, warm_fit in zip(path, warm_fits):
            cold = coordinate_descent(scores, y, basis, lam, w, FitOptions(tol=1e-10))
            assert abs(warm_fit.objective - cold.objective) <= 1e-6 * max(abs(cold.objective), 1e-12)

    def test_kill_switch(self):
        scores, y, basis = standardized_instance(31, 40, 5, 2)
        # strong shared signal so several predictors activate at small lambda
        y = scores.scores[:, :, 0].sum(axis=1) + 0.01 * y
        lmax = lambda_max(scores, y, basis, np.ones(5))
        fit = coordinate_descent(
            scores, y, basis, 0.001 * lmax, np.ones(5), FitOptions(kill_switch=1)
        )
        assert not fit.converged
        assert fit.stop_reason == "kill-switch"

    def test_numeric_divergence_reported(self):
        scores, y, basis = standardized_instance(32, 10, 2, 2)
        y = y.copy()
        y[0] = np.nan
        with pytest.raises(NumericDivergenceError) as err:
            coordinate_descent(scores, y, basis, 0.1, np.ones(2))
        assert err.value.sweep == 1

    def test_excluded_predictors_stay_zero(self):
        scores, y, basis = standardized_instance(33, 30, 3, 2)
        w = np.array([1.0, np.inf, 1.0])
        lmax = lambda_max(scores, y, basis, w)
        fit = coordinate_descent(scores, y, basis, 0.05 * lmax, w)
        assert not fit.coefficients.coords[1].any()


class TestKkt:
    def fit_small(self, seed=40, frac=0.2):
        scores, y, basis = standardized_instance(seed, 40, 4, 2)
        y = y + scores.scores[:, 0, 0] * 1.5
        w = np.ones(4)
        lam = frac * lambda_max(scores, y, basis, w)
        fit = coordinate_descent(scores, y, basis, lam, w, FitOptions(tol=1e-10))
        return fit, scores, y, basis

    def test_converged_fit_passes(self):
        fit, scores, y, basis = self.fit_small()
        assert fit.converged
        report = kkt_check(fit, scores, y, basis)
        assert report.all_passed

    def test_perturbed_fit_fails(self):
        fit, scores, y, basis = self.fit_small()
        tol = 1e-5
        j = fit.active_set[0]
        coords = fit.coefficients.coords.copy()
        bump = np.zeros(basis.m)
        bump[0] = 10 * tol * (1 + rkhs_norm(coords[j], basis)) * np.sqrt(basis.eigenvalues[0])
        coords[j] += bump
        broken = replace(fit, coefficients=Coefficients(coords=coords, basis=basis))
        report = kkt_check(broken, scores, y, basis, tol=tol)
        assert not report.passed[j]

    def test_empty_fit_at_lambda_max_passes(self):
        scores, y, basis = standardized_instance(41, 30, 3, 2)
        w = np.ones(3)
        lmax = lambda_max(scores, y, basis, w)
        fit = coordinate_descent(scores, y, basis, lmax * (1 + 1e-9), w)
        report = kkt_check(fit, scores, y, basis)
        assert report.all_passed and not report.is_active.any()


class TestOracleFit:
    def test_noiseless_recovery(self):
        scores, _, basis = standardized_instance(50, 40, 1, 2)
        rng = np.random.default_rng(0)
        b_true = rng.normal(size=2)
        y = scores.scores[:, 0, :] @ b_true
        coeffs = oracle_fit(scores, y, [0])
        assert np.allclose(coeffs.coords[0], b_true, atol=1e-8)

    def test_empty_active_set(self):
        scores, y, basis = standardized_instance(51, 20, 3, 2)
        coeffs = oracle_fit(scores, y, [])
        assert not coeffs.coords.any()

    def test_residual_orthogonality(self):
        scores, y, basis = standardized_instance(52, 30, 3, 2)
        coeffs = oracle_fit(scores, y, [0, 2])
        resid = y - np.einsum("ipl,pl->i", scores.scores, coeffs.coords)
        for j in (0, 2):
            assert np.max(np.abs(resid @ scores.scores[:, j, :])) < 1e-8 * len(y)

    def test_rank_deficient(self):
        scores, y, basis = standardized_instance(53, 25, 2, 2)
        dup = scores.scores.copy()
        dup[:, 1, :] = dup[:, 0, :]
        with pytest.raises(SingularDesignError) as err:
            oracle_fit(ScoreTensor(scores=dup, basis=basis), y, [0, 1])
        assert err.value.smallest_singular_value is not None


def pipeline_dataset(seed=60, n=90, p=3, G=20):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, p, G)).cumsum(axis=2) * 0.2
    y = values[:, 0, :5].sum(axis=1) + 0.05 * rng.normal(size=n)
    return FunctionalDataset(
        grid=uniform_grid(G),
        values=values,
        response=y,
        predictor_names=tuple(f"x{j}" for j in range(p)),
        obs_ids=tuple(f"o{i:03d}" for i in range(n)),
    )


class TestPredict:
    def setup_fit(self, seed=60):
        data = pipeline_dataset(seed)
        standardized, record = standardize(data)
        basis = truncate_basis(build_basis(KernelSpec("exponential", 1.0), data.grid), data.n)
        scores = project_scores(standardized, basis)
        return data, standardized, record, basis, scores

    def test_zero_coefficients_predict_mean(self):
        data, _, record, basis, scores = self.setup_fit()
        fit = coordinate_descent(
            scores, data.response - record.response_mean, basis, 1e9, np.ones(data.p)
        )
        fit = replace(fit, standardization=record)
        preds = predict(fit, data)
        assert np.allclose(preds, record.response_mean)

    def test_oracle_predictions_match_fitted_values(self):
        data, standardized, record, basis, scores = self.setup_fit()
        coeffs = oracle_fit(scores, standardized.response, [0, 1, 2])
        fit = coordinate_descent(scores, standardized.response, basis, 1e9, np.ones(3))
        fit = replace(fit, coefficients=coeffs, standardization=record)
        preds = predict(fit, data)
        fitted = np.einsum("ipl,pl->i", scores.scores, coeffs.coords) + record.response_mean
        # replaying the stored standardization on the training curves is exact
        assert np.allclose(preds, fitted, atol=1e-12)

    def test_centering_cancels(self):
        data, standardized, record, basis, scores = self.setup_fit()
        coeffs = oracle_fit(scores, standardized.response, [0, 1])
        base = coordinate_descent(scores, standardized.response, basis, 1e9, np.ones(3))
        fit = replace(base, coefficients=coeffs, standardization=record)

        rng = np.random.default_rng(1)
        centered = rng.normal(size=(4, data.p, data.grid.size))
        shifted = FunctionalDataset(
            grid=data.grid,
            values=centered + record.predictor_means[None],
            response=np.zeros(4),
            predictor_names=data.predictor_names,
            obs_ids=("a", "b", "c", "d"),
        )
        zero_mean_record = replace(record, predictor_means=np.zeros_like(record.predictor_means))
        plain = FunctionalDataset(
            grid=data.grid,
            values=centered,
            response=np.zeros(4),
            predictor_names=data.predictor_names,
            obs_ids=("a", "b", "c", "d"),
        )
        fit_zero = replace(fit, standardization=zero_mean_record)
        assert np.allclose(predict(fit, shifted), predict(fit_zero, plain), atol=1e-12)

    def test_predict_requires_record(self):
        _, standardized, _, basis, scores = self.setup_fit()
        fit = coordinate_descent(scores, standardized.response, basis, 1e9, np.ones(3))
        with pytest.raises(FunselError):
            predict(fit, pipeline_dataset())


class TestReconstruct:
    def test_basis_element(self):
        basis = build_basis(KernelSpec("exponential", 1.0), uniform_grid(15))
        row = np.zeros(basis.m)
        row[0] = 1.0
        curve = reconstruct_curve(row, basis)
        assert np.allclose(curve.values, basis.functions[0])

    def test_round_trip(self):
        basis = truncate_basis(build_basis(KernelSpec("exponential", 1.0), uniform_grid(15)), 100)
        rng = np.random.default_rng(2)
        row = rng.normal(size=basis.m)
        curve = reconstruct_curve(row, basis)
        data = FunctionalDataset(
            grid=basis.grid,
            values=curve.values[None, None, :],
            response=np.zeros(1),
            predictor_names=("x0",),
            obs_ids=("a",),
        )
        back = project_scores(data, basis).scores[0, 0]
        assert np.allclose(back, row, atol=1e-8)

    def test_zero_row(self):
        basis = build_basis(KernelSpec("gaussian", 1.0), uniform_grid(10))
        assert not reconstruct_curve(np.zeros(basis.m), basis).values.any()


class TestAdaptiveFit:
    def test_noiseless_single_strong_predictor(self):
        rng = np.random.default_rng(3)
        basis = truncate_basis(build_basis(KernelSpec("exponential", 1.0), uniform_grid(20)), 100)
        n, p = 60, 4
        values = rng.normal(size=(n, p, 20)).cumsum(axis=2) * 0.3
        data = FunctionalDataset(
            grid=basis.grid,
            values=values,
            response=np.zeros(n),
            predictor_names=tuple(f"x{j}" for j in range(p)),
            obs_ids=tuple(str(i) for i in range(n)),
        )
        standardized, record = standardize(data)
        scores = project_scores(standardized, basis)
        beta = rng.normal(size=basis.m) * basis.eigenvalues  # smooth coefficient
        y = scores.scores[:, 1, :] @ beta
        result = adaptive_fit(
            scores, y, basis, opts=FitOptions(), cv_spec=CvSpec(seed=0)
        )
        assert result.stage2.active_set == (1,)
        assert result.stage2.stage == "adaptive"

    def test_support_shrinks_across_stages(self):
        for seed in range(5):
            scores, y, basis = standardized_instance(seed + 200, 40, 4, 2)
            y = y + scores.scores[:, 0, 0]
            result = adaptive_fit(scores, y, basis, cv_spec=CvSpec(seed=1))
            assert set(result.stage2.active_set) <= set(result.stage1.active_set)

    def test_empty_stage1_short_circuits(self):
        # response uncorrelated enough that CV keeps the empty model
        rng = np.random.default_rng(5)
        scores, y, basis = standardized_instance(777, 24, 2, 2)
        y = rng.normal(size=24) * 1e-3
        y[0] += 1e-3
        result = adaptive_fit(scores, y, basis, cv_spec=CvSpec(seed=2))
        if result.stage1.active_set == ():
            assert result.stage2.active_set == ()
            assert result.stage2.stop_reason == "stage1-empty"
            assert result.cv_stage2 is None
        else:  # fall back: force the branch via a huge-lambda-only check
            pytest.skip("seed produced a nonempty stage-1 model")
