"""Command-line surface: fit, simulate, cv, predict, eigen, window, kkt-check.

Flags can also be supplied through a JSON file via --config (same keys as the
long flag names with dashes replaced by underscores); explicit flags win.
All artifacts are plain CSV/JSON so they can be re-ingested or plotted with
external tools.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import (
    apply_standardization,
    load_curves,
    project_scores,
    rolling_windows,
    standardize,
    to_long_frames,
    StandardizationRecord,
)
from .errors import FunselError, IngestionError
from .function_space import l2_inner, uniform_grid, GridFunction
from .kernels import KERNEL_FAMILIES, KernelSpec, build_basis, truncate_basis
from .model_selection import CvSpec, cross_validate
from .simulation import Scenario, run_scenario
from .solver import (
    ZERO_NORM,
    Coefficients,
    FitOptions,
    FitResult,
    PathSpec,
    coordinate_descent,
    fit_dataset,
    kkt_check,
    lambda_path,
    predict,
    reconstruct_curve,
    rkhs_norm,
)

_COMMON_DEFAULTS = {
    "kernel": "gaussian",
    "rho": None,
    "basis_fraction": 0.99,
    "lambda_count": 100,
    "lambda_ratio": 0.05,
    "cv": "kfold",
    "folds": 5,
    "rolling_train_frac": 0.75,
    "rolling_test_frac": 0.05,
    "rolling_shift_frac": 0.05,
    "kill_switch": None,
    "tol": 1e-6,
    "max_iter": 1000,
    "seed": 0,
    "threads": 1,
    "lam": None,
}


def _add_common(sub):
    sub.add_argument("--kernel", choices=KERNEL_FAMILIES)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--basis-fraction", dest="basis_fraction", type=float)
    sub.add_argument("--lambda-count", dest="lambda_count", type=int)
    sub.add_argument("--lambda-ratio", dest="lambda_ratio", type=float)
    sub.add_argument("--cv", choices=("kfold", "rolling"))
    sub.add_argument("--folds", type=int)
    sub.add_argument("--rolling-train-frac", dest="rolling_train_frac", type=float)
    sub.add_argument("--rolling-test-frac", dest="rolling_test_frac", type=float)
    sub.add_argument("--rolling-shift-frac", dest="rolling_shift_frac", type=float)
    sub.add_argument("--kill-switch", dest="kill_switch", type=int)
    sub.add_argument("--tol", type=float)
    sub.add_argument("--max-iter", dest="max_iter", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--threads", type=int)
    sub.add_argument("--lambda", dest="lam", type=float)
    sub.add_argument("--config")
    sub.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funsel",
        description="Sparse scalar-on-function regression with kernel-eigenbasis regularization",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    fit = subs.add_parser("fit", help="fit a model from curve and response tables")
    fit.add_argument("--curves", required=True)
    fit.add_argument("--response", required=True)
    _add_common(fit)
    fit.set_defaults(func=cmd_fit)

    cv = subs.add_parser("cv", help="cross-validate the unit-weight penalty path")
    cv.add_argument("--curves", required=True)
    cv.add_argument("--response", required=True)
    _add_common(cv)
    cv.set_defaults(func=cmd_cv)

    sim = subs.add_parser("simulate", help="run the synthetic selection benchmark")
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--p0", type=int, required=True)
    sim.add_argument("--snr", type=float, required=True)
    sim.add_argument("--reps", type=int, required=True)
    sim.add_argument("--grid-size", dest="grid_size", type=int)
    sim.add_argument("--n-test", dest="n_test", type=int)
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    pred = subs.add_parser("predict", help="predict responses for new curves")
    pred.add_argument("--model", required=True)
    pred.add_argument("--curves", required=True)
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)

    eig = subs.add_parser("eigen", help="dump the kernel eigenbasis as CSV")
    eig.add_argument("--grid-size", dest="grid_size", type=int, default=50)
    _add_common(eig)
    eig.set_defaults(func=cmd_eigen)

    win = subs.add_parser("window", help="turn a time-series table into rolling-window curves")
    win.add_argument("--input", required=True)
    win.add_argument("--target", required=True)
    win.add_argument("--window", type=int, default=12)
    win.add_argument("--horizon", type=int, default=1)
    win.add_argument("--out", required=True)
    win.set_defaults(func=cmd_window)

    kkt = subs.add_parser("kkt-check", help="verify a stored fit against its training data")
    kkt.add_argument("--model", required=True)
    kkt.add_argument("--curves", required=True)
    kkt.add_argument("--response", required=True)
    kkt.add_argument("--tol", type=float, default=1e-5)
    kkt.set_defaults(func=cmd_kkt_check)

    return parser


def _resolve(args, defaults: dict) -> dict:
    """Merge defaults < --config JSON < explicit flags."""
    config = {}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            with open(cfg_path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except FileNotFoundError:
            raise IngestionError(f"config file not found: {cfg_path}")
        except json.JSONDecodeError as exc:
            raise IngestionError(f"config file {cfg_path} is not valid JSON: {exc}")
    merged = dict(defaults)
    for key, value in config.items():
        if key in merged:
            merged[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _read_table(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise IngestionError(f"input file not found: {path}")


def _require_rho(opts: dict) -> KernelSpec:
    if opts["rho"] is None:
        raise IngestionError("--rho is required (kernel length scale)")
    return KernelSpec(family=opts["kernel"], rho=float(opts["rho"]))


def _cv_spec(opts: dict) -> CvSpec:
    return CvSpec(
        mode=opts["cv"],
        folds=int(opts["folds"]),
        rolling_train_frac=float(opts["rolling_train_frac"]),
        rolling_test_frac=float(opts["rolling_test_frac"]),
        rolling_shift_frac=float(opts["rolling_shift_frac"]),
        seed=int(opts["seed"]),
    )


def _fit_options(opts: dict) -> FitOptions:
    kill = opts["kill_switch"]
    return FitOptions(
        max_iter=int(opts["max_iter"]),
        tol=float(opts["tol"]),
        kill_switch=int(kill) if kill is not None else None,
    )


def _out_dir(path_like) -> Path:
    path = Path(path_like)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def _float(x) -> str:
    return repr(float(x))


def _standardization_json(record: StandardizationRecord) -> dict:
    return {
        "response_mean": record.response_mean,
        "predictor_scales": [float(s) for s in record.predictor_scales],
        "predictor_means": [[float(v) for v in row] for row in record.predictor_means],
    }


def _kkt_summary(report) -> dict:
    with np.errstate(invalid="ignore"):
        rel = np.where(np.isfinite(report.bound), report.residual / report.bound, 0.0)
    return {
        "passed": bool(report.all_passed),
        "max_relative_residual": float(np.max(rel)),
        "active_checked": int(report.is_active.sum()),
        "inactive_checked": int((~report.is_active).sum()),
    }


def cmd_fit(args) -> int:
    opts = _resolve(args, _COMMON_DEFAULTS)
    kernel = _require_rho(opts)
    data = load_curves(_read_table(args.curves), _read_table(args.response))
    fit_opts = _fit_options(opts)
    threads = int(opts["threads"])

    if opts["lam"] is not None and int(opts["lambda_count"]) != 1:
        raise IngestionError("--lambda requires --lambda-count 1 (single-fit mode)")
    cv1 = cv2 = None
    if opts["lam"] is not None and int(opts["lambda_count"]) == 1:
        standardized, record = standardize(data)
        basis = truncate_basis(
            build_basis(kernel, data.grid), data.n, float(opts["basis_fraction"])
        )
        scores = project_scores(standardized, basis)
        lam = float(opts["lam"])
        w1 = np.ones(data.p)
        stage1 = coordinate_descent(scores, standardized.response, basis, lam, w1, fit_opts)
        norms = np.array(
            [rkhs_norm(stage1.coefficients.coords[j], basis) for j in range(data.p)]
        )
        w2 = np.full(data.p, np.inf)
        survivors = norms >= ZERO_NORM
        if survivors.any():
            w2[survivors] = 1.0 / norms[survivors]
            stage2 = coordinate_descent(
                scores, standardized.response, basis, lam, w2, fit_opts, stage="adaptive"
            )
        else:
            stage2 = stage1
        from dataclasses import replace

        stage1 = replace(stage1, standardization=record)
        stage2 = replace(stage2, standardization=record)
        response = standardized.response
    else:
        pipeline = fit_dataset(
            data,
            kernel,
            basis_fraction=float(opts["basis_fraction"]),
            opts=fit_opts,
            path_spec=PathSpec(count=int(opts["lambda_count"]), ratio=float(opts["lambda_ratio"])),
            cv_spec=_cv_spec(opts),
            threads=threads,
        )
        stage1, stage2 = pipeline.stage1, pipeline.stage2
        cv1, cv2 = pipeline.cv_stage1, pipeline.cv_stage2
        basis, record, scores, response = (
            pipeline.basis,
            pipeline.record,
            pipeline.scores,
            pipeline.response,
        )

    out = _out_dir(args.out)
    _write_coefficients(out / "coefficients.csv", data, stage2, record, basis)
    _write_cv_csv(out / "cv.csv", cv1, cv2)
    report = kkt_check(stage2, scores, response, basis)
    _write_selection_json(
        out / "selection.json", data, kernel, opts, basis, record, stage1, stage2, report
    )
    return 0


def _write_coefficients(path: Path, data, stage2: FitResult, record, basis) -> None:
    rows = []
    for j, name in enumerate(data.predictor_names):
        original = stage2.coefficients.coords[j] / record.predictor_scales[j]
        curve = reconstruct_curve(original, basis)
        for g, value in enumerate(curve.values):
            rows.append((name, g, _float(value)))
    _write_csv(path, "predictor_id,grid_index,value", rows)


def _write_cv_csv(path: Path, cv1, cv2) -> None:
    rows = []
    for stage, cv in (("1", cv1), ("2", cv2)):
        if cv is None:
            continue
        for lam, err in zip(cv.lambdas, cv.mean_error):
            rows.append((stage, _float(lam), _float(err)))
    _write_csv(path, "stage,lambda,mean_rmse", rows)


def _write_selection_json(
    path: Path, data, kernel, opts, basis, record, stage1, stage2, kkt_report
) -> None:
    norms2 = {
        data.predictor_names[j]: rkhs_norm(stage2.coefficients.coords[j], basis)
        for j in stage2.active_set
    }
    weights2 = {
        data.predictor_names[j]: float(stage2.weights[j])
        for j in range(data.p)
        if np.isfinite(stage2.weights[j])
    }
    original = stage2.coefficients.coords / record.predictor_scales[:, None]
    intercept = record.response_mean - sum(
        l2_inner(
            reconstruct_curve(original[j], basis),
            GridFunction(grid=basis.grid, values=record.predictor_means[j]),
        )
        for j in range(data.p)
    )
    payload = {
        "kernel": {"family": kernel.family, "rho": kernel.rho},
        "basis_fraction": float(opts["basis_fraction"]),
        "grid_size": data.grid.size,
        "m": basis.m,
        "n_train": data.n,
        "predictor_names": list(data.predictor_names),
        "lambda": {"stage1": stage1.lam, "stage2": stage2.lam},
        "active_set": [data.predictor_names[j] for j in stage2.active_set],
        "k_norms": norms2,
        "weights_stage2": weights2,
        "convergence": {
            "stage1": _convergence_json(stage1),
            "stage2": _convergence_json(stage2),
        },
        "kkt": _kkt_summary(kkt_report),
        "intercept": float(intercept),
        "coefficients_std": {
            "stage1": [[float(v) for v in row] for row in stage1.coefficients.coords],
            "stage2": [[float(v) for v in row] for row in stage2.coefficients.coords],
        },
        "standardization": _standardization_json(record),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _convergence_json(fit: FitResult) -> dict:
    return {
        "converged": bool(fit.converged),
        "n_iterations": int(fit.n_iterations),
        "stop_reason": fit.stop_reason,
        "objective": float(fit.objective),
    }


def cmd_cv(args) -> int:
    opts = _resolve(args, _COMMON_DEFAULTS)
    kernel = _require_rho(opts)
    data = load_curves(_read_table(args.curves), _read_table(args.response))
    standardized, record = standardize(data)
    basis = truncate_basis(build_basis(kernel, data.grid), data.n, float(opts["basis_fraction"]))
    scores = project_scores(standardized, basis)
    weights = np.ones(data.p)
    path = lambda_path(
        scores,
        standardized.response,
        basis,
        weights,
        count=int(opts["lambda_count"]),
        ratio=float(opts["lambda_ratio"]),
    )
    result = cross_validate(
        scores,
        standardized.response,
        basis,
        weights,
        path,
        _cv_spec(opts),
        _fit_options(opts),
        threads=int(opts["threads"]),
    )
    out = _out_dir(args.out)
    _write_csv(
        out / "cv.csv",
        "stage,lambda,mean_rmse",
        [("1", _float(lam), _float(err)) for lam, err in zip(result.lambdas, result.mean_error)],
    )
    print(f"selected_lambda={result.selected_lambda!r}")
    return 0


def cmd_simulate(args) -> int:
    defaults = dict(_COMMON_DEFAULTS)
    defaults.update({"n": 500, "grid_size": 50, "n_test": 100, "seed": None})
    opts = _resolve(args, defaults)
    if opts["seed"] is None:
        raise IngestionError("simulate requires an explicit --seed")
    kernel = _require_rho(opts)
    scenario = Scenario(
        n=int(opts["n"]),
        p=int(args.p),
        p0=int(args.p0),
        snr=float(args.snr),
        grid_size=int(opts["grid_size"]),
        seed=int(opts["seed"]),
        n_test=int(opts["n_test"]),
    )
    kill = opts["kill_switch"]
    fit_opts = FitOptions(
        max_iter=int(opts["max_iter"]),
        tol=float(opts["tol"]),
        kill_switch=int(kill) if kill is not None else 2 * scenario.p0,
    )
    result = run_scenario(
        scenario,
        kernel,
        int(args.reps),
        opts=fit_opts,
        path_spec=PathSpec(count=int(opts["lambda_count"]), ratio=float(opts["lambda_ratio"])),
        threads=int(opts["threads"]),
    )
    out = _out_dir(args.out)
    result.write_csv(out / "metrics.csv")
    print(
        f"mean_tp={result.mean_tp!r} mean_fp={result.mean_fp!r} mean_rmse={result.mean_rmse!r}"
    )
    return 0


def cmd_predict(args) -> int:
    with open(args.model, "r", encoding="utf-8") as fh:
        model = json.load(fh)
    curve_table = _read_table(args.curves)
    obs_ids = sorted(curve_table["obs_id"].astype(str).unique())
    responses = pd.DataFrame({"obs_id": obs_ids, "y": np.zeros(len(obs_ids))})
    data = load_curves(curve_table, responses)
    if data.grid.size != model["grid_size"]:
        raise IngestionError(
            f"new curves have {data.grid.size} grid points, model expects {model['grid_size']}"
        )
    if list(data.predictor_names) != model["predictor_names"]:
        raise IngestionError("predictor names or order differ from the trained model")
    fit = _fit_from_model(model)
    preds = predict(fit, data)
    out = _out_dir(args.out)
    _write_csv(
        out / "predictions.csv",
        "obs_id,prediction",
        [(o, _float(v)) for o, v in zip(data.obs_ids, preds)],
    )
    return 0


def _fit_from_model(model: dict) -> FitResult:
    kernel = KernelSpec(family=model["kernel"]["family"], rho=model["kernel"]["rho"])
    grid = uniform_grid(model["grid_size"])
    basis = truncate_basis(build_basis(kernel, grid), n=model["m"], fraction=1.0)
    if basis.m != model["m"]:
        raise IngestionError(
            f"rebuilt basis has {basis.m} components, model stored {model['m']}"
        )
    coords = np.array(model["coefficients_std"]["stage2"], dtype=float)
    std = model["standardization"]
    record = StandardizationRecord(
        response_mean=float(std["response_mean"]),
        predictor_means=np.array(std["predictor_means"], dtype=float),
        predictor_scales=np.array(std["predictor_scales"], dtype=float),
    )
    p = coords.shape[0]
    weights = np.full(p, np.inf)
    for j, name in enumerate(model["predictor_names"]):
        if name in model["weights_stage2"]:
            weights[j] = model["weights_stage2"][name]
    coeffs = Coefficients(coords=coords, basis=basis)
    return FitResult(
        coefficients=coeffs,
        active_set=tuple(j for j in range(p) if coords[j].any()),
        lam=float(model["lambda"]["stage2"]),
        weights=weights,
        n_iterations=model["convergence"]["stage2"]["n_iterations"],
        converged=model["convergence"]["stage2"]["converged"],
        stop_reason=model["convergence"]["stage2"]["stop_reason"],
        objective=model["convergence"]["stage2"]["objective"],
        stage="adaptive",
        standardization=record,
    )


def cmd_eigen(args) -> int:
    opts = _resolve(args, dict(_COMMON_DEFAULTS, grid_size=50))
    kernel = _require_rho(opts)
    grid = uniform_grid(int(opts["grid_size"]))
    basis = build_basis(kernel, grid)
    rows = []
    for l in range(basis.m):
        for g in range(grid.size):
            rows.append(
                (
                    l,
                    _float(basis.eigenvalues[l]),
                    g,
                    _float(grid.points[g]),
                    _float(grid.weights[g]),
                    _float(basis.functions[l, g]),
                )
            )
    out = _out_dir(args.out)
    _write_csv(out / "eigen.csv", "component,eigenvalue,grid_index,t,weight,value", rows)
    return 0


def cmd_window(args) -> int:
    series = _read_table(args.input)
    data = rolling_windows(series, target=args.target, window=args.window, horizon=args.horizon)
    curves, responses = to_long_frames(data)
    out = _out_dir(args.out)
    _write_csv(
        out / "curves.csv",
        "obs_id,predictor_id,grid_index,value",
        [
            (o, p, g, _float(v))
            for o, p, g, v in zip(
                curves["obs_id"], curves["predictor_id"], curves["grid_index"], curves["value"]
            )
        ],
    )
    _write_csv(
        out / "response.csv",
        "obs_id,y",
        [(o, _float(v)) for o, v in zip(responses["obs_id"], responses["y"])],
    )
    return 0


def cmd_kkt_check(args) -> int:
    with open(args.model, "r", encoding="utf-8") as fh:
        model = json.load(fh)
    data = load_curves(_read_table(args.curves), _read_table(args.response))
    fit = _fit_from_model(model)
    standardized = apply_standardization(fit.standardization, data)
    scores = project_scores(standardized, fit.coefficients.basis)
    y = data.response - fit.standardization.response_mean
    report = kkt_check(fit, scores, y, fit.coefficients.basis, tol=args.tol)
    for j, name in enumerate(data.predictor_names):
        status = "active" if report.is_active[j] else "inactive"
        verdict = "pass" if report.passed[j] else "FAIL"
        print(
            f"{name}: {status} residual={report.residual[j]!r} bound={report.bound[j]!r} {verdict}"
        )
    return 0 if report.all_passed else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FunselError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
