"""Data ingestion, standardization, score projection, rolling windows.

Canonical input is a long-format table (obs_id, predictor_id, grid_index,
value) plus a response table (obs_id, y). Curves are stored densely as an
(n, p, G) array on one shared grid; `curve(i, j)` gives the typed view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    DegeneratePredictorError,
    GridMismatchError,
    IngestionError,
    InsufficientDataError,
    InvalidGridError,
)
from .function_space import Grid, GridFunction, uniform_grid
from .kernels import EigenBasis

CURVE_COLUMNS = ("obs_id", "predictor_id", "grid_index", "value")
RESPONSE_COLUMNS = ("obs_id", "y")


@dataclass(frozen=True)
class FunctionalDataset:
    """n observations of p curves on a shared grid, plus a scalar response."""

    grid: Grid
    values: np.ndarray  # (n, p, G)
    response: np.ndarray  # (n,)
    predictor_names: tuple
    obs_ids: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        resp = np.asarray(self.response, dtype=float)
        vals.setflags(write=False)
        resp.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "response", resp)
        object.__setattr__(self, "predictor_names", tuple(self.predictor_names))
        object.__setattr__(self, "obs_ids", tuple(self.obs_ids))
        n, p = vals.shape[0], vals.shape[1] if vals.ndim == 3 else 0
        if vals.ndim != 3 or vals.shape[2] != self.grid.size:
            raise InvalidGridError("curve array must have shape (n, p, grid size)")
        if n < 1 or p < 1:
            raise IngestionError("dataset needs n >= 1 observations and p >= 1 predictors")
        if resp.shape != (n,):
            raise IngestionError("response length must equal the number of observations")
        if len(self.predictor_names) != p:
            raise IngestionError("predictor_names must have one label per predictor")
        if len(self.obs_ids) != n:
            raise IngestionError("obs_ids must have one label per observation")
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(resp)):
            raise IngestionError("curves and responses must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def curve(self, i: int, j: int) -> GridFunction:
        return GridFunction(grid=self.grid, values=self.values[i, j])


@dataclass(frozen=True)
class StandardizationRecord:
    """Statistics needed to replay training standardization on new curves."""

    response_mean: float
    predictor_means: np.ndarray  # (p, G)
    predictor_scales: np.ndarray  # (p,)

    def __post_init__(self):
        means = np.asarray(self.predictor_means, dtype=float)
        scales = np.asarray(self.predictor_scales, dtype=float)
        means.setflags(write=False)
        scales.setflags(write=False)
        object.__setattr__(self, "predictor_means", means)
        object.__setattr__(self, "predictor_scales", scales)
        if not np.all(scales > 0):
            raise DegeneratePredictorError("all predictor scales must be positive")


@dataclass(frozen=True)
class ScoreTensor:
    """Basis coordinates s_{ijl} of every curve; the solver's working design."""

    scores: np.ndarray  # (n, p, m)
    basis: EigenBasis

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        if s.ndim != 3 or s.shape[2] != self.basis.m:
            raise InvalidGridError("score tensor must have shape (n, p, m)")


def is_wide_curve_table(frame: pd.DataFrame) -> bool:
    """True for the wide convenience layout: obs_id plus predictor:grid columns."""
    if "obs_id" not in frame.columns or len(frame.columns) < 2:
        return False
    others = [c for c in frame.columns if c != "obs_id"]
    return all(":" in str(c) for c in others)


def wide_to_long(frame: pd.DataFrame) -> pd.DataFrame:
    """Convert one-row-per-observation curves (columns `predictor:grid_index`)
    to the canonical long format."""
    if not is_wide_curve_table(frame):
        raise IngestionError(
            "wide curve tables need an obs_id column plus predictor:grid_index columns"
        )
    melted = frame.melt(id_vars=["obs_id"], var_name="key", value_name="value")
    split = melted["key"].str.rsplit(":", n=1, expand=True)
    if split.isna().any().any():
        raise IngestionError("wide column names must look like predictor:grid_index")
    try:
        grid_index = split[1].astype(int)
    except (TypeError, ValueError) as exc:
        raise IngestionError(f"wide column names carry non-integer grid indices: {exc}")
    out = pd.DataFrame(
        {
            "obs_id": melted["obs_id"],
            "predictor_id": split[0],
            "grid_index": grid_index,
            "value": melted["value"],
        }
    )
    # preserve predictor order of first appearance in the header
    order = {}
    for c in frame.columns:
        if c != "obs_id":
            name = str(c).rsplit(":", 1)[0]
            order.setdefault(name, len(order))
    out["__rank"] = out["predictor_id"].map(order)
    out = out.sort_values(["__rank", "obs_id", "grid_index"], kind="stable").drop(columns="__rank")
    return out.reset_index(drop=True)


def load_curves(curve_table: pd.DataFrame, response_table: pd.DataFrame) -> FunctionalDataset:
    """Assemble a dataset from curve and response tables.

    The canonical curve layout is long format; the wide convenience layout
    (one row per observation, columns `predictor:grid_index`) is converted
    automatically. Observations are ordered by obs_id, predictors by first
    appearance; the grid is uniform on [0,1] with as many points as there are
    distinct grid indices.
    """
    if is_wide_curve_table(curve_table):
        curve_table = wide_to_long(curve_table)
    for col in CURVE_COLUMNS:
        if col not in curve_table.columns:
            raise IngestionError(f"curve table is missing column {col!r}")
    for col in RESPONSE_COLUMNS:
        if col not in response_table.columns:
            raise IngestionError(f"response table is missing column {col!r}")

    curves = curve_table.loc[:, list(CURVE_COLUMNS)].copy()
    curves["obs_id"] = curves["obs_id"].astype(str)
    curves["predictor_id"] = curves["predictor_id"].astype(str)
    try:
        curves["grid_index"] = curves["grid_index"].astype(int)
        curves["value"] = curves["value"].astype(float)
    except (TypeError, ValueError) as exc:
        raise IngestionError(f"curve table has non-numeric entries: {exc}") from exc

    dup = curves.duplicated(subset=["obs_id", "predictor_id", "grid_index"])
    if dup.any():
        row = curves[dup].iloc[0]
        raise IngestionError(
            f"duplicate cell (obs {row.obs_id!r}, predictor {row.predictor_id!r}, "
            f"grid_index {row.grid_index})"
        )

    g_max = int(curves["grid_index"].max())
    g_min = int(curves["grid_index"].min())
    if g_min != 0:
        raise IngestionError(f"grid indices must start at 0, found minimum {g_min}")
    G = g_max + 1

    obs_ids = sorted(curves["obs_id"].unique())
    pred_ids = list(dict.fromkeys(curves["predictor_id"]))
    n, p = len(obs_ids), len(pred_ids)

    responses = response_table.loc[:, list(RESPONSE_COLUMNS)].copy()
    responses["obs_id"] = responses["obs_id"].astype(str)
    if responses["obs_id"].duplicated().any():
        bad = responses.loc[responses["obs_id"].duplicated(), "obs_id"].iloc[0]
        raise IngestionError(f"duplicate response for obs {bad!r}")
    resp_ids = set(responses["obs_id"])
    curve_ids = set(obs_ids)
    only_resp = resp_ids - curve_ids
    only_curve = curve_ids - resp_ids
    if only_resp:
        raise IngestionError(f"obs {sorted(only_resp)[0]!r} has a response but no curves")
    if only_curve:
        raise IngestionError(f"obs {sorted(only_curve)[0]!r} has curves but no response")

    obs_code = {o: i for i, o in enumerate(obs_ids)}
    pred_code = {q: j for j, q in enumerate(pred_ids)}
    oi = curves["obs_id"].map(obs_code).to_numpy()
    pj = curves["predictor_id"].map(pred_code).to_numpy()
    gi = curves["grid_index"].to_numpy()

    filled = np.zeros((n, p, G), dtype=bool)
    filled[oi, pj, gi] = True
    if not filled.all():
        i, j, g = np.argwhere(~filled)[0]
        raise IngestionError(
            f"missing cell (obs {obs_ids[i]!r}, predictor {pred_ids[j]!r}, grid_index {g})"
        )

    values = np.empty((n, p, G), dtype=float)
    values[oi, pj, gi] = curves["value"].to_numpy()

    y = responses.set_index("obs_id")["y"].astype(float)
    response = y.loc[list(obs_ids)].to_numpy()

    return FunctionalDataset(
        grid=uniform_grid(G),
        values=values,
        response=response,
        predictor_names=tuple(pred_ids),
        obs_ids=tuple(obs_ids),
    )


def standardize(data: FunctionalDataset):
    """Center the response, center each predictor's mean curve, and rescale
    each predictor to unit mean squared L2 norm.

    Returns the standardized dataset and the record needed to replay the same
    transform on new data.
    """
    if data.n < 2:
        raise InsufficientDataError("standardization needs at least 2 observations")
    y_mean = float(data.response.mean())
    means = data.values.mean(axis=0)
    centered = data.values - means[None, :, :]
    mean_sq = np.einsum("ipg,g->p", centered**2, data.grid.weights) / data.n
    low = mean_sq < 1e-14
    if low.any():
        j = int(np.argmax(low))
        raise DegeneratePredictorError(
            f"predictor {data.predictor_names[j]!r} is constant across observations"
        )
    scales = np.sqrt(mean_sq)
    standardized = FunctionalDataset(
        grid=data.grid,
        values=centered / scales[None, :, None],
        response=data.response - y_mean,
        predictor_names=data.predictor_names,
        obs_ids=data.obs_ids,
    )
    record = StandardizationRecord(
        response_mean=y_mean, predictor_means=means, predictor_scales=scales
    )
    return standardized, record


def apply_standardization(record: StandardizationRecord, data: FunctionalDataset) -> FunctionalDataset:
    """Replay a training-time standardization on new curves (response untouched)."""
    if record.predictor_means.shape != (data.p, data.grid.size):
        raise GridMismatchError("standardization record does not match the dataset shape")
    values = (data.values - record.predictor_means[None, :, :]) / record.predictor_scales[
        None, :, None
    ]
    return FunctionalDataset(
        grid=data.grid,
        values=values,
        response=data.response,
        predictor_names=data.predictor_names,
        obs_ids=data.obs_ids,
    )


def project_scores(data: FunctionalDataset, basis: EigenBasis) -> ScoreTensor:
    """Coordinates s_{ijl} = <X_ij, v_l> of every curve in the eigenbasis."""
    if not data.grid.matches(basis.grid):
        raise GridMismatchError("dataset grid differs from the basis grid")
    weighted = basis.functions * basis.grid.weights  # (m, G)
    scores = np.tensordot(data.values, weighted, axes=([2], [1]))
    return ScoreTensor(scores=scores, basis=basis)


def rolling_windows(
    series: pd.DataFrame, target: str, window: int = 12, horizon: int = 1
) -> FunctionalDataset:
    """Build functional observations by sliding a window over a time-series table.

    The first column is the time index (strictly increasing); every remaining
    column becomes a functional predictor whose curve is `window` consecutive
    raw values mapped to a uniform grid on [0,1] (no smoothing). The response
    of each observation is the target column `horizon` steps after the window.
    """
    if series.shape[1] < 2:
        raise IngestionError("time-series table needs a time column plus data columns")
    if window < 2:
        raise ValueError("window must span at least 2 time points")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    time_col = series.columns[0]
    data_cols = [c for c in series.columns[1:]]
    if target not in data_cols:
        raise IngestionError(f"target column {target!r} not found in the series table")

    t_raw = series[time_col]
    if pd.api.types.is_numeric_dtype(t_raw):
        tnum = t_raw.to_numpy(dtype=float)
    else:
        try:
            tnum = pd.to_datetime(t_raw).astype("int64").to_numpy()
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"unparseable time column: {exc}") from exc
    if not np.all(np.diff(tnum) > 0):
        raise IngestionError("time column must be strictly increasing")

    table = series[data_cols].to_numpy(dtype=float)
    if np.isnan(table).any():
        r, c = np.argwhere(np.isnan(table))[0]
        raise IngestionError(f"missing value in column {data_cols[c]!r} at row {r}")

    T = table.shape[0]
    n = T - window - horizon + 1
    if n < 1:
        raise InsufficientDataError(
            f"need more than {window + horizon - 1} rows, got {T}"
        )
    starts = np.arange(n)
    # (n, window, q) -> (n, q, window)
    windows = np.stack([table[s : s + window] for s in starts]).transpose(0, 2, 1)
    target_idx = data_cols.index(target)
    response = table[starts + window + horizon - 1, target_idx]
    width = len(str(T))
    obs_ids = tuple(f"t{s:0{width}d}" for s in starts)
    return FunctionalDataset(
        grid=uniform_grid(window),
        values=windows,
        response=response,
        predictor_names=tuple(data_cols),
        obs_ids=obs_ids,
    )


def to_long_frames(data: FunctionalDataset):
    """Long-format curve and response tables (inverse of load_curves)."""
    n, p, G = data.values.shape
    obs = np.repeat(list(data.obs_ids), p * G)
    preds = np.tile(np.repeat(list(data.predictor_names), G), n)
    gidx = np.tile(np.arange(G), n * p)
    curve_frame = pd.DataFrame(
        {
            "obs_id": obs,
            "predictor_id": preds,
            "grid_index": gidx,
            "value": data.values.ravel(),
        }
    )
    response_frame = pd.DataFrame({"obs_id": list(data.obs_ids), "y": data.response})
    return curve_frame, response_frame
