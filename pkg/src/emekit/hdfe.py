"""Registry-scale regressions: fixed-effect absorption and interaction LPs.

Fixed effects are absorbed by weighted alternating projections (iterated
group demeaning) rather than explicit dummies, which keeps firm-month and
bank-month effects tractable on loan-level data. The interaction local
projections regress h-month loan growth on the shock interacted with lagged
unit characteristics, weighted by bank size, with one- or two-way clustered
covariances from the shared sandwich code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import regress
from .datasets import DataError, MicroFrame
from .errors import CollinearityError, ConvergenceError, DomainError

Z68 = 0.994
Z90 = 1.645


@dataclass
class FeSpec:
    """Fixed-effect keys, each a tuple of registry columns."""

    keys: list

    def __post_init__(self):
        self.keys = [tuple(k) if not isinstance(k, str) else (k,) for k in self.keys]

    def absorbs_time(self) -> bool:
        return any("month" in key for key in self.keys)


@dataclass
class ClusterSpec:
    """One or two cluster dimensions, by registry column name."""

    keys: list

    def __post_init__(self):
        if not 1 <= len(self.keys) <= 2:
            raise DomainError("cluster spec takes one or two keys")


@dataclass
class AbsorbReport:
    sweeps: int
    last_delta: float
    converged: bool
    group_counts: list


def _group_codes(frame: pd.DataFrame, key: tuple) -> np.ndarray:
    missing = [c for c in key if c not in frame.columns]
    if missing:
        raise DataError(f"fixed-effect columns not in frame: {missing}")
    if len(key) == 1:
        _, codes = np.unique(frame[key[0]].to_numpy(), return_inverse=True)
    else:
        _, codes = np.unique(
            pd.MultiIndex.from_frame(frame[list(key)]).to_numpy(), return_inverse=True
        )
    return codes


def _demean_groups(x: np.ndarray, codes: np.ndarray, w: np.ndarray, wsums: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        means = np.bincount(codes, weights=w * x[:, j]) / wsums
        out[:, j] = x[:, j] - means[codes]
    return out


def absorb_fixed_effects(
    matrix: np.ndarray,
    codes_list: list,
    weights: np.ndarray | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
) -> tuple[np.ndarray, AbsorbReport]:
    """Weighted alternating projections across the fixed-effect groupings.

    Iterates until the largest entry change in a sweep, relative to each
    column's initial scale, falls to ``tol``. A single grouping is exact
    after one sweep. Raises when the sweep budget runs out.
    """
    x = np.array(matrix, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if (w <= 0).any():
        raise DomainError("absorption weights must be positive")
    wsums = [np.bincount(codes, weights=w) for codes in codes_list]
    for ws in wsums:
        if (ws <= 0).any():
            raise DataError("every fixed-effect group needs at least one row")
    scales = np.maximum(np.abs(x).max(axis=0), 1.0)
    counts = [int(codes.max()) + 1 for codes in codes_list]

    if len(codes_list) == 1:
        x = _demean_groups(x, codes_list[0], w, wsums[0])
        return x, AbsorbReport(sweeps=1, last_delta=0.0, converged=True, group_counts=counts)

    delta = np.inf
    for sweep in range(1, max_sweeps + 1):
        prev = x.copy()
        for codes, ws in zip(codes_list, wsums):
            x = _demean_groups(x, codes, w, ws)
        delta = float((np.abs(x - prev).max(axis=0) / scales).max())
        if delta <= tol:
            return x, AbsorbReport(
                sweeps=sweep, last_delta=delta, converged=True, group_counts=counts
            )
    raise ConvergenceError(
        f"fixed-effect absorption did not converge in {max_sweeps} sweeps (last delta {delta:.3e})"
    )


def absorb_frame(
    frame: pd.DataFrame,
    columns: list,
    fe: FeSpec,
    weights: np.ndarray | None = None,
    tol: float = 1e-8,
) -> tuple[np.ndarray, AbsorbReport]:
    """Absorb ``fe`` from the named numeric columns of a registry frame."""
    codes_list = [_group_codes(frame, key) for key in fe.keys]
    n = len(frame)
    for key, codes in zip(fe.keys, codes_list):
        if codes.max() + 1 == n:
            raise DomainError(f"fixed effect {key} has one group per row and would absorb everything")
    matrix = frame[list(columns)].to_numpy(dtype=float)
    return absorb_fixed_effects(matrix, codes_list, weights=weights, tol=tol)


def growth_outcome(micro: MicroFrame, horizon: int) -> pd.Series:
    """Log loan change from t-1 to t+h per unit; missing endpoints give NaN."""
    data = micro.data
    unit_cols = micro.unit_cols()
    keyed = data.set_index(unit_cols + ["month"])["loan"]
    if not keyed.index.is_unique:
        raise DataError("registry keys are not unique")
    log_loan = np.log(keyed)
    lead_idx = pd.MultiIndex.from_arrays(
        [data[c] for c in unit_cols] + [data["month"] + horizon]
    )
    lag_idx = pd.MultiIndex.from_arrays(
        [data[c] for c in unit_cols] + [data["month"] - 1]
    )
    lead = log_loan.reindex(lead_idx).to_numpy()
    lag = log_loan.reindex(lag_idx).to_numpy()
    return pd.Series(lead - lag, index=data.index, name=f"dln_loan_h{horizon}")


def _interval_row(term, horizon, coef, se, nobs):
    return {
        "horizon": horizon,
        "term": term,
        "estimate": coef,
        "se": se,
        "lo68": coef - Z68 * se,
        "hi68": coef + Z68 * se,
        "lo90": coef - Z90 * se,
        "hi90": coef + Z90 * se,
        "nobs": nobs,
    }


def lp_interaction(
    micro: MicroFrame,
    shock: pd.Series,
    interactions: list,
    horizons,
    fe: FeSpec,
    cluster: ClusterSpec,
    weighted: bool = True,
    include_main_effect: bool | None = None,
    controls: list | None = None,
    sign_split: bool = False,
    absorb_tol: float = 1e-8,
) -> pd.DataFrame:
    """Interaction local projections on the loan registry.

    ``interactions`` names one or two lagged characteristic columns; the
    regressors are the shock times each characteristic (plus the shock's own
    level unless time effects absorb it). Returns a long results table with
    one row per (horizon, term).
    """
    if not 1 <= len(interactions) <= 2:
        raise DomainError("one or two interaction characteristics are supported")
    if include_main_effect is None:
        include_main_effect = not fe.absorbs_time()
    if include_main_effect and fe.absorbs_time():
        raise DomainError(
            "the shock's main effect is absorbed by time fixed effects; "
            "set include_main_effect=False"
        )
    data = micro.data
    shock = shock.sort_index()
    shock_vals = shock.reindex(pd.PeriodIndex(data["month"])).to_numpy()
    if np.isnan(shock_vals).any():
        raise DataError("shock series does not cover every registry month")

    if controls is None:
        controls = list(interactions)
    macro = micro.macro_controls
    weights_col = data["weight"].to_numpy(dtype=float) if weighted else None

    rows = []
    for h in horizons:
        outcome = growth_outcome(micro, h)
        for col in interactions + list(controls):
            if col not in data.columns:
                raise DataError(f"characteristic {col!r} not in registry")
            if data[col].std(ddof=0) == 0.0:
                raise CollinearityError(f"characteristic {col!r} has no variance")

        terms = {}
        if sign_split:
            pos = np.where(shock_vals > 0, shock_vals, 0.0)
            neg = np.where(shock_vals < 0, shock_vals, 0.0)
            if include_main_effect:
                terms["shock_pos"] = pos
                terms["shock_neg"] = neg
            for x in interactions:
                xv = data[x].to_numpy(dtype=float)
                terms[f"shock_pos:{x}"] = pos * xv
                terms[f"shock_neg:{x}"] = neg * xv
        else:
            if include_main_effect:
                terms["shock"] = shock_vals
            for x in interactions:
                terms[f"shock:{x}"] = shock_vals * data[x].to_numpy(dtype=float)
        report_terms = list(terms.keys())
        for c in controls:
            if c not in terms:
                terms[c] = data[c].to_numpy(dtype=float)
        if macro is not None and not fe.absorbs_time():
            aligned = macro.reindex(pd.PeriodIndex(data["month"]))
            for c in macro.columns:
                terms[f"macro:{c}"] = aligned[c].to_numpy(dtype=float)

        work = pd.DataFrame(terms, index=data.index)
        work["_y"] = outcome
        keep = work.notna().all(axis=1).to_numpy()
        if keep.sum() < len(work.columns) + 2:
            raise DataError(f"too few complete observations at horizon {h}")
        sub = data.loc[keep]
        w = weights_col[keep] if weights_col is not None else None
        cols = ["_y"] + list(terms.keys())
        absorbed, _ = absorb_fixed_effects(
            work.loc[keep, cols].to_numpy(dtype=float),
            [_group_codes(sub, key) for key in fe.keys],
            weights=w,
            tol=absorb_tol,
        )
        y_a = absorbed[:, 0]
        x_a = absorbed[:, 1:]
        fit = regress.wls(y_a, x_a, names=list(terms.keys()), weights=w)
        for term in report_terms:
            if term in fit.dropped:
                raise CollinearityError(
                    f"regressor {term!r} is collinear after absorption at horizon {h}"
                )
        ckeys = [sub[k].to_numpy() for k in cluster.keys]
        if len(ckeys) == 1:
            fit = regress.cov_cluster(fit, ckeys[0])
        else:
            fit = regress.cov_twoway(fit, ckeys[0], ckeys[1])
        for term in report_terms:
            rows.append(_interval_row(term, h, fit.coef(term), fit.stderr(term), fit.nobs))
    return pd.DataFrame(rows)


def twoway_cluster_cov(fit: regress.FitResult, frame: pd.DataFrame, cluster: ClusterSpec):
    """Covariance for a finished fit under the registry's cluster spec."""
    keys = [frame[k].to_numpy() for k in cluster.keys]
    if len(keys) == 1:
        return regress.cov_cluster(fit, keys[0])
    return regress.cov_twoway(fit, keys[0], keys[1])


def standardize_within_unit(values: pd.Series, units) -> tuple[pd.Series, list]:
    """Per-unit z-scores; units with fewer than two observations or zero
    variance are excluded (NaN) and reported."""
    values = pd.Series(values).astype(float)
    units = pd.Series(units, index=values.index)
    grouped = values.groupby(units.to_numpy())
    mean = grouped.transform("mean")
    sd = grouped.transform("std")
    count = grouped.transform("count")
    bad = (count < 2) | (sd <= 0.0) | sd.isna()
    z = (values - mean) / sd
    z[bad] = np.nan
    excluded = sorted(pd.unique(units[bad.to_numpy()]))
    return z, excluded


def detrend_by_age(leverage, relationship_age, degree: int = 1) -> np.ndarray:
    """Residual leverage after a pooled polynomial fit in relationship age."""
    lev = np.asarray(leverage, dtype=float)
    age = np.asarray(relationship_age, dtype=float)
    if degree not in (1, 2):
        raise DomainError("degree must be 1 or 2")
    if (age < 0).any():
        raise DomainError("relationship age must be nonnegative")
    if len(lev) < degree + 2:
        raise DomainError("too few observations to detrend")
    if np.ptp(age) == 0.0:
        raise CollinearityError("relationship age is constant; polynomial is collinear")
    X = np.column_stack([np.ones(len(age))] + [age**d for d in range(1, degree + 1)])
    beta, *_ = np.linalg.lstsq(X, lev, rcond=None)
    return lev - X @ beta


def marginal_effect(beta_h: float, delta_h: float, x) -> float | np.ndarray:
    """Predicted response at characteristic value x: beta + delta * x."""
    return beta_h + delta_h * np.asarray(x, dtype=float)
