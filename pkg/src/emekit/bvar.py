"""Pooled and group-mean Bayesian VARs with an exogenous identified shock.

The pooled system stacks country blocks into one regression with common
coefficients and a common error covariance. Three priors are supported:

* ``flat``       - noninformative; the posterior mean is the pooled OLS fit
                   and the covariance is sampled from its inverse-Wishart.
* ``minnesota``  - classic Litterman shrinkage toward univariate random
                   walks with the error covariance fixed at univariate AR
                   residual variances, so cross-variable tightness is honored
                   and the coefficient posterior is Gaussian in closed form.
* ``normal_wishart`` - natural-conjugate prior implemented through dummy
                   observations; Kronecker structure means cross-equation
                   tightness is implicitly one.

Impulse responses to the exogenous shock propagate the estimated loading
through the companion matrix, draw by draw; bands are posterior percentiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.interpolate
import scipy.linalg
import scipy.stats

from .datasets import DataError, PanelDataset
from .errors import DomainError

BALANCED_PANEL_MSG = "The VAR requires a balanced panel; use local_projections for unbalanced data"


@dataclass
class VarSpec:
    """Estimation settings for the panel VAR."""

    lags: int = 2
    prior: str = "minnesota"  # minnesota | normal_wishart | flat
    draws: int = 1000
    seed: int = 0
    tightness: float = 0.2  # overall shrinkage toward the prior mean
    cross_shrinkage: float = 0.5  # extra shrinkage on other variables' lags (minnesota)
    lag_decay: float = 1.0
    exog_scale: float = 100.0  # near-flat prior scale on intercept and shock loading
    prior_mean_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lags < 1:
            raise DomainError("need at least one lag")
        if self.draws < 500:
            raise DomainError("draws must be >= 500")
        if self.prior not in ("minnesota", "normal_wishart", "flat"):
            raise DomainError(f"unknown prior {self.prior!r}")


@dataclass
class VarDesign:
    """Stacked regression arrays for Y = X beta + e."""

    Y: np.ndarray
    X: np.ndarray
    var_names: list
    reg_names: list
    lags: int
    n_countries: int
    periods_per_country: int

    @property
    def shock_col(self) -> int:
        return self.reg_names.index("shock")

    @property
    def intercept_col(self) -> int:
        return self.reg_names.index("intercept")

    @property
    def exog_cols(self) -> list:
        # every non-lag regressor gets the near-flat prior treatment
        n_lag = len(self.var_names) * self.lags
        return list(range(n_lag, len(self.reg_names)))


@dataclass
class VarPosterior:
    """Posterior draws of stacked coefficients and the error covariance."""

    coef_draws: np.ndarray  # (draws, k, n)
    sigma_draws: np.ndarray  # (draws, n, n)
    coef_mean: np.ndarray  # analytic posterior mean, (k, n)
    var_names: list
    reg_names: list
    lags: int
    design_dims: dict

    @property
    def n_vars(self) -> int:
        return len(self.var_names)


@dataclass
class IrfResult:
    """Horizon-indexed responses with 68% and 90% bands per variable."""

    horizons: np.ndarray
    variables: list
    point: np.ndarray  # (H+1, n)
    band68_lo: np.ndarray
    band68_hi: np.ndarray
    band90_lo: np.ndarray
    band90_hi: np.ndarray
    normalization: str = ""
    explosive_share: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for j, v in enumerate(self.variables):
            rows.append(
                pd.DataFrame(
                    {
                        "variable": v,
                        "horizon": self.horizons,
                        "point": self.point[:, j],
                        "lo68": self.band68_lo[:, j],
                        "hi68": self.band68_hi[:, j],
                        "lo90": self.band90_lo[:, j],
                        "hi90": self.band90_hi[:, j],
                    }
                )
            )
        return pd.concat(rows, ignore_index=True)


def build_pooled_design(panel: PanelDataset, spec: VarSpec, variables=None) -> VarDesign:
    """Stack country blocks: p lags of every endogenous variable, the
    contemporaneous shock, and an intercept. Drops the first p periods per
    country."""
    if not panel.balanced:
        raise DataError(BALANCED_PANEL_MSG)
    variables = list(variables) if variables is not None else list(panel.variables)
    p = spec.lags
    shock = panel.shock.sort_index()
    ys, xs = [], []
    t_used = None
    for country in panel.countries:
        block = panel.country_frame(country)[variables]
        values = block.to_numpy(dtype=float)
        periods = block.index
        if len(values) <= p:
            raise DataError(f"country {country!r} has too few periods for {p} lags")
        y = values[p:]
        lag_cols = [values[p - l : len(values) - l] for l in range(1, p + 1)]
        sh = shock.loc[periods[p:]].to_numpy(dtype=float)
        x = np.column_stack(lag_cols + [sh, np.ones(len(y))])
        ys.append(y)
        xs.append(x)
        t_used = len(y)
    Y = np.vstack(ys)
    X = np.vstack(xs)
    if not (np.isfinite(Y).all() and np.isfinite(X).all()):
        raise DataError("VAR design contains non-finite values")
    reg_names = [f"{v}_lag{l}" for l in range(1, p + 1) for v in variables] + ["shock", "intercept"]
    return VarDesign(
        Y=Y,
        X=X,
        var_names=variables,
        reg_names=reg_names,
        lags=p,
        n_countries=len(panel.countries),
        periods_per_country=t_used,
    )


def _ar_residual_scales(design: VarDesign) -> np.ndarray:
    """Univariate AR(p) residual SDs, the classic Minnesota scale anchors."""
    p = design.lags
    n = len(design.var_names)
    scales = np.empty(n)
    for i in range(n):
        y = design.Y[:, i]
        cols = [design.X[:, l * n + i] for l in range(p)]
        x = np.column_stack(cols + [np.ones(len(y))])
        beta, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ beta
        scales[i] = np.std(resid, ddof=x.shape[1])
        if not np.isfinite(scales[i]) or scales[i] <= 0.0:
            raise DataError(f"variable {design.var_names[i]!r} has degenerate AR residuals")
    return scales


def _prior_means(design: VarDesign, spec: VarSpec) -> np.ndarray:
    """Random-walk prior mean on the own first lag: 1 for log levels, 0 for rates."""
    means = np.empty(len(design.var_names))
    for i, v in enumerate(design.var_names):
        if v in spec.prior_mean_overrides:
            means[i] = spec.prior_mean_overrides[v]
        else:
            means[i] = 1.0 if v.startswith("ln_") else 0.0
    return means


def _estimate_flat(design: VarDesign, spec: VarSpec, rng) -> VarPosterior:
    Y, X = design.Y, design.X
    rows, k = X.shape
    n = Y.shape[1]
    coef_mean, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ coef_mean
    s = resid.T @ resid
    nu = rows - k
    if nu <= n + 1:
        raise DataError("too few observations for a flat-prior posterior")
    sigma_draws = scipy.stats.invwishart.rvs(df=nu, scale=s, size=spec.draws, random_state=rng)
    sigma_draws = sigma_draws.reshape(spec.draws, n, n)
    v_chol = np.linalg.cholesky(np.linalg.inv(X.T @ X))
    coef_draws = _matrix_normal_draws(coef_mean, v_chol, sigma_draws, rng)
    return VarPosterior(
        coef_draws=coef_draws,
        sigma_draws=sigma_draws,
        coef_mean=coef_mean,
        var_names=design.var_names,
        reg_names=design.reg_names,
        lags=design.lags,
        design_dims={"rows": rows, "k": k, "prior": "flat"},
    )


def _matrix_normal_draws(mean, row_chol, sigma_draws, rng) -> np.ndarray:
    draws, n, _ = sigma_draws.shape
    k = mean.shape[0]
    z = rng.standard_normal((draws, k, n))
    sig_chol = np.linalg.cholesky(sigma_draws)
    return mean[None] + row_chol[None] @ z @ np.transpose(sig_chol, (0, 2, 1))


def _estimate_normal_wishart(design: VarDesign, spec: VarSpec, rng) -> VarPosterior:
    """Conjugate prior через dummy observations appended to the stacked system."""
    Y, X = design.Y, design.X
    rows, k = X.shape
    n = Y.shape[1]
    p = design.lags
    scales = _ar_residual_scales(design)
    deltas = _prior_means(design, spec)

    yd, xd = [], []
    # lag shrinkage rows: prior sd of the (lag l, var j) coefficient in any
    # equation i is sigma_i * tightness / (sigma_j * l^decay)
    for l in range(1, p + 1):
        for j in range(n):
            xrow = np.zeros(k)
            xrow[(l - 1) * n + j] = scales[j] * l**spec.lag_decay / spec.tightness
            yrow = np.zeros(n)
            if l == 1:
                yrow[j] = deltas[j] * scales[j] / spec.tightness
            xd.append(xrow)
            yd.append(yrow)
    # error-covariance anchor rows
    for j in range(n):
        xd.append(np.zeros(k))
        row = np.zeros(n)
        row[j] = scales[j]
        yd.append(row)
    # near-flat rows for the exogenous columns (shock loading, intercept)
    for col in design.exog_cols:
        xrow = np.zeros(k)
        xrow[col] = 1.0 / spec.exog_scale
        xd.append(xrow)
        yd.append(np.zeros(n))

    Xs = np.vstack([X, np.array(xd)])
    Ys = np.vstack([Y, np.array(yd)])
    coef_mean, *_ = np.linalg.lstsq(Xs, Ys, rcond=None)
    resid = Ys - Xs @ coef_mean
    s = resid.T @ resid
    nu = Xs.shape[0] - k
    sigma_draws = scipy.stats.invwishart.rvs(df=nu, scale=s, size=spec.draws, random_state=rng)
    sigma_draws = sigma_draws.reshape(spec.draws, n, n)
    v_chol = np.linalg.cholesky(np.linalg.inv(Xs.T @ Xs))
    coef_draws = _matrix_normal_draws(coef_mean, v_chol, sigma_draws, rng)
    return VarPosterior(
        coef_draws=coef_draws,
        sigma_draws=sigma_draws,
        coef_mean=coef_mean,
        var_names=design.var_names,
        reg_names=design.reg_names,
        lags=design.lags,
        design_dims={"rows": rows, "k": k, "prior": "normal_wishart", "dummies": len(xd)},
    )


def _estimate_minnesota(design: VarDesign, spec: VarSpec, rng) -> VarPosterior:
    """Litterman prior: fixed diagonal error covariance, Gaussian posterior
    equation by equation, honoring cross-variable shrinkage."""
    Y, X = design.Y, design.X
    rows, k = X.shape
    n = Y.shape[1]
    p = design.lags
    scales = _ar_residual_scales(design)
    deltas = _prior_means(design, spec)
    xtx = X.T @ X
    xty = X.T @ Y

    coef_mean = np.empty((k, n))
    post_chols = []
    for i in range(n):
        prior_sd = np.empty(k)
        b0 = np.zeros(k)
        for l in range(1, p + 1):
            for j in range(n):
                cross = 1.0 if j == i else spec.cross_shrinkage
                prior_sd[(l - 1) * n + j] = (
                    spec.tightness * cross * scales[i] / (scales[j] * l**spec.lag_decay)
                )
        for col in design.exog_cols:
            prior_sd[col] = spec.exog_scale * scales[i]
        b0[i] = deltas[i]  # own first lag
        prec = np.diag(1.0 / prior_sd**2) + xtx / scales[i] ** 2
        rhs = b0 / prior_sd**2 + xty[:, i] / scales[i] ** 2
        chol = np.linalg.cholesky(prec)
        mean_i = scipy.linalg.cho_solve((chol, True), rhs)
        coef_mean[:, i] = mean_i
        post_chols.append(scipy.linalg.solve_triangular(chol, np.eye(k), lower=True).T)

    z = rng.standard_normal((spec.draws, k, n))
    coef_draws = np.empty((spec.draws, k, n))
    for i in range(n):
        coef_draws[:, :, i] = coef_mean[None, :, i] + z[:, :, i] @ post_chols[i].T
    sigma = np.diag(scales**2)
    sigma_draws = np.broadcast_to(sigma, (spec.draws, n, n)).copy()
    return VarPosterior(
        coef_draws=coef_draws,
        sigma_draws=sigma_draws,
        coef_mean=coef_mean,
        var_names=design.var_names,
        reg_names=design.reg_names,
        lags=design.lags,
        design_dims={"rows": rows, "k": k, "prior": "minnesota"},
    )


def estimate_bvar(design: VarDesign, spec: VarSpec) -> VarPosterior:
    """Sample the coefficient/covariance posterior for the stacked system."""
    if not (np.isfinite(design.Y).all() and np.isfinite(design.X).all()):
        raise DataError("non-finite values in the VAR design")
    rng = np.random.default_rng(spec.seed)
    if spec.prior == "flat":
        return _estimate_flat(design, spec, rng)
    if spec.prior == "normal_wishart":
        return _estimate_normal_wishart(design, spec, rng)
    return _estimate_minnesota(design, spec, rng)


def _companion(coef: np.ndarray, n: int, p: int) -> np.ndarray:
    comp = np.zeros((n * p, n * p))
    for l in range(p):
        comp[:n, l * n : (l + 1) * n] = coef[l * n : (l + 1) * n, :].T
    if p > 1:
        comp[n:, : n * (p - 1)] = np.eye(n * (p - 1))
    return comp


def irf_exogenous(posterior: VarPosterior, horizon: int, shock_size: float = 1.0) -> IrfResult:
    """Responses to the exogenous shock: impact is the loading row, later
    horizons propagate through companion powers. Explosive draws are kept and
    their share reported."""
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    n = posterior.n_vars
    p = posterior.lags
    draws = posterior.coef_draws.shape[0]
    shock_row = posterior.reg_names.index("shock")
    paths = np.empty((draws, horizon + 1, n))
    explosive = 0
    for d in range(draws):
        coef = posterior.coef_draws[d]
        impact = shock_size * coef[shock_row, :]
        comp = _companion(coef, n, p)
        if np.abs(np.linalg.eigvals(comp)).max() > 1.0:
            explosive += 1
        state = np.zeros(n * p)
        state[:n] = impact
        paths[d, 0] = impact
        for h in range(1, horizon + 1):
            state = comp @ state
            paths[d, h] = state[:n]
    point = np.median(paths, axis=0)
    lo68, hi68 = np.percentile(paths, [16, 84], axis=0)
    lo90, hi90 = np.percentile(paths, [5, 95], axis=0)
    return IrfResult(
        horizons=np.arange(horizon + 1),
        variables=posterior.var_names,
        point=point,
        band68_lo=lo68,
        band68_hi=hi68,
        band90_lo=lo90,
        band90_hi=hi90,
        normalization=f"one-standard-deviation shock x {shock_size:g}",
        explosive_share=explosive / draws,
    )


def true_irf(lag_coefs: np.ndarray, loading: np.ndarray, horizon: int) -> np.ndarray:
    """Analytic responses for a known VAR: loading propagated through the
    companion matrix. ``lag_coefs`` is (p, n, n) mapping lag l to current."""
    p, n, _ = lag_coefs.shape
    stacked = np.vstack([lag_coefs[l].T for l in range(p)])  # (n*p, n) layout as coef rows
    comp = _companion(stacked, n, p)
    out = np.empty((horizon + 1, n))
    state = np.zeros(n * p)
    state[:n] = loading
    out[0] = loading
    for h in range(1, horizon + 1):
        state = comp @ state
        out[h] = state[:n]
    return out


def group_mean_var(panel: PanelDataset, spec: VarSpec) -> VarPosterior:
    """De-mean by country, average across countries, estimate a single system."""
    if not panel.balanced:
        raise DataError(BALANCED_PANEL_MSG)
    frames = []
    for country in panel.countries:
        block = panel.country_frame(country)
        frames.append(block - block.mean(axis=0))
    avg = sum(frames[1:], frames[0]) / len(frames)
    sds = avg.std(ddof=1)
    tiny = sds[sds <= 1e-12 * max(1.0, float(sds.max()))]
    if len(tiny):
        raise DataError(
            f"averaged deviations are degenerate (zero variance) for: {list(tiny.index)}"
        )
    avg_panel = PanelDataset(
        data=pd.concat({"avg": avg}, names=["country"]),
        shock=panel.shock,
        balanced=True,
        global_block_common=False,
    )
    design = build_pooled_design(avg_panel, spec)
    return estimate_bvar(design, spec)


def cholesky_structural_shock(data: pd.DataFrame, ordering: list, spec: VarSpec):
    """First structural shock of a recursively identified single-unit VAR.

    Per posterior draw the reduced-form residuals are rotated by the inverse
    of the lower Cholesky factor of that draw's covariance; the median across
    draws of the first structural shock is returned together with draw
    diagnostics.
    """
    missing = [v for v in ordering if v not in data.columns]
    if missing:
        raise DataError(f"ordering names variables not in the data: {missing}")
    frame = data[ordering].astype(float)
    p = spec.lags
    if len(frame) <= len(ordering) * p + 2:
        raise DataError("too few periods for the requested lag order")
    values = frame.to_numpy()
    y = values[p:]
    lag_cols = [values[p - l : len(values) - l] for l in range(1, p + 1)]
    x = np.column_stack(lag_cols + [np.ones(len(y))])
    reg_names = [f"{v}_lag{l}" for l in range(1, p + 1) for v in ordering] + ["intercept"]
    design = VarDesign(
        Y=y,
        X=x,
        var_names=list(ordering),
        reg_names=reg_names,
        lags=p,
        n_countries=1,
        periods_per_country=len(y),
    )
    # no exogenous shock term in the comparison VARs
    posterior = estimate_bvar(design, spec)
    draws = posterior.coef_draws.shape[0]
    shocks = np.empty((draws, len(y)))
    rejected = 0
    for d in range(draws):
        resid = y - x @ posterior.coef_draws[d]
        sigma = posterior.sigma_draws[d]
        try:
            low = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            rejected += 1
            shocks[d] = np.nan
            continue
        shocks[d] = resid[:, 0] / low[0, 0]
    med = np.nanmedian(shocks, axis=0)
    series = pd.Series(med, index=frame.index[p:], name="structural_shock_1")
    return series, {"rejected_draws": rejected, "draws": draws}


def cubic_spline_interpolate(quarterly) -> pd.Series | np.ndarray:
    """Natural cubic spline from quarterly knots to a monthly grid.

    Knots sit at each quarter's final month; output covers the months
    between the first and last knot and passes through every knot exactly.
    """
    if isinstance(quarterly, pd.Series):
        values = quarterly.to_numpy(dtype=float)
    else:
        values = np.asarray(quarterly, dtype=float)
    if len(values) < 4:
        raise DomainError("cubic spline interpolation needs at least 4 quarterly points")
    knots = 3.0 * np.arange(len(values)) + 2.0  # month index of each quarter end
    spline = scipy.interpolate.CubicSpline(knots, values, bc_type="natural")
    months = np.arange(2, int(knots[-1]) + 1)
    out = spline(months.astype(float))
    if isinstance(quarterly, pd.Series) and isinstance(quarterly.index, pd.PeriodIndex):
        start = quarterly.index[0].asfreq("M", how="end")
        idx = pd.period_range(start, periods=len(months), freq="M")
        return pd.Series(out, index=idx, name=quarterly.name)
    return out
