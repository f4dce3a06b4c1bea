"""Weighted least squares with rank handling and clustered covariances.

Single home for the sandwich algebra so that the macro local projections and
the registry-scale micro regressions report identical inference for
identical inputs. Two-way clustering combines the two one-way matrices by
inclusion-exclusion and repairs any indefiniteness by truncating negative
eigenvalues at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CollinearityError, DomainError


@dataclass
class FitResult:
    """WLS estimates with a covariance attached by one of the cov_* helpers."""

    params: np.ndarray
    names: list
    nobs: int
    rank: int
    dropped: list
    resid: np.ndarray
    bread: np.ndarray  # (X'WX)^{-1} on kept columns
    kept: np.ndarray
    weights: np.ndarray
    design: np.ndarray
    cov: np.ndarray | None = None
    se: np.ndarray | None = None
    cov_info: dict = field(default_factory=dict)

    def coef(self, name) -> float:
        return float(self.params[self.names.index(name)])

    def stderr(self, name) -> float:
        return float(self.se[self.names.index(name)])


def _as_codes(key) -> np.ndarray:
    _, codes = np.unique(np.asarray(key), return_inverse=True)
    return codes


def _pair_codes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _as_codes(a.astype(np.int64) * (b.max() + 1) + b.astype(np.int64))


def wls(y, X, names=None, weights=None, rcond: float = 1e-10) -> FitResult:
    """Weighted least squares dropping collinear columns by pivoted QR.

    Dropped column names are recorded on the result; their coefficient slots
    are NaN so downstream code can detect an absorbed or degenerate term.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if names is None:
        names = [f"x{j}" for j in range(k)]
    if len(names) != k:
        raise ValueError("names length does not match design columns")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if (w <= 0).any():
            raise DomainError("weights must be strictly positive")
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw

    r = scipy.linalg.qr(Xw, mode="r", pivoting=True)
    rdiag = np.abs(np.diag(r[0]))
    pivots = r[1]
    if rdiag.size == 0 or rdiag[0] == 0.0:
        raise CollinearityError("design matrix is identically zero")
    rank = int(np.sum(rdiag > rcond * rdiag[0]))
    kept = np.sort(pivots[:rank])
    dropped = [names[j] for j in np.sort(pivots[rank:])]

    Xk = Xw[:, kept]
    beta_k, *_ = np.linalg.lstsq(Xk, yw, rcond=None)
    params = np.full(k, np.nan)
    params[kept] = beta_k
    fitted = X[:, kept] @ beta_k
    resid = y - fitted
    xtx = Xk.T @ Xk
    bread = np.linalg.inv(xtx)
    return FitResult(
        params=params,
        names=list(names),
        nobs=n,
        rank=rank,
        dropped=dropped,
        resid=resid,
        bread=bread,
        kept=kept,
        weights=w,
        design=X,
    )


def iv_2sls(y, endog, exog, instruments, names=None, weights=None) -> FitResult:
    """Two-stage least squares with one endogenous regressor.

    Regressors are X = [endog | exog], instruments Z = [instruments | exog].
    The returned FitResult carries the projected design (X-hat) so the
    clustered covariances below produce the standard IV sandwich, while the
    residuals are structural: y - X beta at the actual regressors.
    """
    y = np.asarray(y, dtype=float)
    endog = np.asarray(endog, dtype=float).reshape(-1, 1)
    exog = np.asarray(exog, dtype=float)
    instruments = np.asarray(instruments, dtype=float)
    if instruments.ndim == 1:
        instruments = instruments.reshape(-1, 1)
    n = len(y)
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
    sw = np.sqrt(w)

    X = np.column_stack([endog, exog])
    k = X.shape[1]
    if names is None:
        names = ["endog"] + [f"x{j}" for j in range(exog.shape[1])]

    r = scipy.linalg.qr(X * sw[:, None], mode="r", pivoting=True)
    rdiag = np.abs(np.diag(r[0]))
    rank = int(np.sum(rdiag > 1e-10 * rdiag[0]))
    kept = np.sort(r[1][:rank])
    if 0 not in kept:
        raise CollinearityError("endogenous regressor is collinear with the controls")
    dropped = [names[j] for j in np.sort(r[1][rank:])]
    kept_exog = X[:, kept[1:]] if rank > 1 else np.empty((n, 0))

    Z = np.column_stack([instruments, kept_exog]) * sw[:, None]
    Xk = X[:, kept] * sw[:, None]
    gamma, *_ = np.linalg.lstsq(Z, Xk, rcond=None)
    Xhat = Z @ gamma
    beta_k, *_ = np.linalg.lstsq(Xhat, y * sw, rcond=None)
    params = np.full(k, np.nan)
    params[kept] = beta_k
    resid = y - X[:, kept] @ beta_k
    bread = np.linalg.inv(Xhat.T @ Xhat)
    design = X.copy()
    design[:, kept] = Xhat / sw[:, None]  # scores use the projected regressors
    return FitResult(
        params=params,
        names=list(names),
        nobs=n,
        rank=rank,
        dropped=dropped,
        resid=resid,
        bread=bread,
        kept=kept,
        weights=w,
        design=design,
        cov=None,
        se=None,
    )


def _expand_cov(fit: FitResult, cov_kept: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = len(fit.names)
    cov = np.full((k, k), np.nan)
    cov[np.ix_(fit.kept, fit.kept)] = cov_kept
    se = np.full(k, np.nan)
    se[fit.kept] = np.sqrt(np.clip(np.diag(cov_kept), 0.0, None))
    return cov, se


def _scores(fit: FitResult) -> np.ndarray:
    # WLS estimating equations: sum_i w_i x_i u_i = 0
    return fit.design[:, fit.kept] * (fit.weights * fit.resid)[:, None]


def _meat_oneway(scores: np.ndarray, codes: np.ndarray) -> tuple[np.ndarray, int]:
    n_groups = codes.max() + 1
    sums = np.zeros((n_groups, scores.shape[1]))
    np.add.at(sums, codes, scores)
    return sums.T @ sums, int(n_groups)


def _cr1(n_groups: int, nobs: int, k: int) -> float:
    return (n_groups / (n_groups - 1)) * ((nobs - 1) / (nobs - k))


def cov_hc(fit: FitResult) -> FitResult:
    """Heteroskedasticity-robust (each row its own cluster), with CR1 scaling."""
    scores = _scores(fit)
    meat = scores.T @ scores
    c = _cr1(fit.nobs, fit.nobs, fit.rank)
    cov_kept = c * fit.bread @ meat @ fit.bread
    fit.cov, fit.se = _expand_cov(fit, cov_kept)
    fit.cov_info = {"type": "hc", "n_clusters": fit.nobs}
    return fit


def cov_cluster(fit: FitResult, key) -> FitResult:
    """One-way cluster-robust covariance with the CR1 small-sample factor."""
    codes = _as_codes(key)
    if len(codes) != fit.nobs:
        raise ValueError("cluster key length does not match observations")
    n_groups = codes.max() + 1
    if n_groups < 2:
        raise DomainError("need at least 2 clusters for a clustered variance")
    scores = _scores(fit)
    meat, g = _meat_oneway(scores, codes)
    cov_kept = _cr1(g, fit.nobs, fit.rank) * fit.bread @ meat @ fit.bread
    fit.cov, fit.se = _expand_cov(fit, cov_kept)
    fit.cov_info = {"type": "cluster", "n_clusters": g}
    return fit


def cov_twoway(fit: FitResult, key_a, key_b) -> FitResult:
    """Two-way clustering by inclusion-exclusion over the two keys.

    V = V_A + V_B - V_{A&B}, each piece CR1-scaled by its own cluster count.
    A non-positive-semidefinite result is repaired by zeroing negative
    eigenvalues; the event is flagged in ``cov_info``.
    """
    codes_a = _as_codes(key_a)
    codes_b = _as_codes(key_b)
    if len(codes_a) != fit.nobs or len(codes_b) != fit.nobs:
        raise ValueError("cluster key length does not match observations")
    if codes_a.max() + 1 < 2 or codes_b.max() + 1 < 2:
        raise DomainError("each cluster dimension needs at least 2 clusters")
    scores = _scores(fit)
    pieces = []
    counts = []
    for codes in (codes_a, codes_b, _pair_codes(codes_a, codes_b)):
        meat, g = _meat_oneway(scores, codes)
        pieces.append(_cr1(g, fit.nobs, fit.rank) * fit.bread @ meat @ fit.bread)
        counts.append(g)
    cov_kept = pieces[0] + pieces[1] - pieces[2]

    repaired = False
    sym = 0.5 * (cov_kept + cov_kept.T)
    min_eig = float(np.linalg.eigvalsh(sym).min())
    if min_eig < 0.0:
        vals, vecs = np.linalg.eigh(sym)
        cov_kept = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        repaired = True
    fit.cov, fit.se = _expand_cov(fit, cov_kept)
    fit.cov_info = {
        "type": "twoway",
        "n_clusters": tuple(counts[:2]),
        "n_intersections": counts[2],
        "psd_repaired": repaired,
        "raw_min_eig": min_eig,
    }
    return fit
