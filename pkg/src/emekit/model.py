"""Two-period global-bank / emerging-market-firm equilibrium.

A risk-neutral global bank funds a representative high-pledgeability US
borrower and a finite grid of heterogeneous EME firms out of net worth,
deposits, and (costly) equity. A leverage constraint on deposits generates
loan spreads proportional to the constraint multiplier and to one minus each
borrower's pledgeability. Firms choose capital financed one-for-one with new
debt, defaulting when a uniform productivity draw falls short of their debt
burden. The module solves the bank problem, the firm problem, and the
comparative statics of the allocation in bank net worth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DomainError, RegimeChangeError, SolverError

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ModelParams:
    """Economy parameters. Per-firm entries broadcast to a common grid length."""

    alpha: float
    productivity_A: np.ndarray
    theta: np.ndarray
    legacy_debt_D0: np.ndarray
    theta_us: float
    deposit_rate_Rd: float
    lambda_leverage: float
    net_worth_n0: float
    equity_cost_phi: float
    firm_grid: np.ndarray | None = None
    firm_weights: np.ndarray | None = None

    def __post_init__(self):
        self.productivity_A = np.atleast_1d(np.asarray(self.productivity_A, dtype=float))
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.legacy_debt_D0 = np.atleast_1d(np.asarray(self.legacy_debt_D0, dtype=float))
        n = max(len(self.productivity_A), len(self.theta), len(self.legacy_debt_D0))
        if n == 0:
            raise DomainError("firm grid must be nonempty")
        self.productivity_A = np.broadcast_to(self.productivity_A, (n,)).astype(float)
        self.theta = np.broadcast_to(self.theta, (n,)).astype(float)
        self.legacy_debt_D0 = np.broadcast_to(self.legacy_debt_D0, (n,)).astype(float)
        if self.firm_grid is None:
            self.firm_grid = np.arange(n)
        else:
            self.firm_grid = np.asarray(self.firm_grid)
            if len(self.firm_grid) != n:
                raise DomainError("firm_grid length does not match per-firm parameters")
        if self.firm_weights is None:
            self.firm_weights = np.full(n, 1.0 / n)
        else:
            self.firm_weights = np.asarray(self.firm_weights, dtype=float)
            if len(self.firm_weights) != n or (self.firm_weights < 0).any():
                raise DomainError("firm_weights must be nonnegative and match the grid")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if (self.productivity_A <= 0).any():
            raise DomainError("productivity_A must be positive")
        if ((self.theta <= 0) | (self.theta >= 1)).any():
            raise DomainError("theta must lie in (0, 1)")
        if (self.legacy_debt_D0 < 0).any():
            raise DomainError("legacy_debt_D0 must be nonnegative")
        if not 0.0 < self.theta_us < 1.0:
            raise DomainError("theta_us must lie in (0, 1)")
        if self.theta_us <= self.theta.max():
            raise DomainError("theta_us must strictly exceed every firm theta")
        if self.deposit_rate_Rd <= 1.0:
            raise DomainError("deposit_rate_Rd must exceed 1 (gross rate)")
        if self.lambda_leverage <= 0:
            raise DomainError("lambda_leverage must be positive")
        if self.net_worth_n0 <= 0:
            raise DomainError("net_worth_n0 must be positive")
        if self.equity_cost_phi <= 0:
            raise DomainError("equity_cost_phi must be positive")

    @property
    def n_firms(self) -> int:
        return len(self.theta)

    def replace_n0(self, n0: float) -> "ModelParams":
        return ModelParams(
            alpha=self.alpha,
            productivity_A=self.productivity_A,
            theta=self.theta,
            legacy_debt_D0=self.legacy_debt_D0,
            theta_us=self.theta_us,
            deposit_rate_Rd=self.deposit_rate_Rd,
            lambda_leverage=self.lambda_leverage,
            net_worth_n0=n0,
            equity_cost_phi=self.equity_cost_phi,
            firm_grid=self.firm_grid,
            firm_weights=self.firm_weights,
        )


@dataclass
class FirmDecision:
    """One firm's optimal choice at a given loan price."""

    capital_k: float
    default_threshold: float
    expected_equity: float
    foc_residual: float
    at_boundary: bool

    @property
    def certain_default(self) -> bool:
        return self.default_threshold >= 1.0


@dataclass
class Equilibrium:
    """Solved bank allocation at a leverage multiplier ``multiplier_mu``."""

    multiplier_mu: float
    loan_prices_q: np.ndarray
    us_price_q: float
    capital_k: np.ndarray
    loans_b: np.ndarray
    us_loans: float
    deposits_d0: float
    equity_issuance_e0: float
    constraint_binding: bool
    constraint_slack: float = 0.0
    bisection_iterations: int = 0

    def balance_sheet_gap(self, params: ModelParams) -> float:
        phi_cost = 0.5 * params.equity_cost_phi * self.equity_issuance_e0**2
        assets = self.us_price_q * self.us_loans + float(
            np.sum(params.firm_weights * self.loan_prices_q * self.loans_b)
        )
        return assets - (params.net_worth_n0 + self.deposits_d0 + self.equity_issuance_e0 - phi_cost)


def spreads_from(params: ModelParams, eq: Equilibrium) -> np.ndarray:
    return 1.0 / eq.loan_prices_q - params.deposit_rate_Rd


def default_threshold(new_debt_d, loan_price_q, legacy_debt_D0, productivity_A, capital_k, alpha):
    """Productivity cutoff below which the firm defaults.

    Returns ((d / q) + D0) / (A k^alpha), unclamped; values at or above 1
    mean default is certain.
    """
    if loan_price_q <= 0:
        raise DomainError("loan price must be positive")
    if productivity_A <= 0:
        raise DomainError("productivity must be positive")
    if capital_k < 0 or new_debt_d < 0 or legacy_debt_D0 < 0:
        raise DomainError("debt and capital must be nonnegative")
    if capital_k == 0:
        if new_debt_d > 0:
            raise DomainError("zero capital with positive new debt gives an infinite threshold")
        if legacy_debt_D0 > 0:
            return np.inf
        return 0.0
    burden = new_debt_d / loan_price_q + legacy_debt_D0
    return burden / (productivity_A * capital_k**alpha)


def loan_price(deposit_rate_Rd, multiplier_mu, theta):
    """Loan price q = 1 / (Rd + mu (1 - theta)); the spread 1/q - Rd is mu (1 - theta)."""
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    if deposit_rate_Rd <= 0:
        raise DomainError("deposit rate must be positive")
    if multiplier_mu < 0:
        raise DomainError("multiplier must be nonnegative")
    return 1.0 / (deposit_rate_Rd + multiplier_mu * (1.0 - theta))


def _equity_value(k, q, D0, A, alpha):
    """Expected firm equity at capital k = d, vectorized; zero under certain default."""
    k = np.asarray(k, dtype=float)
    scalar = k.ndim == 0 and np.ndim(q) == 0 and np.ndim(D0) == 0 and np.ndim(A) == 0
    k = np.atleast_1d(k)
    k, q, D0, A = np.broadcast_arrays(k, q, D0, A)
    pos = k > 0
    kp = np.where(pos, k, 1.0)
    revenue = A * kp**alpha
    burden = kp / q + D0
    eps_star = burden / revenue
    live = pos & (eps_star < 1.0)
    val = revenue * (1.0 - eps_star**2) / 2.0 - burden * (1.0 - eps_star)
    out = np.where(live, val, 0.0)
    return float(out[0]) if scalar else out


def expected_equity(capital_k, loan_price_q, legacy_debt_D0, productivity_A, alpha):
    """Closed-form expected equity A k^a (1 - e*^2)/2 - (k/q + D0)(1 - e*), zero when e* >= 1."""
    if loan_price_q <= 0:
        raise DomainError("loan price must be positive")
    if productivity_A <= 0:
        raise DomainError("productivity must be positive")
    if capital_k < 0:
        raise DomainError("capital must be nonnegative")
    if capital_k == 0:
        return 0.0
    return float(_equity_value(capital_k, loan_price_q, legacy_debt_D0, productivity_A, alpha))


def _frictionless_k(q, A, alpha):
    # argmax of A k^a / 2 - k / q, the no-default benchmark used to bound the search.
    return (q * alpha * A / 2.0) ** (1.0 / (1.0 - alpha))


def _optimal_capital_grid(q, D0, A, alpha, k_max=None, n_grid=200, refine_iters=64):
    """Vectorized firm optimum: coarse log grid then golden-section refinement.

    The objective can be non-concave near the shutdown boundary, so the grid
    stage locates the basin before any local refinement. Returns arrays
    (k_star, value, at_boundary).
    """
    q, D0, A = np.broadcast_arrays(
        np.atleast_1d(np.asarray(q, float)),
        np.atleast_1d(np.asarray(D0, float)),
        np.atleast_1d(np.asarray(A, float)),
    )
    if k_max is None:
        k_max = 100.0 * _frictionless_k(q, A, alpha)
    else:
        k_max = np.broadcast_to(np.asarray(k_max, float), q.shape)
    grid = np.geomspace(1e-6, 1.0, n_grid)  # relative to k_max per firm
    kk = k_max[:, None] * grid[None, :]
    vals = _equity_value(kk, q[:, None], D0[:, None], A[:, None], alpha)
    best = np.argmax(vals, axis=1)
    best_val = vals[np.arange(len(q)), best]

    # golden-section on the bracketing interval around the grid argmax
    lo_idx = np.maximum(best - 1, 0)
    hi_idx = np.minimum(best + 1, n_grid - 1)
    a = kk[np.arange(len(q)), lo_idx]
    b = kk[np.arange(len(q)), hi_idx]
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = _equity_value(c, q, D0, A, alpha)
    fd = _equity_value(d, q, D0, A, alpha)
    for _ in range(refine_iters):
        take = fc > fd
        b = np.where(take, d, b)
        a = np.where(take, a, c)
        c_old, fc_old = c, fc
        d_old, fd_old = d, fd
        c = np.where(take, b - _INVPHI * (b - a), d_old)
        d = np.where(take, c_old, a + _INVPHI * (b - a))
        fnew = _equity_value(np.where(take, c, d), q, D0, A, alpha)
        fc = np.where(take, fnew, fd_old)
        fd = np.where(take, fc_old, fnew)
    k_star = 0.5 * (a + b)
    value = _equity_value(k_star, q, D0, A, alpha)

    # shutdown dominates when nothing on the grid beats zero equity
    shutdown = (best_val <= 0.0) & (value <= 0.0)
    k_star = np.where(shutdown, 0.0, k_star)
    value = np.where(shutdown, 0.0, value)
    at_boundary = shutdown | (best == n_grid - 1)
    return k_star, value, at_boundary


def optimal_capital(loan_price_q, legacy_debt_D0, productivity_A, alpha, k_max=None) -> FirmDecision:
    """Maximize expected equity over capital; boundary optima are flagged."""
    if loan_price_q <= 0:
        raise DomainError("loan price must be positive")
    if productivity_A <= 0:
        raise DomainError("productivity must be positive")
    k, val, boundary = _optimal_capital_grid(
        loan_price_q, legacy_debt_D0, productivity_A, alpha, k_max=k_max
    )
    k, val, boundary = float(k[0]), float(val[0]), bool(boundary[0])
    if k > 0:
        h = 1e-6 * max(k, 1.0)
        lo = max(k - h, 0.0)
        deriv = (
            _equity_value(k + h, loan_price_q, legacy_debt_D0, productivity_A, alpha)
            - _equity_value(lo, loan_price_q, legacy_debt_D0, productivity_A, alpha)
        ) / (k + h - lo)
        # dimensionless residual: marginal value per unit marginal funding cost
        foc = float(deriv * loan_price_q)
        thresh = default_threshold(k, loan_price_q, legacy_debt_D0, productivity_A, k, alpha)
    else:
        foc = 0.0
        thresh = np.inf if legacy_debt_D0 > 0 else 1.0
    return FirmDecision(
        capital_k=k,
        default_threshold=thresh,
        expected_equity=val,
        foc_residual=foc,
        at_boundary=boundary,
    )


def _allocation_at_mu(params: ModelParams, mu: float):
    """Prices, demands, and the leverage-constraint slack at a trial multiplier."""
    rd = params.deposit_rate_Rd
    q = 1.0 / (rd + mu * (1.0 - params.theta))
    q_us = 1.0 / (rd + mu * (1.0 - params.theta_us))
    k, _, _ = _optimal_capital_grid(q, params.legacy_debt_D0, params.productivity_A, params.alpha)
    # US borrower: same technology, no legacy burden, grid-average productivity
    a_us = float(params.productivity_A.mean())
    k_us, _, _ = _optimal_capital_grid(np.array([q_us]), np.array([0.0]), np.array([a_us]), params.alpha)
    b_us = float(k_us[0])
    eme_assets = float(np.sum(params.firm_weights * q * k))
    assets = q_us * b_us + eme_assets
    d0 = assets - params.net_worth_n0  # e0 = 0 in the baseline solve
    pledge = params.theta_us * q_us * b_us + float(np.sum(params.firm_weights * params.theta * q * k))
    slack = pledge + params.lambda_leverage * params.net_worth_n0 - rd * d0
    return q, q_us, k, b_us, d0, slack


def solve_bank_equilibrium(params: ModelParams, slack_tol: float = 1e-8, max_iter: int = 200) -> Equilibrium:
    """Find the multiplier closing the leverage constraint by bisection.

    mu = 0 is returned when the constraint is slack at frictionless prices;
    otherwise mu solves constraint equality to ``slack_tol`` relative. The
    initial bracket [0, 10 Rd] doubles up to four times before failing.
    """
    rd = params.deposit_rate_Rd
    scale = max(1.0, rd * params.net_worth_n0 * (1.0 + params.lambda_leverage))

    q0, qus0, k0, bus0, d00, slack0 = _allocation_at_mu(params, 0.0)
    if slack0 >= 0.0:
        return Equilibrium(
            multiplier_mu=0.0,
            loan_prices_q=q0,
            us_price_q=qus0,
            capital_k=k0,
            loans_b=k0.copy(),
            us_loans=bus0,
            deposits_d0=d00,
            equity_issuance_e0=0.0,
            constraint_binding=False,
            constraint_slack=slack0,
            bisection_iterations=0,
        )

    lo, f_lo = 0.0, slack0
    hi = 10.0 * rd
    f_hi = _allocation_at_mu(params, hi)[-1]
    doublings = 0
    while f_hi < 0.0 and doublings < 4:
        hi *= 2.0
        f_hi = _allocation_at_mu(params, hi)[-1]
        doublings += 1
    if f_hi < 0.0:
        raise SolverError(
            f"no admissible multiplier in [0, {hi:g}]: slack({lo:g})={f_lo:.3e}, "
            f"slack({hi:g})={f_hi:.3e}; check parameterization"
        )

    mid = 0.5 * (lo + hi)
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        f_mid = _allocation_at_mu(params, mid)[-1]
        if abs(f_mid) <= slack_tol * scale:
            break
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    else:
        raise SolverError(
            f"bisection did not reach |slack| <= {slack_tol:g} * {scale:g} in {max_iter} iterations"
        )

    q, q_us, k, b_us, d0, slack = _allocation_at_mu(params, mid)
    return Equilibrium(
        multiplier_mu=mid,
        loan_prices_q=q,
        us_price_q=q_us,
        capital_k=k,
        loans_b=k.copy(),
        us_loans=b_us,
        deposits_d0=d0,
        equity_issuance_e0=0.0,
        constraint_binding=True,
        constraint_slack=slack,
        bisection_iterations=it,
    )


def solve_equilibrium_path(
    params: ModelParams, n0_values, slack_tol: float = 1e-8, max_iter: int = 120
):
    """Solve the bank problem for every net-worth value at once.

    Bisection runs in parallel across scenarios (vectorized over the
    scenario x firm grid), which keeps long simulated paths tractable.
    Returns (mu, q, k, binding) with shapes (S,), (S, F), (S, F), (S,).
    """
    n0 = np.asarray(n0_values, dtype=float)
    if (n0 <= 0).any():
        raise DomainError("net worth must be positive along the path")
    rd = params.deposit_rate_Rd
    theta = params.theta
    w = params.firm_weights
    a_us = float(params.productivity_A.mean())
    S, F = len(n0), params.n_firms
    d0_flat = np.tile(params.legacy_debt_D0, S)
    a_flat = np.tile(params.productivity_A, S)

    def slack_and_alloc(mu):
        q = 1.0 / (rd + mu[:, None] * (1.0 - theta[None, :]))
        q_us = 1.0 / (rd + mu * (1.0 - params.theta_us))
        k, _, _ = _optimal_capital_grid(q.ravel(), d0_flat, a_flat, params.alpha)
        k = k.reshape(S, F)
        k_us, _, _ = _optimal_capital_grid(q_us, np.zeros(S), np.full(S, a_us), params.alpha)
        assets = q_us * k_us + (w[None, :] * q * k).sum(axis=1)
        d0 = assets - n0
        pledge = params.theta_us * q_us * k_us + (w[None, :] * theta[None, :] * q * k).sum(axis=1)
        slack = pledge + params.lambda_leverage * n0 - rd * d0
        return slack, q, k

    scale = np.maximum(1.0, rd * n0 * (1.0 + params.lambda_leverage))
    slack0, q0, k0 = slack_and_alloc(np.zeros(S))
    binding = slack0 < 0.0

    lo = np.zeros(S)
    hi = np.full(S, 10.0 * rd)
    f_hi = slack_and_alloc(hi)[0]
    for _ in range(4):
        need = binding & (f_hi < 0.0)
        if not need.any():
            break
        hi = np.where(need, hi * 2.0, hi)
        f_hi = slack_and_alloc(hi)[0]
    if (binding & (f_hi < 0.0)).any():
        bad = np.flatnonzero(binding & (f_hi < 0.0))[:5]
        raise SolverError(f"no admissible multiplier for scenarios {bad.tolist()}")

    mu = np.zeros(S)
    for _ in range(max_iter):
        active = binding
        mid = 0.5 * (lo + hi)
        f_mid = slack_and_alloc(np.where(active, mid, 0.0))[0]
        done = np.abs(f_mid) <= slack_tol * scale
        go_up = f_mid < 0.0
        lo = np.where(active & ~done & go_up, mid, lo)
        hi = np.where(active & ~done & ~go_up, mid, hi)
        mu = np.where(active, mid, 0.0)
        if ((~active) | done | (hi - lo <= 1e-15 * np.maximum(1.0, hi))).all():
            break
    slack, q, k = slack_and_alloc(mu)
    q = np.where(binding[:, None], q, q0)
    k = np.where(binding[:, None], k, k0)
    return mu, q, k, binding


def comparative_statics_n0(params: ModelParams, delta_n0: float | None = None) -> pd.DataFrame:
    """Centered finite differences of (mu, spreads, capital) in bank net worth.

    Requires the constraint to bind at n0 and at n0 +/- delta_n0. No closed
    form of the cross-firm response is used anywhere; everything is numeric.
    """
    if delta_n0 is None:
        delta_n0 = 1e-3 * params.net_worth_n0
    if delta_n0 <= 0 or delta_n0 >= params.net_worth_n0:
        raise DomainError("delta_n0 must be positive and smaller than n0")
    eq0 = solve_bank_equilibrium(params)
    eq_m = solve_bank_equilibrium(params.replace_n0(params.net_worth_n0 - delta_n0))
    eq_p = solve_bank_equilibrium(params.replace_n0(params.net_worth_n0 + delta_n0))
    if not (eq0.constraint_binding and eq_m.constraint_binding and eq_p.constraint_binding):
        raise RegimeChangeError(
            "constraint regime changes within the finite-difference step; reduce delta_n0"
        )
    d_mu = (eq_p.multiplier_mu - eq_m.multiplier_mu) / (2.0 * delta_n0)
    spread_p = spreads_from(params, eq_p)
    spread_m = spreads_from(params, eq_m)
    d_spread = (spread_p - spread_m) / (2.0 * delta_n0)
    d_k = (eq_p.capital_k - eq_m.capital_k) / (2.0 * delta_n0)
    return pd.DataFrame(
        {
            "firm_id": params.firm_grid,
            "theta": params.theta,
            "D0": params.legacy_debt_D0,
            "d_mu_d_n0": d_mu,
            "d_spread_d_n0": d_spread,
            "d_k_d_n0": d_k,
        }
    )


def equilibrium_sweep(params: ModelParams, n0_values) -> pd.DataFrame:
    """Solve equilibria along an n0 path; long-format rows per (n0, firm)."""
    rows = []
    for n0 in np.asarray(n0_values, dtype=float):
        eq = solve_bank_equilibrium(params.replace_n0(float(n0)))
        spread = spreads_from(params, eq)
        rows.append(
            pd.DataFrame(
                {
                    "firm_id": params.firm_grid,
                    "theta": params.theta,
                    "D0": params.legacy_debt_D0,
                    "n0": n0,
                    "mu": eq.multiplier_mu,
                    "q": eq.loan_prices_q,
                    "spread": spread,
                    "k_star": eq.capital_k,
                }
            )
        )
    return pd.concat(rows, ignore_index=True)
