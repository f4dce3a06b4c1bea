"""Event-level net-worth surprises and their supply/demand decomposition.

The raw surprise series is a market-cap-weighted log price change per
announcement event, paired with the contemporaneous change in the excess
bond premium. A Givens-rotation scan over the 2x2 system splits each event
into a credit-supply component (moves the surprise and the EBP in opposite
directions) and a credit-demand component (moves them together), after which
events are summed into calendar periods and scaled to unit variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .datasets import DataError
from .errors import DomainError, IdentificationError


@dataclass
class EventShockSeries:
    """Per-event surprises: timestamp, weighted log price change, EBP change."""

    timestamps: pd.DatetimeIndex
    surprise_vf: np.ndarray
    debp: np.ndarray
    weights_theta: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = pd.DatetimeIndex(self.timestamps)
        self.surprise_vf = np.asarray(self.surprise_vf, dtype=float)
        self.debp = np.asarray(self.debp, dtype=float)
        if not (len(self.timestamps) == len(self.surprise_vf) == len(self.debp)):
            raise DataError("event fields have mismatched lengths")
        if len(self.timestamps) and not self.timestamps.is_monotonic_increasing:
            raise DataError("event timestamps must be increasing")
        if len(self.timestamps) and self.timestamps.has_duplicates:
            raise DataError("event timestamps must be strictly increasing")
        if not np.isfinite(self.surprise_vf).all() or not np.isfinite(self.debp).all():
            raise DataError("event series contains non-finite values")

    def __len__(self) -> int:
        return len(self.surprise_vf)


@dataclass
class DecomposedShocks:
    """Supply/demand split of each event's surprise; components sum to the raw series."""

    timestamps: pd.DatetimeIndex
    v_cs: np.ndarray
    v_cd: np.ndarray
    debp: np.ndarray
    rotation_angle: float | None = None
    admissible_set: list = field(default_factory=list)

    @property
    def v_f(self) -> np.ndarray:
        return self.v_cs + self.v_cd


@dataclass
class PeriodShockSeries:
    """Calendar-aggregated, standardized shock; sd_used is None when degenerate."""

    periods: pd.PeriodIndex
    values: np.ndarray
    sd_used: float | None

    def to_series(self) -> pd.Series:
        return pd.Series(self.values, index=self.periods)


def build_event_surprise(timestamps, price_changes, weights, debp) -> EventShockSeries:
    """Weight per-event log price changes by market-cap shares."""
    price_changes = np.asarray(price_changes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    debp = np.asarray(debp, dtype=float)
    if not (len(price_changes) == len(weights) == len(debp)):
        raise DataError("price changes, weights, and EBP changes must have equal length")
    if ((weights < 0) | (weights > 1)).any():
        raise DomainError("market-cap weights must lie in [0, 1]")
    return EventShockSeries(
        timestamps=timestamps,
        surprise_vf=weights * price_changes,
        debp=debp,
        weights_theta=weights,
    )


def _lower_sqrt(c: np.ndarray) -> np.ndarray:
    """Lower-triangular square root of a 2x2 covariance, tolerant of rank one."""
    l11 = np.sqrt(c[0, 0])
    l21 = c[0, 1] / l11
    l22 = np.sqrt(max(c[1, 1] - l21**2, 0.0))
    return np.array([[l11, 0.0], [l21, l22]])


def decompose_rotation(
    series: EventShockSeries, angle_step: float = 1e-3, min_events: int = 30
) -> DecomposedShocks:
    """Sign-restricted Givens decomposition of the surprise series.

    The pair is scaled to unit variance, the sample covariance is factored by
    its lower-triangular square root, and rotation angles on [0, pi) are kept
    when structural shock 1 raises the surprise while lowering the EBP and
    shock 2 raises both. The median admissible angle is selected; per-event
    contributions of the two shocks to the surprise are returned.
    """
    n = len(series)
    if n < min_events:
        raise DomainError(f"rotation decomposition needs >= {min_events} events, got {n}")
    s1 = float(np.std(series.surprise_vf, ddof=1))
    s2 = float(np.std(series.debp, ddof=1))
    if s1 <= 0.0 or s2 <= 0.0:
        raise DomainError("both series need nonzero sample variance")
    z = np.column_stack([series.surprise_vf / s1, series.debp / s2])
    cov = np.cov(z, rowvar=False, ddof=1)
    low = _lower_sqrt(cov)

    gammas = np.arange(0.0, np.pi, angle_step)
    # include the analytic sign-crossing angles so degenerate (rank-one)
    # samples whose admissible set is a single boundary point are still found
    crossings = np.array(
        [
            0.0,
            np.pi / 2.0,
            np.arctan2(low[1, 0], low[1, 1]) % np.pi,
            np.arctan2(-low[1, 1], low[1, 0]) % np.pi,
        ]
    )
    gammas = np.unique(np.concatenate([gammas, crossings[crossings < np.pi]]))
    cos_g, sin_g = np.cos(gammas), np.sin(gammas)
    # impact columns of B = L @ [[cos, sin], [-sin, cos]]
    b00 = low[0, 0] * cos_g
    b01 = low[0, 0] * sin_g
    b10 = low[1, 0] * cos_g - low[1, 1] * sin_g
    b11 = low[1, 0] * sin_g + low[1, 1] * cos_g
    # tolerance absorbs float noise at the analytic crossings (cos(pi/2) != 0)
    tol = 1e-12
    admissible = (b00 >= -tol) & (b10 <= tol) & (b01 >= -tol) & (b11 >= -tol)
    if not admissible.any():
        patterns = {}
        for signs in zip(np.sign(b00), np.sign(b10), np.sign(b01), np.sign(b11)):
            key = tuple(int(s) for s in signs)
            patterns[key] = patterns.get(key, 0) + 1
        raise IdentificationError(
            f"no rotation angle satisfies the sign restrictions; scanned patterns "
            f"(sign b00, b10, b01, b11): counts = {patterns}"
        )
    adm_gammas = gammas[admissible]
    angle = float(np.median(adm_gammas))

    # contiguous admissible runs, reported as closed intervals
    idx = np.flatnonzero(admissible)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.r_[idx[0], idx[breaks + 1]]
    ends = np.r_[idx[breaks], idx[-1]]
    intervals = [(float(gammas[a]), float(gammas[b])) for a, b in zip(starts, ends)]

    rot = np.array([[np.cos(angle), np.sin(angle)], [-np.sin(angle), np.cos(angle)]])
    impact = low @ rot
    eta, *_ = np.linalg.lstsq(impact, z.T, rcond=None)
    v_cs = s1 * impact[0, 0] * eta[0]
    v_cd = series.surprise_vf - v_cs  # additivity exact by construction
    return DecomposedShocks(
        timestamps=series.timestamps,
        v_cs=v_cs,
        v_cd=v_cd,
        debp=series.debp,
        rotation_angle=angle,
        admissible_set=intervals,
    )


def decompose_split(series: EventShockSeries) -> DecomposedShocks:
    """Per-event sign split: opposite-signed co-movement is classified as supply.

    Ties (either series zero) assign the full surprise to the demand
    component. Used as a transparent cross-check on the rotation variant.
    """
    if len(series) < 1:
        raise DomainError("need at least one event")
    supply = series.surprise_vf * series.debp < 0.0
    v_cs = np.where(supply, series.surprise_vf, 0.0)
    return DecomposedShocks(
        timestamps=series.timestamps,
        v_cs=v_cs,
        v_cd=series.surprise_vf - v_cs,
        debp=series.debp,
        rotation_angle=None,
        admissible_set=[],
    )


def aggregate_standardize(
    decomposed: DecomposedShocks, calendar: pd.PeriodIndex, component: str = "v_cs"
) -> PeriodShockSeries:
    """Sum events into calendar periods, zero-fill empty ones, scale to unit SD."""
    values = {"v_cs": decomposed.v_cs, "v_cd": decomposed.v_cd, "v_f": decomposed.v_f}[component]
    calendar = pd.PeriodIndex(calendar)
    event_periods = decomposed.timestamps.to_period(calendar.freq)
    outside = ~event_periods.isin(calendar)
    if outside.any():
        bad = decomposed.timestamps[outside][:5]
        raise DataError(f"events outside the aggregation calendar: {list(bad)}")
    summed = pd.Series(values).groupby(event_periods).sum()
    full = summed.reindex(calendar, fill_value=0.0)
    sd = float(full.std(ddof=1))
    if sd <= 0.0:
        return PeriodShockSeries(periods=calendar, values=full.to_numpy(), sd_used=None)
    return PeriodShockSeries(periods=calendar, values=full.to_numpy() / sd, sd_used=sd)


def pearson_correlation(x, y) -> float:
    """Sample Pearson correlation; errors on degenerate variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise DomainError("series must have equal length")
    if len(x) < 3:
        raise DomainError("need at least 3 observations")
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise DomainError("correlation undefined for zero-variance series")
    return float(np.corrcoef(x, y)[0, 1])
