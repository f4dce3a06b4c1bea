"""Panel and loan-registry containers shared across the estimation modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

# Benchmark macro system: five EME variables plus a global block that is
# common to every country in a real panel.
EME_VARS = ["ln_ner", "ln_gdp", "ln_gfc", "ln_expo", "ln_impo"]
GLOBAL_VARS = ["ffr", "ln_indpro", "ln_pcepi", "ebp"]
MACRO_VARS = EME_VARS + GLOBAL_VARS

MICRO_KEY_COLS = ["bank_id", "currency", "month"]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class PanelDataset:
    """Country x period macro panel with an aligned exogenous shock series.

    ``data`` is wide: a MultiIndex (country, period) on the rows and one
    column per variable. ``shock`` is indexed by period and shared across
    countries. ``balanced`` is True when every country covers every period.
    """

    data: pd.DataFrame
    shock: pd.Series
    balanced: bool
    global_block_common: bool = True

    @property
    def countries(self) -> list:
        return list(self.data.index.get_level_values(0).unique())

    @property
    def periods(self) -> pd.PeriodIndex:
        idx = self.data.index.get_level_values(1).unique().sort_values()
        return pd.PeriodIndex(idx)

    @property
    def variables(self) -> list:
        return list(self.data.columns)

    def country_frame(self, country) -> pd.DataFrame:
        out = self.data.xs(country, level=0).sort_index()
        return out

    def validate(self) -> None:
        if self.data.index.duplicated().any():
            dup = self.data.index[self.data.index.duplicated()][:5]
            raise DataError(f"duplicate (country, period) rows: {list(dup)}")
        if not np.isfinite(self.data.to_numpy(dtype=float)).all():
            raise DataError("panel contains non-finite values")
        periods = self.periods
        if len(periods) > 1:
            gaps = np.diff(periods.asi8)
            if (gaps != 1).any():
                raise DataError("panel periods are not contiguous")
        missing = self.shock.index.symmetric_difference(periods)
        if len(missing):
            raise DataError(f"shock series not aligned to panel periods: {list(missing[:5])}")
        if self.balanced:
            n_cells = len(self.countries) * len(periods)
            if len(self.data) != n_cells:
                raise DataError("balanced=True but panel has missing cells")
        if self.global_block_common:
            common = [v for v in GLOBAL_VARS if v in self.data.columns]
            if common:
                wide = self.data[common].unstack(level=0)
                for v in common:
                    block = wide[v].dropna(how="all")
                    spread = block.max(axis=1) - block.min(axis=1)
                    if (spread.abs() > 1e-12).any():
                        raise DataError(f"global variable {v!r} differs across countries")

    @classmethod
    def from_long(cls, long: pd.DataFrame, shock: pd.Series, freq: str = "Q") -> "PanelDataset":
        """Build from tidy rows (country, period, variable, value)."""
        long = long.copy()
        long["period"] = pd.PeriodIndex(long["period"], freq=freq)
        wide = long.pivot_table(
            index=["country", "period"], columns="variable", values="value", aggfunc="first"
        )
        wide.columns.name = None
        countries = wide.index.get_level_values(0).unique()
        periods = wide.index.get_level_values(1).unique()
        balanced = len(wide) == len(countries) * len(periods) and not wide.isna().any().any()
        shock = shock.copy()
        shock.index = pd.PeriodIndex(shock.index, freq=freq)
        common = all(
            v not in wide.columns
            or (wide[v].unstack(level=0).max(axis=1) - wide[v].unstack(level=0).min(axis=1)).abs().max() <= 1e-12
            for v in GLOBAL_VARS
        )
        return cls(data=wide, shock=shock, balanced=balanced, global_block_common=common)

    def to_long(self) -> pd.DataFrame:
        long = self.data.stack().rename("value").reset_index()
        long.columns = ["country", "period", "variable", "value"]
        return long


@dataclass
class MicroFrame:
    """Loan registry at (firm x) bank x currency x month grain.

    ``data`` holds one row per key with a positive ``loan`` column, lagged
    characteristic columns (one-month lag relative to the outcome month, by
    construction), and a ``weight`` column carrying each bank's average size.
    ``macro_controls`` is indexed by month and merged in when a regression
    needs aggregate controls.
    """

    data: pd.DataFrame
    characteristics: list = field(default_factory=list)
    macro_controls: pd.DataFrame | None = None
    has_firms: bool = False

    def key_cols(self) -> list:
        return (["firm_id"] if self.has_firms else []) + MICRO_KEY_COLS

    def unit_cols(self) -> list:
        return (["firm_id"] if self.has_firms else []) + ["bank_id", "currency"]

    def validate(self) -> None:
        cols = self.key_cols()
        missing = [c for c in cols + ["loan"] if c not in self.data.columns]
        if missing:
            raise DataError(f"registry missing columns: {missing}")
        if self.data.duplicated(subset=cols).any():
            bad = self.data.loc[self.data.duplicated(subset=cols), cols].head(5)
            raise DataError(f"duplicate registry keys:\n{bad}")
        if (self.data["loan"] <= 0).any():
            n = int((self.data["loan"] <= 0).sum())
            raise DataError(f"{n} rows with nonpositive loan outstanding")
        for c in self.characteristics:
            if c not in self.data.columns:
                raise DataError(f"declared characteristic {c!r} not in registry columns")


def lag_within(df: pd.DataFrame, cols: list, by: list, periods: int = 1) -> pd.DataFrame:
    """Shift ``cols`` by ``periods`` months within ``by`` groups (month-sorted)."""
    df = df.sort_values(by + ["month"])
    out = df.copy()
    out[cols] = df.groupby(by, sort=False)[cols].shift(periods)
    return out
