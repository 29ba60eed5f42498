"""Domain types, unit conventions and closed-form evaluators.

All prices are held in $/kWh, energies in kWh per interval, powers in kW.
Interval indices inside arrays are zero-based; the look-ahead position ``h``
handed to :func:`time_weight` is one-based, as in the behavioural model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_PRICE_FLOOR = 0.001


@dataclass(frozen=True)
class TimeGrid:
    delta_h: float = 0.5
    n_total: int = 48
    horizon_len: int = 32
    rebound_len: int = 12
    start_hour: float = 0.0

    def __post_init__(self):
        if not self.delta_h > 0:
            raise ValueError(f"delta_h must be positive, got {self.delta_h}")
        if self.n_total < 1:
            raise ValueError(f"n_total must be >= 1, got {self.n_total}")
        if not 0 < self.rebound_len <= self.horizon_len:
            raise ValueError(
                f"need 0 < rebound_len <= horizon_len, got {self.rebound_len}, {self.horizon_len}"
            )

    @property
    def n_series(self) -> int:
        """Length of every per-interval series: committed intervals plus look-ahead tail."""
        return self.n_total + self.horizon_len - 1

    @property
    def days(self) -> float:
        return self.n_total * self.delta_h / 24.0

    @property
    def intervals_per_day(self) -> int:
        return int(round(24.0 / self.delta_h))

    def hours_of_day(self) -> np.ndarray:
        """Start hour-of-day of every interval in the series."""
        k = np.arange(self.n_series)
        return np.mod(self.start_hour + k * self.delta_h, 24.0)

    def horizon_slice(self, j: int) -> slice:
        """Absolute intervals covered by zero-based horizon ``j``."""
        return slice(j, j + self.horizon_len)


@dataclass(frozen=True)
class PriceSeries:
    rt: np.ndarray
    pd: np.ndarray
    filled: np.ndarray | None = None

    def __post_init__(self):
        rt = np.asarray(self.rt, dtype=float)
        pd = np.asarray(self.pd, dtype=float)
        if pd.ndim != 2:
            raise ValueError("pd must be a 2-D (n_total, horizon_len) matrix")
        n_total, horizon = pd.shape
        if rt.shape != (n_total + horizon - 1,):
            raise ValueError(
                f"rt length {rt.shape} does not match pd shape {pd.shape} (need n_total+H-1)"
            )
        if not (np.all(np.isfinite(rt)) and np.all(np.isfinite(pd))):
            raise ValueError("prices must be finite")
        filled = None
        if self.filled is not None:
            filled = np.asarray(self.filled, dtype=bool)
            if filled.shape != pd.shape:
                raise ValueError("filled mask must match pd shape")
        object.__setattr__(self, "rt", rt)
        object.__setattr__(self, "pd", pd)
        object.__setattr__(self, "filled", filled)

    @property
    def n_total(self) -> int:
        return self.pd.shape[0]

    @property
    def horizon_len(self) -> int:
        return self.pd.shape[1]

    @property
    def fills(self) -> int:
        return 0 if self.filled is None else int(self.filled.sum())

    def rt_target(self) -> np.ndarray:
        """RT price of each pd cell's target interval, same shape as ``pd``."""
        idx = np.arange(self.n_total)[:, None] + np.arange(self.horizon_len)[None, :]
        return self.rt[idx]


@dataclass(frozen=True)
class Band:
    """One time-of-day band of the network tariff, in $/kWh."""

    start: float
    end: float
    export_charge: float
    import_charge: float
    beta_range: tuple[float, float] = (-0.3, -0.3)

    def contains(self, hours: np.ndarray) -> np.ndarray:
        if self.start < self.end:
            return (hours >= self.start) & (hours < self.end)
        return (hours >= self.start) | (hours < self.end)

    @property
    def length(self) -> float:
        return (self.end - self.start) % 24.0 or 24.0


# Default time-of-use network charges (converted from c/kWh) with per-band elasticity ranges.
DEFAULT_TOU_BANDS: tuple[Band, ...] = (
    Band(1.0, 5.0, 0.0, 0.033095, (-0.2, -0.3)),
    Band(5.0, 10.0, 0.0, 0.033095, (-0.3, -0.5)),
    Band(10.0, 14.0, 0.018500, 0.033095, (-0.3, -0.5)),
    Band(14.0, 20.0, -0.277957, 0.277957, (-0.5, -0.7)),
    Band(20.0, 1.0, 0.0, 0.033095, (-0.3, -0.5)),
)


def check_bands(bands: Sequence[Band]) -> None:
    """Raise unless the bands tile the 24 h day exactly once."""
    if not bands:
        raise ValueError("at least one band is required")
    if not math.isclose(sum(b.length for b in bands), 24.0, abs_tol=1e-9):
        raise ValueError("tariff bands must cover 24 h without gaps or overlaps")
    probe = (np.arange(24 * 60) + 0.5) / 60.0
    hits = sum(b.contains(probe).astype(int) for b in bands)
    if np.any(hits != 1):
        raise ValueError("tariff bands must cover 24 h without gaps or overlaps")


def band_index(bands: Sequence[Band], hours: np.ndarray) -> np.ndarray:
    hours = np.asarray(hours, dtype=float)
    out = np.full(hours.shape, -1, dtype=int)
    for i, b in enumerate(bands):
        out[b.contains(hours)] = i
    if np.any(out < 0):
        raise ValueError("hour outside every band")
    return out


@dataclass(frozen=True)
class TariffSchedule:
    bands: tuple[Band, ...] = DEFAULT_TOU_BANDS
    cbs_grid_charge: float = 0.0161
    throughput_charge: float = 0.032
    peak_charge_per_day: float = 0.33

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(self.bands))
        check_bands(self.bands)

    def import_charge(self, hours: np.ndarray) -> np.ndarray:
        vals = np.array([b.import_charge for b in self.bands])
        return vals[band_index(self.bands, hours)]

    def export_charge(self, hours: np.ndarray) -> np.ndarray:
        vals = np.array([b.export_charge for b in self.bands])
        return vals[band_index(self.bands, hours)]

    def peak_charge_for(self, days: float) -> float:
        """Peak charge in $/kW accruing over ``days`` of operation."""
        return self.peak_charge_per_day * days


def flat_tariff(import_charge: float = 0.0, export_charge: float = 0.0, **kw) -> TariffSchedule:
    return TariffSchedule(bands=(Band(0.0, 24.0, export_charge, import_charge),), **kw)


@dataclass(frozen=True)
class UserParams:
    expected: np.ndarray
    pv_gross: np.ndarray
    elasticity: np.ndarray
    kappa: float = 0.3
    tau: float = 0.2
    lb_factor: float = 0.5
    ub_factor: float = 1.5
    user_id: str = ""

    def __post_init__(self):
        arrays = {}
        for name in ("expected", "pv_gross", "elasticity"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise ValueError(f"{name} must be 1-D")
            arrays[name] = a
            object.__setattr__(self, name, a)
        n = len(arrays["expected"])
        if any(len(a) != n for a in arrays.values()):
            raise ValueError("expected, pv_gross and elasticity must have equal length")
        if np.any(arrays["expected"] < 0) or np.any(arrays["pv_gross"] < 0):
            raise ValueError("expected consumption and PV must be non-negative")
        if np.any(arrays["elasticity"] >= 0):
            raise ValueError("elasticity must be negative everywhere")
        if not 0 <= self.lb_factor <= 1 <= self.ub_factor:
            raise ValueError("need 0 <= lb_factor <= 1 <= ub_factor")
        if self.kappa < 0 or not 0 <= self.tau <= 1:
            raise ValueError("need kappa >= 0 and 0 <= tau <= 1")

    @property
    def is_prosumer(self) -> bool:
        return bool(np.any(self.pv_gross > 0))


@dataclass(frozen=True)
class CbsParams:
    round_trip_eff: float = 0.9
    soc_min_frac: float = 0.0
    soc_max_frac: float = 1.0
    duration_h: float = 2.0
    capital_cost: float = 800.0
    capital_recovery_per_year: float = 0.1175

    def __post_init__(self):
        if not 0 < self.round_trip_eff <= 1:
            raise ValueError("round_trip_eff must lie in (0, 1]")
        if not 0 <= self.soc_min_frac < self.soc_max_frac <= 1:
            raise ValueError("need 0 <= soc_min_frac < soc_max_frac <= 1")
        if not self.duration_h > 0:
            raise ValueError("duration_h must be positive")

    def power_limit(self, e_cap: float) -> float:
        return e_cap / self.duration_h

    def capital_for(self, days: float) -> float:
        """Capital charge in $/kWh accruing over ``days``."""
        return self.capital_cost * self.capital_recovery_per_year * days / 365.0


@dataclass(frozen=True)
class CostBreakdown:
    energy: float
    grid_charge: float
    throughput: float
    peak_revenue: float
    capital: float
    total: float = field(default=math.nan)
    local_peak_kw: float = 0.0
    user_peak_kw: float = 0.0

    def __post_init__(self):
        expected = self.energy + self.grid_charge + self.throughput - self.peak_revenue + self.capital
        if math.isnan(self.total):
            object.__setattr__(self, "total", expected)
        elif not math.isclose(self.total, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"total {self.total} inconsistent with components {expected}")

    @property
    def operational(self) -> float:
        return self.energy + self.grid_charge + self.throughput

    def scaled(self, factor: float) -> "CostBreakdown":
        return CostBreakdown(
            energy=self.energy * factor,
            grid_charge=self.grid_charge * factor,
            throughput=self.throughput * factor,
            peak_revenue=self.peak_revenue * factor,
            capital=self.capital * factor,
            local_peak_kw=self.local_peak_kw,
            user_peak_kw=self.user_peak_kw,
        )


def time_weight(h: int, kappa: float, tau: float) -> float:
    """Time-inconsistency weight of look-ahead position ``h`` (one-based)."""
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    return (1.0 + tau * h * kappa) / (1.0 + h * kappa)


def discomfort(x: float, x_hat: float, beta: float, lambda_max: float) -> float:
    """Loss-averse discomfort of consuming ``x`` instead of ``x_hat``."""
    if not x_hat > 0:
        raise ValueError(f"x_hat must be positive, got {x_hat}")
    if not beta < 0:
        raise ValueError(f"beta must be negative, got {beta}")
    dev = x - x_hat
    return -lambda_max * (1.0 + dev / (2.0 * beta * x_hat)) * dev


def discomfort_coefficients(x_hat: float, beta: float, lambda_max: float) -> tuple[float, float, float]:
    """(quadratic, linear, constant) coefficients of discomfort as a polynomial in x."""
    q = -lambda_max / (2.0 * beta * x_hat)
    return q, -lambda_max - 2.0 * q * x_hat, lambda_max * x_hat + q * x_hat * x_hat


def horizon_price_reference(pd_row: Sequence[float], floor: float = DEFAULT_PRICE_FLOOR) -> float:
    if len(pd_row) == 0:
        raise ValueError("pd_row must be non-empty")
    return max(float(np.max(pd_row)), floor)
