"""Scenario ingestion, synthetic generation, sample splitting and PD error statistics.

CSV schemas (UTF-8, header row, ISO-8601 timestamps, half-hourly):

* RT prices: ``timestamp, price_dollars_per_kwh``
* PD prices: ``issue_timestamp, lead_index, price_dollars_per_kwh`` (lead 1 is
  the interval starting at the issue time)
* users: ``user_id, timestamp, consumption_kwh, gross_pv_kwh``

Price columns named ``price_cents_per_kwh`` are converted to $/kWh.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .core import (
    DEFAULT_TOU_BANDS,
    Band,
    CbsParams,
    PriceSeries,
    TariffSchedule,
    TimeGrid,
    UserParams,
    band_index,
)

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Input data is malformed, misaligned or incomplete."""


@dataclass
class ScenarioBundle:
    grid: TimeGrid
    prices: PriceSeries
    users: list[UserParams]
    tariff: TariffSchedule = field(default_factory=TariffSchedule)
    cbs: CbsParams = field(default_factory=CbsParams)
    label: str = "custom"
    timestamps: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.users:
            raise DataError("a scenario needs at least one user")
        g = self.grid
        if self.prices.n_total != g.n_total or self.prices.horizon_len != g.horizon_len:
            raise DataError("price matrix does not match the time grid")
        for u in self.users:
            if len(u.expected) != g.n_series:
                raise DataError(f"user {u.user_id!r} series length {len(u.expected)} != {g.n_series}")
        if self.timestamps is not None and len(self.timestamps) != g.n_series:
            raise DataError("timestamps must cover every interval of the series")


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    median: float
    sd: float
    skew: float
    kurt: float
    count: int = 0


# -- timestamps ------------------------------------------------------------


def _parse_ts(values) -> np.ndarray:
    try:
        return pd.to_datetime(pd.Series(values), format="ISO8601").to_numpy(dtype="datetime64[s]")
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable timestamp: {exc}") from exc


def _fmt_ts(ts: np.ndarray) -> list[str]:
    return [str(t) for t in np.asarray(ts, dtype="datetime64[s]")]


def _step_seconds(delta_h: float) -> int:
    return int(round(delta_h * 3600))


def _hour_of(ts) -> float:
    t = pd.Timestamp(ts)
    return t.hour + t.minute / 60.0


def _price_column(df: pd.DataFrame, units: str) -> np.ndarray:
    if "price_dollars_per_kwh" in df:
        vals, native = df["price_dollars_per_kwh"].to_numpy(float), "dollars"
    elif "price_cents_per_kwh" in df:
        vals, native = df["price_cents_per_kwh"].to_numpy(float), "cents"
    else:
        raise DataError("price file needs a price_dollars_per_kwh or price_cents_per_kwh column")
    unit = native if units == "auto" else units
    if unit not in ("dollars", "cents"):
        raise DataError(f"unknown price unit {units!r}")
    return vals / 100.0 if unit == "cents" else vals


# -- loaders ---------------------------------------------------------------


def load_prices(rt_file, pd_file, units: str = "auto", delta_h: float = 0.5) -> PriceSeries:
    """Dense RT vector and PD matrix; missing PD cells get persistence fill."""
    rt_df = pd.read_csv(rt_file, float_precision="round_trip")
    pd_df = pd.read_csv(pd_file, float_precision="round_trip")
    for col in ("timestamp",):
        if col not in rt_df:
            raise DataError(f"RT file lacks column {col!r}")
    for col in ("issue_timestamp", "lead_index"):
        if col not in pd_df:
            raise DataError(f"PD file lacks column {col!r}")
    ts = _parse_ts(rt_df["timestamp"])
    rt = _price_column(rt_df, units)
    step = ts[1:] - ts[:-1]
    if len(ts) > 1 and np.any(step <= np.timedelta64(0, "s")):
        raise DataError("RT timestamps must be strictly increasing")
    if len(ts) > 1 and np.any(step != np.timedelta64(_step_seconds(delta_h), "s")):
        raise DataError(f"RT timestamps must be spaced {delta_h} h apart")

    leads = pd_df["lead_index"].to_numpy(int)
    if leads.min() < 1:
        raise DataError("lead_index starts at 1")
    horizon = int(leads.max())
    n_total = len(ts) - horizon + 1
    if n_total < 1:
        raise DataError(f"RT series of {len(ts)} intervals is shorter than the horizon {horizon}")
    issue = _parse_ts(pd_df["issue_timestamp"])
    pos = {t: i for i, t in enumerate(ts)}
    try:
        rows = np.array([pos[t] for t in issue], dtype=int)
    except KeyError as exc:
        raise DataError(f"PD issue time {exc.args[0]} is not an RT interval") from exc
    keys = pd.DataFrame({"r": rows, "h": leads})
    if keys.duplicated().any():
        raise DataError("duplicate (issue_timestamp, lead_index) rows in PD file")
    prices = _price_column(pd_df, units)
    keep = rows < n_total
    matrix = np.full((n_total, horizon), np.nan)
    matrix[rows[keep], leads[keep] - 1] = prices[keep]
    filled = np.isnan(matrix)
    matrix = _persistence_fill(matrix)
    if filled.any():
        logger.info("persistence-filled %d PD cells", int(filled.sum()))
    return PriceSeries(rt, matrix, filled)


def _persistence_fill(matrix: np.ndarray) -> np.ndarray:
    """Fill NaN cell (j, h) from the latest earlier forecast of the same target.

    Falls back to the earliest later forecast when no earlier one exists.
    """
    out = matrix.copy()
    n, H = matrix.shape
    for j, h in zip(*np.nonzero(np.isnan(matrix))):
        target = j + h
        value = math.nan
        for k in range(1, H - h):          # earlier issues: (j-k, h+k)
            if j - k < 0:
                break
            if not math.isnan(matrix[j - k, h + k]):
                value = matrix[j - k, h + k]
                break
        if math.isnan(value):
            for k in range(1, h + 1):      # later issues: (j+k, h-k)
                if j + k >= n:
                    break
                if not math.isnan(matrix[j + k, h - k]):
                    value = matrix[j + k, h - k]
                    break
        if math.isnan(value):
            raise DataError(f"no PD forecast at all for target interval {target}")
        out[j, h] = value
    return out


@dataclass
class UserProfile:
    user_id: str
    timestamps: np.ndarray
    consumption: np.ndarray
    pv: np.ndarray


def read_user_profiles(file, pv_scale: float = 3.0, delta_h: float = 0.5) -> list[UserProfile]:
    df = pd.read_csv(file, dtype={"user_id": str}, float_precision="round_trip")
    for col in ("user_id", "timestamp", "consumption_kwh", "gross_pv_kwh"):
        if col not in df:
            raise DataError(f"user file lacks column {col!r}")
    df["ts"] = _parse_ts(df["timestamp"])
    step = np.timedelta64(_step_seconds(delta_h), "s")
    profiles = []
    for uid, g in df.groupby("user_id", sort=False):
        g = g.sort_values("ts")
        ts = g["ts"].to_numpy(dtype="datetime64[s]")
        d = ts[1:] - ts[:-1]
        if np.any(d != step):
            bad = [f"{_fmt_ts(ts[i:i + 1])[0]} -> {_fmt_ts(ts[i + 1:i + 2])[0]}" for i in np.flatnonzero(d != step)]
            raise DataError(f"user {uid!r} has gaps or duplicates: {', '.join(bad[:10])}")
        profiles.append(UserProfile(str(uid), ts, g["consumption_kwh"].to_numpy(float),
                                    g["gross_pv_kwh"].to_numpy(float) * pv_scale))
    if not profiles:
        raise DataError("user file is empty")
    return profiles


def sample_elasticity(bands: Sequence[Band], n_users: int, hours: np.ndarray, seed: int) -> np.ndarray:
    """Uniform per-(user, band) elasticity broadcast to each band's intervals."""
    for b in bands:
        if max(b.beta_range) >= 0:
            raise ValueError(f"elasticity range {b.beta_range} must be strictly negative")
    which = band_index(bands, hours)
    out = np.empty((n_users, len(hours)))
    for u in range(n_users):
        draws = np.array([
            np.random.default_rng([seed, u, k]).uniform(min(b.beta_range), max(b.beta_range))
            for k, b in enumerate(bands)
        ])
        out[u] = draws[which]
    return out


def sample_kappa(n_users: int, seed: int, kappa_range=(0.1, 0.5)) -> np.ndarray:
    lo, hi = kappa_range
    return np.array([np.random.default_rng([seed, u, 1_000_003]).uniform(lo, hi) for u in range(n_users)])


def make_users(profiles: Sequence[UserProfile], start_hour: float, delta_h: float = 0.5, seed: int = 0,
               bands: Sequence[Band] = DEFAULT_TOU_BANDS, kappa_range=(0.1, 0.5), tau: float = 0.2,
               lb_factor: float = 0.5, ub_factor: float = 1.5) -> list[UserParams]:
    n = len(profiles[0].consumption)
    hours = np.mod(start_hour + np.arange(n) * delta_h, 24.0)
    beta = sample_elasticity(bands, len(profiles), hours, seed)
    kappa = sample_kappa(len(profiles), seed, kappa_range)
    return [
        UserParams(expected=p.consumption, pv_gross=p.pv, elasticity=beta[i], kappa=float(kappa[i]),
                   tau=tau, lb_factor=lb_factor, ub_factor=ub_factor, user_id=p.user_id)
        for i, p in enumerate(profiles)
    ]


def load_users(file, pv_scale: float = 3.0, delta_h: float = 0.5, seed: int = 0, **kw) -> list[UserParams]:
    """Parse the user CSV, scale PV and attach sampled behavioural parameters."""
    profiles = read_user_profiles(file, pv_scale, delta_h)
    lengths = {len(p.consumption) for p in profiles}
    if len(lengths) != 1 or len({p.timestamps[0] for p in profiles}) != 1:
        raise DataError("all users must cover the same intervals")
    return make_users(profiles, _hour_of(profiles[0].timestamps[0]), delta_h, seed, **kw)


def load_scenario(rt_file, pd_file, users_file, horizon_len: int = 32, rebound_len: int = 12,
                  delta_h: float = 0.5, pv_scale: float = 3.0, units: str = "auto", seed: int = 0,
                  tariff: TariffSchedule | None = None, cbs: CbsParams | None = None,
                  label: str = "custom", **user_kw) -> ScenarioBundle:
    prices = load_prices(rt_file, pd_file, units, delta_h)
    if prices.horizon_len != horizon_len:
        raise DataError(f"PD file has {prices.horizon_len} leads, configuration expects {horizon_len}")
    ts = _parse_ts(pd.read_csv(rt_file)["timestamp"])
    profiles = read_user_profiles(users_file, pv_scale, delta_h)
    for p in profiles:
        if len(p.timestamps) != len(ts) or np.any(p.timestamps != ts):
            raise DataError(f"user {p.user_id!r} is not aligned with the price series")
    grid = TimeGrid(delta_h, prices.n_total, horizon_len, rebound_len, _hour_of(ts[0]))
    users = make_users(profiles, grid.start_hour, delta_h, seed, **user_kw)
    return ScenarioBundle(grid, prices, users, tariff or TariffSchedule(), cbs or CbsParams(), label, ts,
                          provenance={"seed": seed, "pd_fills": prices.fills})


# -- synthetic scenarios ---------------------------------------------------


@dataclass
class SyntheticSpec:
    n_users: int = 4
    days: int = 7
    seed: int = 0
    start: str = "2021-01-01T00:00:00"
    delta_h: float = 0.5
    horizon_len: int = 8
    rebound_len: int = 4
    prosumer_share: float = 0.5
    base_load: float = 0.2
    morning_peak: float = 0.25
    evening_peak: float = 0.55
    load_noise: float = 0.1
    pv_peak: float = 1.0
    price_low: float = 0.05
    price_mid: float = 0.12
    price_high: float = 0.45
    rt_spike_prob: float = 0.0
    rt_spike_mult: float = 4.0
    pd_bias: float | Sequence[float] = 0.0
    pd_noise_sd: float = 0.0
    pd_spike_prob: float = 0.0
    pd_spike_mult: float = 4.0
    kappa_range: tuple[float, float] = (0.1, 0.5)
    tau: float = 0.2
    lb_factor: float = 0.5
    ub_factor: float = 1.5

    def __post_init__(self):
        if self.n_users < 1 or self.days < 1:
            raise ValueError("need n_users >= 1 and days >= 1")


def _price_level(hours: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    high = (hours >= 17) & (hours < 21)
    mid = ((hours >= 7) & (hours < 10)) | ((hours >= 21) & (hours < 23))
    return np.where(high, spec.price_high, np.where(mid, spec.price_mid, spec.price_low))


def _daily_spikes(rng, n_days: int, per_day: int, prob: float) -> list[int]:
    """Interval indices (17:00-21:00 window) hit by a spike, at most one per day."""
    hits = []
    start = int(17 * per_day / 24)
    width = int(4 * per_day / 24)
    for d in range(n_days):
        if rng.random() < prob:
            hits.append(d * per_day + start + int(rng.integers(width)))
    return hits


def generate_synthetic(spec: SyntheticSpec | None = None, label: str = "custom",
                       tariff: TariffSchedule | None = None, cbs: CbsParams | None = None,
                       bands: Sequence[Band] = DEFAULT_TOU_BANDS, **overrides) -> ScenarioBundle:
    """Deterministic synthetic neighbourhood with pd = rt + bias + noise (+ phantom spikes)."""
    spec = replace(spec or SyntheticSpec(), **overrides)
    rng = np.random.default_rng(spec.seed)
    per_day = int(round(24 / spec.delta_h))
    n_total = spec.days * per_day
    H = spec.horizon_len
    n = n_total + H - 1
    start = np.datetime64(spec.start, "s")
    ts = start + np.arange(n) * np.timedelta64(_step_seconds(spec.delta_h), "s")
    start_hour = _hour_of(start)
    hours = np.mod(start_hour + np.arange(n) * spec.delta_h, 24.0)
    n_days_all = int(math.ceil(n / per_day)) + 1

    rt = _price_level(hours, spec)
    for k in _daily_spikes(rng, n_days_all, per_day, spec.rt_spike_prob):
        if k < n:
            rt[k] *= spec.rt_spike_mult
    bias = np.broadcast_to(np.asarray(spec.pd_bias, dtype=float), (H,))
    idx = np.arange(n_total)[:, None] + np.arange(H)[None, :]
    pd_m = rt[idx] + bias[None, :]
    if spec.pd_noise_sd > 0:
        pd_m = pd_m + rng.normal(0.0, spec.pd_noise_sd, size=pd_m.shape)
    phantom = np.zeros(n)
    for k in _daily_spikes(rng, n_days_all, per_day, spec.pd_spike_prob):
        if k < n:
            phantom[k] = (spec.pd_spike_mult - 1.0) * rt[k]
    pd_m = pd_m + phantom[idx]

    n_pros = int(round(spec.prosumer_share * spec.n_users))
    profiles = []
    for u in range(spec.n_users):
        urng = np.random.default_rng([spec.seed, u, 77])
        shift = urng.normal(0.0, 0.5)
        scale = urng.uniform(0.8, 1.2)
        shape = (spec.base_load
                 + spec.morning_peak * np.exp(-0.5 * ((hours - 7.5 - shift) / 1.2) ** 2)
                 + spec.evening_peak * np.exp(-0.5 * ((hours - 19.0 - shift) / 1.8) ** 2))
        noise = 1.0 + spec.load_noise * urng.uniform(-1.0, 1.0, size=n)
        load = np.round(scale * shape * noise, 6)
        if u < n_pros:
            day_noise = np.repeat(urng.uniform(0.6, 1.0, size=n_days_all), per_day)[:n]
            bell = np.clip(np.cos((hours - 12.5) / 6.5 * np.pi / 2), 0.0, None) ** 2
            pv = np.round(spec.pv_peak * bell * day_noise * scale, 6)
        else:
            pv = np.zeros(n)
        profiles.append(UserProfile(f"u{u + 1:03d}", ts, load, pv))
    users = make_users(profiles, start_hour, spec.delta_h, spec.seed, bands, spec.kappa_range,
                       spec.tau, spec.lb_factor, spec.ub_factor)
    grid = TimeGrid(spec.delta_h, n_total, H, spec.rebound_len, start_hour)
    prov = {"seed": spec.seed, "pd_fills": 0, "synthetic": _jsonable(asdict(spec))}
    return ScenarioBundle(grid, PriceSeries(rt, pd_m), users, tariff or TariffSchedule(bands=tuple(bands)),
                          cbs or CbsParams(), label, ts, prov)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- in/out-of-sample split ------------------------------------------------


def _reindex(bundle: ScenarioBundle, committed: np.ndarray, label: str) -> ScenarioBundle:
    """Concatenate the real intervals ``committed`` into a new contiguous-clock bundle."""
    g = bundle.grid
    H = g.horizon_len
    tail = committed[-1] + 1 + np.arange(H - 1)
    real = np.concatenate([committed, tail])
    if real[-1] >= g.n_series:
        raise DataError("data do not extend far enough past the selected weeks for the look-ahead")
    n = len(committed)
    hh = np.arange(H)
    issue = real[np.arange(n)[:, None] + hh[None, :]] - hh[None, :]
    if issue.min() < 0 or issue.max() >= g.n_total:
        raise DataError("PD forecasts needed for the selected weeks are not covered by the data")
    prices = bundle.prices
    pd_m = prices.pd[issue, hh[None, :]]
    filled = prices.filled[issue, hh[None, :]] if prices.filled is not None else None
    users = [replace(u, expected=u.expected[real], pv_gross=u.pv_gross[real], elasticity=u.elasticity[real])
             for u in bundle.users]
    ts = bundle.timestamps[real]
    grid = replace(g, n_total=n, start_hour=_hour_of(ts[0]))
    prov = dict(bundle.provenance, pd_fills=int(filled.sum()) if filled is not None else 0)
    return ScenarioBundle(grid, PriceSeries(prices.rt[real], pd_m, filled), users, bundle.tariff,
                          bundle.cbs, label, ts, prov)


def split_sample(bundle: ScenarioBundle, in_days=(8, 14), out_days=(15, 21)):
    """In-sample = days 8-14 of every month, out-of-sample = days 15-21."""
    if bundle.timestamps is None:
        raise DataError("splitting needs timestamps")
    ts = pd.DatetimeIndex(bundle.timestamps[: bundle.grid.n_total])
    months = sorted(set(zip(ts.year, ts.month)))
    per_day = bundle.grid.intervals_per_day
    if len(months) < 12:
        logger.warning("only %d month(s) of data: bundles will hold %d days", len(months), 7 * len(months))

    def pick(lo, hi):
        parts = []
        for y, m in months:
            sel = np.flatnonzero((ts.year == y) & (ts.month == m) & (ts.day >= lo) & (ts.day <= hi))
            if len(sel) != (hi - lo + 1) * per_day:
                raise DataError(f"{y}-{m:02d} lacks full coverage of days {lo}-{hi}")
            parts.append(sel)
        return np.concatenate(parts)

    return (_reindex(bundle, pick(*in_days), "in_sample"),
            _reindex(bundle, pick(*out_days), "out_sample"))


# -- statistics ------------------------------------------------------------


def pd_error_stats(prices: PriceSeries, selector: str = "all", excess_kurtosis: bool = True,
                   bias_corrected: bool = False) -> ErrorStats:
    """Moments of PD - RT over the selected cells (persistence-filled cells excluded)."""
    err = prices.pd - prices.rt_target()
    mask = np.ones_like(err, dtype=bool) if prices.filled is None else ~prices.filled
    if selector == "h1":
        mask[:, 1:] = False
    elif selector == "hH":
        mask[:, :-1] = False
    elif selector != "all":
        raise ValueError(f"unknown selector {selector!r}")
    e = err[mask]
    if e.size == 0:
        raise ValueError("empty selection")
    sd = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    # a constant error series (up to float rounding) has no shape
    if np.ptp(e) <= 1e-12 * max(1.0, float(np.max(np.abs(e)))):
        skew, kurt = 0.0, 0.0
    else:
        skew = float(stats.skew(e, bias=not bias_corrected))
        kurt = float(stats.kurtosis(e, fisher=excess_kurtosis, bias=not bias_corrected))
    return ErrorStats(float(np.mean(e)), float(np.median(e)), sd, skew, kurt, int(e.size))


# -- bundle persistence ----------------------------------------------------


def _bundle_timestamps(bundle: ScenarioBundle) -> np.ndarray:
    if bundle.timestamps is not None:
        return np.asarray(bundle.timestamps, dtype="datetime64[s]")
    start = np.datetime64("2021-01-01T00:00:00", "s") + np.timedelta64(int(bundle.grid.start_hour * 3600), "s")
    return start + np.arange(bundle.grid.n_series) * np.timedelta64(_step_seconds(bundle.grid.delta_h), "s")


def write_prices(bundle: ScenarioBundle, rt_path, pd_path) -> None:
    ts = _bundle_timestamps(bundle)
    p = bundle.prices
    pd.DataFrame({"timestamp": _fmt_ts(ts), "price_dollars_per_kwh": p.rt}).to_csv(rt_path, index=False)
    n, H = p.pd.shape
    keep = np.ones((n, H), dtype=bool) if p.filled is None else ~p.filled
    jj, hh = np.nonzero(keep)
    issue = np.asarray(_fmt_ts(ts[:n]), dtype=object)
    pd.DataFrame({"issue_timestamp": issue[jj], "lead_index": hh + 1,
                  "price_dollars_per_kwh": p.pd[jj, hh]}).to_csv(pd_path, index=False)


def write_users(bundle: ScenarioBundle, path) -> None:
    ts = _fmt_ts(_bundle_timestamps(bundle))
    frames = [pd.DataFrame({"user_id": u.user_id, "timestamp": ts, "consumption_kwh": u.expected,
                            "gross_pv_kwh": u.pv_gross}) for u in bundle.users]
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


def save_bundle(bundle: ScenarioBundle, directory) -> Path:
    """Write the bundle as CSVs plus ``scenario.json`` (parameters) and ``elasticity.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_prices(bundle, d / "rt.csv", d / "pd.csv")
    write_users(bundle, d / "users.csv")
    ts = _fmt_ts(_bundle_timestamps(bundle))
    el = pd.DataFrame({u.user_id: u.elasticity for u in bundle.users})
    el.insert(0, "timestamp", ts)
    el.to_csv(d / "elasticity.csv", index=False)
    g = bundle.grid
    meta = {
        "label": bundle.label,
        "grid": {"delta_h": g.delta_h, "horizon_len": g.horizon_len, "rebound_len": g.rebound_len},
        "tariff": {"bands": [asdict(b) for b in bundle.tariff.bands],
                   "cbs_grid_charge": bundle.tariff.cbs_grid_charge,
                   "throughput_charge": bundle.tariff.throughput_charge,
                   "peak_charge_per_day": bundle.tariff.peak_charge_per_day},
        "cbs": asdict(bundle.cbs),
        "users": [{"user_id": u.user_id, "kappa": u.kappa, "tau": u.tau, "lb_factor": u.lb_factor,
                   "ub_factor": u.ub_factor} for u in bundle.users],
        "provenance": _jsonable(bundle.provenance),
    }
    (d / "scenario.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def load_bundle(directory) -> ScenarioBundle:
    d = Path(directory)
    meta = json.loads((d / "scenario.json").read_text())
    gm = meta["grid"]
    prices = load_prices(d / "rt.csv", d / "pd.csv", "dollars", gm["delta_h"])
    ts = _parse_ts(pd.read_csv(d / "rt.csv")["timestamp"])
    profiles = {p.user_id: p for p in read_user_profiles(d / "users.csv", 1.0, gm["delta_h"])}
    el = pd.read_csv(d / "elasticity.csv", float_precision="round_trip")
    users = []
    for um in meta["users"]:
        p = profiles[um["user_id"]]
        users.append(UserParams(expected=p.consumption, pv_gross=p.pv, elasticity=el[um["user_id"]].to_numpy(float),
                                kappa=um["kappa"], tau=um["tau"], lb_factor=um["lb_factor"],
                                ub_factor=um["ub_factor"], user_id=um["user_id"]))
    tm = meta["tariff"]
    bands = tuple(Band(b["start"], b["end"], b["export_charge"], b["import_charge"], tuple(b["beta_range"]))
                  for b in tm["bands"])
    tariff = TariffSchedule(bands, tm["cbs_grid_charge"], tm["throughput_charge"], tm["peak_charge_per_day"])
    grid = TimeGrid(gm["delta_h"], prices.n_total, gm["horizon_len"], gm["rebound_len"], _hour_of(ts[0]))
    prov = dict(meta.get("provenance", {}), pd_fills=prices.fills)
    return ScenarioBundle(grid, prices, users, tariff, CbsParams(**meta["cbs"]), meta["label"], ts, prov)
