"""Community battery dispatch under receding-horizon operation.

The operator plans every horizon against pre-dispatch prices and the users'
planned net demand, commits the first interval, and carries SoC and the
running peak forward.  Ground-truth cost settles the committed actions at
real-time prices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .core import CbsParams, CostBreakdown, PriceSeries, TariffSchedule, TimeGrid
from .enduser import HorizonError, Neighbourhood
from .optprog import EQ, GE, LE, Program, add_complementarity, solve

logger = logging.getLogger(__name__)

HORIZON_FIELDS = ("soc", "p_ch", "p_dc", "imp", "exp", "grid_chg")


@dataclass(frozen=True)
class CbsState:
    soc_init: float = 0.0
    peak_hist: float = 0.0


@dataclass
class CbsHorizonSolution:
    soc: np.ndarray
    p_ch: np.ndarray
    p_dc: np.ndarray
    imp: np.ndarray
    exp: np.ndarray
    grid_chg: np.ndarray
    local_peak: float
    objective: float = math.nan


@dataclass
class CbsTrajectory:
    """Committed first-interval actions of every horizon."""

    soc: np.ndarray
    p_ch: np.ndarray
    p_dc: np.ndarray
    imp: np.ndarray
    exp: np.ndarray
    grid_chg: np.ndarray
    local_peak_j: np.ndarray
    user_peak_j: np.ndarray
    soc_init: np.ndarray
    peak_hist: np.ndarray
    user_net: np.ndarray
    e_cap: float
    delta_h: float

    @property
    def local_peak(self) -> float:
        return float(np.max(self.imp)) / self.delta_h

    @property
    def user_peak(self) -> float:
        return float(np.max(self.user_net)) / self.delta_h

    @property
    def n_total(self) -> int:
        return len(self.soc)


def peak_charge_per_horizon(tariff: TariffSchedule, grid: TimeGrid) -> float:
    """Peak charge scaled to the length of one receding horizon ($/kW)."""
    return tariff.peak_charge_for(grid.horizon_len * grid.delta_h / 24.0)


def add_dispatch_block(p: Program, params: CbsParams, grid: TimeGrid, net, users_export, prices,
                       tariff: TariffSchedule, *, e_cap: float | None = None, e_cap_var: int | None = None,
                       e_cap_max: float | None = None, soc_init: float | int = 0.0,
                       soc_init_is_var: bool = False, ending_soc: bool = True, weight: float = 1.0,
                       tag: str = "") -> dict[str, np.ndarray]:
    """Add one horizon of battery dispatch variables and rows to ``p``.

    Capacity is either the constant ``e_cap`` or the variable ``e_cap_var``
    (bounded above by ``e_cap_max``).  ``soc_init`` is a constant, or a
    variable id when ``soc_init_is_var``.  Operational costs are multiplied
    by ``weight``.  Returns the variable ids per field.
    """
    n = len(net)
    dh = grid.delta_h
    eff = params.round_trip_eff
    fixed = e_cap_var is None
    cap_hi = e_cap if fixed else e_cap_max
    if cap_hi is None or cap_hi < 0 or not math.isfinite(cap_hi):
        raise ValueError("battery capacity (or its upper bound) must be finite and >= 0")
    p_max = params.power_limit(cap_hi)
    net = np.asarray(net, dtype=float)
    prices = np.asarray(prices, dtype=float)
    users_export = np.asarray(users_export, dtype=float)

    soc = p.add_vars("soc" + tag, n, params.soc_min_frac * cap_hi if fixed else 0.0,
                     params.soc_max_frac * cap_hi)
    p_ch = p.add_vars("p_ch" + tag, n, 0.0, p_max)
    p_dc = p.add_vars("p_dc" + tag, n, 0.0, p_max)
    imp = p.add_vars("imp" + tag, n, 0.0, np.maximum(net, 0.0) + p_max * dh)
    exp = p.add_vars("exp" + tag, n, 0.0, np.maximum(-net, 0.0) + p_max * dh)
    g = p.add_vars("grid_chg" + tag, n, 0.0, p_max * dh)

    for h in range(n):
        p.add_constraint({imp[h]: 1.0, exp[h]: -1.0, p_ch[h]: -dh, p_dc[h]: dh}, EQ, float(net[h]))
        if not prices[h] > 0:
            # with a positive price, simultaneous import and export is never optimal
            add_complementarity(p, int(imp[h]), int(exp[h]))
        row = {soc[h]: 1.0, p_ch[h]: -dh, p_dc[h]: dh / eff}
        rhs = 0.0
        if h:
            row[soc[h - 1]] = -1.0
        elif soc_init_is_var:
            row[int(soc_init)] = row.get(int(soc_init), 0.0) - 1.0
        else:
            rhs = float(soc_init)
        p.add_constraint(row, EQ, rhs)
        p.add_constraint({g[h]: 1.0, p_ch[h]: -dh}, GE, -float(users_export[h]))
        if not fixed:
            inv_t = 1.0 / params.duration_h
            p.add_constraint({p_ch[h]: 1.0, e_cap_var: -inv_t}, LE, 0.0)
            p.add_constraint({p_dc[h]: 1.0, e_cap_var: -inv_t}, LE, 0.0)
            p.add_constraint({soc[h]: 1.0, e_cap_var: -params.soc_max_frac}, LE, 0.0)
            if params.soc_min_frac > 0:
                p.add_constraint({soc[h]: 1.0, e_cap_var: -params.soc_min_frac}, GE, 0.0)

        p.add_objective(imp[h], weight * prices[h])
        p.add_objective(g[h], weight * tariff.cbs_grid_charge)
        p.add_objective(p_dc[h], weight * tariff.throughput_charge * dh)
    if ending_soc:
        if soc_init_is_var:
            p.add_constraint({soc[n - 1]: 1.0, int(soc_init): -1.0}, EQ, 0.0)
        else:
            p.add_constraint({soc[n - 1]: 1.0}, EQ, float(soc_init))
    return {"soc": soc, "p_ch": p_ch, "p_dc": p_dc, "imp": imp, "exp": exp, "grid_chg": g}


def build_cbs_horizon(params: CbsParams, e_cap: float, tariff: TariffSchedule, pd_row,
                      user_plan_net, user_plan_export, user_peak_j: float, state: CbsState,
                      grid: TimeGrid, j: int = 0) -> Program:
    if e_cap < 0:
        raise ValueError(f"e_cap must be >= 0, got {e_cap}")
    H = grid.horizon_len
    for name, arr in (("pd_row", pd_row), ("user_plan_net", user_plan_net),
                      ("user_plan_export", user_plan_export)):
        if len(arr) != H:
            raise ValueError(f"{name} has length {len(arr)}, expected {H}")
    dh = grid.delta_h
    p = Program(name=f"cbs_j{j}")
    ids = add_dispatch_block(p, params, grid, user_plan_net, user_plan_export, np.asarray(pd_row, float),
                             tariff, e_cap=e_cap, soc_init=state.soc_init)
    peak_ub = max(state.peak_hist, float(np.max(p.bounds()[1][ids["imp"]])) / dh)
    peak = p.add_vars("local_peak", 1, state.peak_hist, peak_ub)[0]
    for h in range(H):
        p.add_constraint({peak: 1.0, ids["imp"][h]: -1.0 / dh}, GE, 0.0)
    lam = peak_charge_per_horizon(tariff, grid)
    p.add_objective(peak, lam)
    p.constant -= lam * user_peak_j
    p.meta.update(j=j, e_cap=e_cap, soc_init=state.soc_init, peak_hist=state.peak_hist)
    return p


def solve_cbs_horizon(prog: Program) -> CbsHorizonSolution:
    sol = solve(prog)
    if not sol.ok:
        m = prog.meta
        raise HorizonError(f"CBS horizon j={m.get('j')} (e_cap={m.get('e_cap')}): status {sol.status}")
    vals = {f: sol.group(f) for f in HORIZON_FIELDS}
    # pairs without a binary can only overlap by solver round-off; remove it
    common = np.minimum(vals["imp"], vals["exp"])
    vals["imp"] = vals["imp"] - common
    vals["exp"] = vals["exp"] - common
    return CbsHorizonSolution(**vals,
                              local_peak=float(sol.group("local_peak")[0]),
                              objective=sol.objective_value)


def advance_cbs_state(state: CbsState, sol: CbsHorizonSolution, delta_h: float) -> CbsState:
    return CbsState(soc_init=float(sol.soc[0]),
                    peak_hist=max(state.peak_hist, float(sol.imp[0]) / delta_h))


def run_cbs_rho(params: CbsParams, e_cap: float, tariff: TariffSchedule, prices: PriceSeries,
                users: Neighbourhood, grid: TimeGrid) -> CbsTrajectory:
    """Sequential receding-horizon dispatch at capacity ``e_cap``."""
    n = grid.n_total
    dh = grid.delta_h
    out = {f: np.zeros(n) for f in HORIZON_FIELDS}
    local_peak_j, user_peak_j = np.zeros(n), np.zeros(n)
    soc_init, peak_hist = np.zeros(n), np.zeros(n)
    state = CbsState(soc_init=params.soc_min_frac * e_cap)
    for j in range(n):
        soc_init[j], peak_hist[j] = state.soc_init, state.peak_hist
        user_peak_j[j] = float(np.max(users.plan_net[j])) / dh
        prog = build_cbs_horizon(params, e_cap, tariff, prices.pd[j], users.plan_net[j],
                                 users.plan_export[j], user_peak_j[j], state, grid, j)
        sol = solve_cbs_horizon(prog)
        for f in ("soc", "p_ch", "p_dc"):
            out[f][j] = getattr(sol, f)[0]
        # settle the committed power against the users' committed demand
        v = users.net[j] + (out["p_ch"][j] - out["p_dc"][j]) * dh
        out["imp"][j], out["exp"][j] = max(v, 0.0), max(-v, 0.0)
        out["grid_chg"][j] = max(out["p_ch"][j] * dh - users.export[j], 0.0)
        local_peak_j[j] = sol.local_peak
        state = CbsState(soc_init=out["soc"][j], peak_hist=max(state.peak_hist, out["imp"][j] / dh))
    return CbsTrajectory(**out, local_peak_j=local_peak_j, user_peak_j=user_peak_j, soc_init=soc_init,
                         peak_hist=peak_hist, user_net=users.net.copy(), e_cap=e_cap, delta_h=dh)


def ground_truth_cost(traj: CbsTrajectory, prices: PriceSeries, params: CbsParams,
                      tariff: TariffSchedule, e_cap: float, grid: TimeGrid,
                      annualize: bool = True, clamp_peak: bool = True) -> CostBreakdown:
    """Settle committed actions at RT prices.

    Without ``annualize`` the peak charge and capital are pro-rated to the
    simulated days, so the result is comparable with the sizing objectives.
    Peak revenue is reported as a non-negative credit; ``clamp_peak=False``
    keeps the signed value (a battery that raises the peak pays for it), which
    is the quantity the sizing programs optimise.
    """
    n = traj.n_total
    dh = grid.delta_h
    days = grid.days
    energy = float(prices.rt[:n] @ traj.imp)
    grid_chg = tariff.cbs_grid_charge * float(np.sum(traj.grid_chg))
    throughput = tariff.throughput_charge * dh * float(np.sum(traj.p_dc))
    reduction = traj.user_peak - traj.local_peak
    cost = CostBreakdown(
        energy=energy,
        grid_charge=grid_chg,
        throughput=throughput,
        peak_revenue=tariff.peak_charge_for(days) * reduction,
        capital=params.capital_for(days) * e_cap,
        local_peak_kw=traj.local_peak,
        user_peak_kw=traj.user_peak,
    )
    if clamp_peak and cost.peak_revenue < 0:
        cost = replace(cost, peak_revenue=0.0, total=math.nan)
    return cost.scaled(365.0 / days) if annualize else cost


def no_battery_cost(users: Neighbourhood, prices: PriceSeries, grid: TimeGrid,
                    annualize: bool = True) -> float:
    """Neighbourhood import cost without any battery."""
    n = grid.n_total
    cost = float(prices.rt[:n] @ np.maximum(users.net, 0.0))
    return cost * 365.0 / grid.days if annualize else cost


def avg_daily_cycles(traj: CbsTrajectory, e_cap: float, params: CbsParams, days: float) -> float:
    if e_cap <= 0:
        raise ValueError("average cycles are undefined for zero capacity")
    usable = e_cap * (params.soc_max_frac - params.soc_min_frac)
    return float(np.sum(traj.p_dc) * traj.delta_h) / usable / days


def check_cbs_trajectory(traj: CbsTrajectory, params: CbsParams, grid: TimeGrid,
                         users: Neighbourhood | None = None, tol: float = 1e-6) -> list[str]:
    """Describe every violated invariant of a committed trajectory."""
    problems = []
    dh = grid.delta_h
    e = traj.e_cap
    if np.any(np.minimum(traj.imp, traj.exp) > tol):
        problems.append("import/export complementarity")
    step = (traj.p_ch - traj.p_dc / params.round_trip_eff) * dh
    if np.any(np.abs(traj.soc - (traj.soc_init + step)) > tol):
        problems.append("SoC recursion")
    if n_bad := np.sum(np.abs(traj.soc[:-1] - traj.soc_init[1:]) > tol):
        problems.append(f"SoC hand-over ({n_bad} horizons)")
    if abs(traj.soc[-1] - (params.soc_min_frac * e + np.sum(step))) > tol:
        problems.append("SoC telescoping")
    lo, hi = params.soc_min_frac * e, params.soc_max_frac * e
    if np.any(traj.soc < lo - tol) or np.any(traj.soc > hi + tol):
        problems.append("SoC bounds")
    if np.any(np.abs(traj.p_ch - traj.p_dc) > params.power_limit(e) + tol):
        problems.append("power limit")
    if np.any(np.diff(traj.peak_hist) < -tol):
        problems.append("peak history decreased")
    if np.any(traj.local_peak_j < np.maximum(traj.imp / dh, traj.peak_hist) - tol):
        problems.append("local peak below committed import")
    if users is not None:
        if np.any(np.abs(traj.imp - traj.exp - users.net - (traj.p_ch - traj.p_dc) * dh) > tol):
            problems.append("neighbourhood balance")
        if np.any(traj.grid_chg < traj.p_ch * dh - users.export - tol) or np.any(traj.grid_chg < -tol):
            problems.append("LUoS grid-charge accounting")
    return problems


def check_cbs_horizon(sol: CbsHorizonSolution, params: CbsParams, e_cap: float, state: CbsState,
                      grid: TimeGrid, tol: float = 1e-6) -> list[str]:
    problems = []
    dh = grid.delta_h
    if np.any(np.minimum(sol.imp, sol.exp) > tol):
        problems.append("import/export complementarity")
    soc = state.soc_init + np.cumsum((sol.p_ch - sol.p_dc / params.round_trip_eff) * dh)
    if np.any(np.abs(sol.soc - soc) > tol):
        problems.append("SoC recursion")
    if np.any(np.abs(sol.p_ch - sol.p_dc) > params.power_limit(e_cap) + tol):
        problems.append("power limit")
    if np.any(sol.soc < params.soc_min_frac * e_cap - tol) or np.any(sol.soc > params.soc_max_frac * e_cap + tol):
        problems.append("SoC bounds")
    if abs(sol.soc[-1] - state.soc_init) > tol:
        problems.append("ending SoC")
    if sol.local_peak < max(np.max(sol.imp) / dh, state.peak_hist) - tol:
        problems.append("local peak")
    return problems


TRAJECTORY_COLUMNS = ("j", "timestamp", "soc", "p_ch", "p_dc", "imp", "exp", "grid_chg",
                      "price_rt", "price_pd_h1")


def trajectory_frame(traj: CbsTrajectory, prices: PriceSeries, timestamps=None):
    """Committed trajectory as a DataFrame with the CSV export columns."""
    n = traj.n_total
    ts = timestamps[:n] if timestamps is not None else np.arange(n)
    return pd.DataFrame({
        "j": np.arange(1, n + 1),
        "timestamp": ts,
        "soc": traj.soc,
        "p_ch": traj.p_ch,
        "p_dc": traj.p_dc,
        "imp": traj.imp,
        "exp": traj.exp,
        "grid_chg": traj.grid_chg,
        "price_rt": prices.rt[:n],
        "price_pd_h1": prices.pd[:, 0],
    }, columns=list(TRAJECTORY_COLUMNS))
