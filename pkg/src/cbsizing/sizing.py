"""Battery sizing: exhaustive search under true RHO and two single-program shortcuts.

* ``exact``: ground-truth RHO cost evaluated on a capacity grid.
* ``worh_perfect`` / ``worh_pd``: one dispatch chain over all intervals with
  capacity as a decision variable, priced at RT or first-lead PD prices.
* ``coupled_rh``: every receding horizon as its own block inside one program,
  blocks chained through their first-interval SoC.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cbs import CbsTrajectory, add_dispatch_block, avg_daily_cycles, ground_truth_cost, run_cbs_rho
from .core import CostBreakdown
from .dataio import ScenarioBundle
from .enduser import Neighbourhood, UserTrajectory, run_user_rho
from .optprog import EQ, GE, Program, SolverError, solve

logger = logging.getLogger(__name__)

METHODS = ("exact", "worh_perfect", "worh_pd", "coupled_rh")


@dataclass(frozen=True)
class CapacityGrid:
    lo: float = 0.0
    hi: float = 100.0
    step: float = 5.0

    def __post_init__(self):
        if self.lo < 0 or not self.step > 0 or self.hi < self.lo:
            raise ValueError(f"need lo >= 0, step > 0, hi >= lo; got {self}")

    def points(self) -> list[float]:
        k = int(math.floor((self.hi - self.lo) / self.step + 1e-9))
        return [round(self.lo + i * self.step, 9) for i in range(k + 1)]

    def nearest(self, capacity: float) -> float:
        """Closest grid point (ties toward the smaller one)."""
        pts = np.array(self.points())
        return float(pts[int(np.argmin(np.abs(pts - capacity) - 1e-12 * (pts <= capacity)))])


class Scenario:
    """A scenario bundle with its user trajectories (which do not depend on the battery)."""

    def __init__(self, bundle: ScenarioBundle, trajectories: list[UserTrajectory] | None = None,
                 quad_mode: str = "piecewise", segments: int = 16, threads: int = 1):
        self.bundle = bundle
        if trajectories is None:
            trajectories = run_user_rho(bundle.users, bundle.tariff, bundle.prices, bundle.grid,
                                        quad_mode, segments, threads)
        self.trajectories = trajectories
        self.users = Neighbourhood.from_trajectories(trajectories)
        self._runs: dict[float, CbsTrajectory] = {}

    @classmethod
    def from_neighbourhood(cls, bundle: ScenarioBundle, users: Neighbourhood) -> "Scenario":
        """Scenario with user demand given directly instead of simulated."""
        if users.plan_net.shape != (bundle.grid.n_total, bundle.grid.horizon_len):
            raise ValueError("neighbourhood plans do not match the time grid")
        self = cls.__new__(cls)
        self.bundle, self.trajectories, self.users, self._runs = bundle, [], users, {}
        return self

    @property
    def grid(self):
        return self.bundle.grid

    def run(self, e_cap: float) -> CbsTrajectory:
        key = round(float(e_cap), 9)
        if key not in self._runs:
            b = self.bundle
            self._runs[key] = run_cbs_rho(b.cbs, key, b.tariff, b.prices, self.users, b.grid)
        return self._runs[key]

    def prefetch(self, capacities, threads: int = 1) -> None:
        todo = [round(float(c), 9) for c in capacities if round(float(c), 9) not in self._runs]
        if threads <= 1 or len(todo) <= 1:
            for c in todo:
                self.run(c)
            return
        b = self.bundle
        jobs = [(b.cbs, c, b.tariff, b.prices, self.users, b.grid) for c in todo]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for c, traj in zip(todo, pool.map(_cbs_job, jobs)):
                self._runs[c] = traj

    def evaluated(self) -> dict[float, CbsTrajectory]:
        return dict(sorted(self._runs.items()))


def _cbs_job(args):
    return run_cbs_rho(*args)


@dataclass
class SizingResult:
    method: str
    capacity: float
    raw_capacity: float = math.nan
    in_sample: CostBreakdown | None = None
    out_sample: CostBreakdown | None = None
    avg_cycle_in: float = math.nan
    avg_cycle_out: float = math.nan
    loss_in: float = math.nan
    loss_out: float = math.nan
    objective: float = math.nan
    model_cost: CostBreakdown | None = None

    def __post_init__(self):
        if self.capacity < -1e-9:
            raise ValueError(f"capacity must be >= 0, got {self.capacity}")


def evaluate_capacity(e_cap: float, scenario: Scenario, annualize: bool = True,
                      clamp_peak: bool = True) -> CostBreakdown:
    """Ground-truth cost of operating a battery of ``e_cap`` kWh under RHO."""
    b = scenario.bundle
    traj = scenario.run(e_cap)
    return ground_truth_cost(traj, b.prices, b.cbs, b.tariff, round(float(e_cap), 9), b.grid, annualize,
                             clamp_peak)


def cycles_at(e_cap: float, scenario: Scenario) -> float:
    if e_cap <= 0:
        return math.nan
    b = scenario.bundle
    return avg_daily_cycles(scenario.run(e_cap), e_cap, b.cbs, b.grid.days)


def cost_table(grid: CapacityGrid, scenario: Scenario, threads: int = 1) -> dict[float, CostBreakdown]:
    pts = grid.points()
    scenario.prefetch(pts, threads)
    return {c: evaluate_capacity(c, scenario) for c in pts}


def size_exhaustive(grid: CapacityGrid, scenario: Scenario, threads: int = 1) -> SizingResult:
    table = cost_table(grid, scenario, threads)
    best = min(table, key=lambda c: (table[c].total, c))
    return SizingResult("exact", best, best, in_sample=table[best], avg_cycle_in=cycles_at(best, scenario))


def default_cap_max(scenario: Scenario) -> float:
    """A capacity beyond which extra storage cannot offset more imports."""
    return max(float(np.sum(np.maximum(scenario.users.net, 0.0))), 1.0)


def _capacity_var(p: Program, fixed_capacity, cap_max):
    if fixed_capacity is not None:
        return None, float(fixed_capacity)
    if cap_max is None or not cap_max >= 0:
        raise ValueError("cap_max must be a finite upper bound on capacity")
    return int(p.add_vars("e_cap", 1, 0.0, float(cap_max))[0]), float(cap_max)


def _initial_soc(p: Program, scenario: Scenario, e_var, e_hi, tag: str):
    """SoC at operation start: soc_min * capacity, as a constant or tied variable."""
    frac = scenario.bundle.cbs.soc_min_frac
    if e_var is None:
        return frac * e_hi, False
    v = int(p.add_vars("soc_start" + tag, 1, 0.0, frac * e_hi)[0])
    p.add_constraint({v: 1.0, e_var: -frac}, EQ, 0.0)
    return v, True


def _finish(p: Program, scenario: Scenario, e_var, e_value, imp_ids, user_peak: float):
    """Shared peak and capital terms; returns the peak variable id."""
    b = scenario.bundle
    dh = b.grid.delta_h
    lam = b.tariff.peak_charge_for(b.grid.days)
    _, ubs = p.bounds()
    peak = int(p.add_vars("local_peak", 1, 0.0, float(np.max(ubs[imp_ids])) / dh)[0])
    for i in imp_ids:
        p.add_constraint({peak: 1.0, int(i): -1.0 / dh}, GE, 0.0)
    p.add_objective(peak, lam)
    p.constant -= lam * user_peak
    cap_rate = b.cbs.capital_for(b.grid.days)
    if e_var is None:
        p.constant += cap_rate * e_value
    else:
        p.add_objective(e_var, cap_rate)
    return peak


def _model_cost(p: Program, sol, scenario: Scenario, blocks, weight: float, e_value: float,
                prices_of, user_peak: float) -> CostBreakdown:
    b = scenario.bundle
    dh = b.grid.delta_h
    v = sol.values
    energy = grid_c = thp = 0.0
    for tag, ids in blocks:
        energy += float(prices_of(tag) @ v[ids["imp"]])
        grid_c += b.tariff.cbs_grid_charge * float(v[ids["grid_chg"]].sum())
        thp += b.tariff.throughput_charge * dh * float(v[ids["p_dc"]].sum())
    peak = float(sol.group("local_peak")[0])
    lam = b.tariff.peak_charge_for(b.grid.days)
    return CostBreakdown(energy * weight, grid_c * weight, thp * weight, lam * (user_peak - peak),
                         b.cbs.capital_for(b.grid.days) * e_value, local_peak_kw=peak, user_peak_kw=user_peak)


def _solve_sizing(p: Program, e_var, e_hi, cap_max, fixed_capacity, label: str, time_limit):
    sol = solve(p, time_limit=time_limit)
    if not sol.ok:
        raise SolverError(f"{label} sizing program: status {sol.status} ({sol.message})")
    e_value = e_hi if e_var is None else max(float(sol.values[e_var]), 0.0)
    if fixed_capacity is None and e_value >= cap_max * (1 - 1e-6) and cap_max > 0:
        logger.warning("%s: capacity hit its upper bound %.3f kWh", label, cap_max)
    return sol, e_value


def size_without_rh(scenario: Scenario, price_mode: str = "rt", cap_max: float | None = None,
                    fixed_capacity: float | None = None, time_limit: float | None = None) -> SizingResult:
    """Single dispatch chain over all committed intervals; capacity optional variable."""
    if price_mode not in ("rt", "pd_h1"):
        raise ValueError(f"price_mode must be 'rt' or 'pd_h1', got {price_mode!r}")
    b = scenario.bundle
    n = b.grid.n_total
    prices = b.prices.rt[:n] if price_mode == "rt" else b.prices.pd[:, 0]
    cap_max = default_cap_max(scenario) if cap_max is None and fixed_capacity is None else cap_max
    p = Program(name=f"worh_{price_mode}")
    e_var, e_hi = _capacity_var(p, fixed_capacity, cap_max)
    soc0, soc0_var = _initial_soc(p, scenario, e_var, e_hi, "")
    kw = {"e_cap": e_hi} if e_var is None else {"e_cap_var": e_var, "e_cap_max": e_hi}
    ids = add_dispatch_block(p, b.cbs, b.grid, scenario.users.net, scenario.users.export, prices, b.tariff,
                             soc_init=soc0, soc_init_is_var=soc0_var, ending_soc=False, **kw)
    user_peak = float(np.max(scenario.users.net)) / b.grid.delta_h
    _finish(p, scenario, e_var, e_hi, ids["imp"], user_peak)
    sol, e_value = _solve_sizing(p, e_var, e_hi, cap_max, fixed_capacity, p.name, time_limit)
    method = "worh_perfect" if price_mode == "rt" else "worh_pd"
    cost = _model_cost(p, sol, scenario, [("", ids)], 1.0, e_value, lambda _tag: prices, user_peak)
    return SizingResult(method, e_value, e_value, objective=sol.objective_value, model_cost=cost)


def size_coupled_rh(scenario: Scenario, period_len: int | None = None, cap_max: float | None = None,
                    ending_soc: bool = True, fixed_capacity: float | None = None,
                    time_limit: float | None = None) -> SizingResult:
    """All horizons as blocks in one program, coupled within periods of ``period_len`` horizons.

    Operational costs are weighted by 1/H; the first horizon of every
    period starts from the minimum SoC.
    """
    b = scenario.bundle
    g = b.grid
    if period_len is None:
        period_len = 7 * g.intervals_per_day
    if period_len < 2:
        raise ValueError("period_len must be >= 2 horizons")
    n, H = g.n_total, g.horizon_len
    periods = [range(s, min(s + period_len, n)) for s in range(0, n, period_len)]
    logger.info("coupled RH: %d period(s) of up to %d horizons", len(periods), period_len)
    cap_max = default_cap_max(scenario) if cap_max is None and fixed_capacity is None else cap_max
    p = Program(name="coupled_rh")
    e_var, e_hi = _capacity_var(p, fixed_capacity, cap_max)
    kw = {"e_cap": e_hi} if e_var is None else {"e_cap_var": e_var, "e_cap_max": e_hi}
    users = scenario.users
    weight = 1.0 / H
    blocks = []
    for w, period in enumerate(periods):
        prev = None
        for j in period:
            if prev is None:
                soc0, soc0_var = _initial_soc(p, scenario, e_var, e_hi, f"_w{w}")
            else:
                soc0, soc0_var = int(prev["soc"][0]), True
            tag = f"_j{j}"
            ids = add_dispatch_block(p, b.cbs, g, users.plan_net[j], users.plan_export[j], b.prices.pd[j],
                                     b.tariff, soc_init=soc0, soc_init_is_var=soc0_var,
                                     ending_soc=ending_soc, weight=weight, tag=tag, **kw)
            blocks.append((j, ids))
            prev = ids
    imp_ids = np.concatenate([ids["imp"] for _, ids in blocks])
    user_peak = float(np.max(users.net)) / g.delta_h
    _finish(p, scenario, e_var, e_hi, imp_ids, user_peak)
    sol, e_value = _solve_sizing(p, e_var, e_hi, cap_max, fixed_capacity, p.name, time_limit)
    cost = _model_cost(p, sol, scenario, blocks, weight, e_value, lambda j: b.prices.pd[j], user_peak)
    res = SizingResult("coupled_rh", e_value, e_value, objective=sol.objective_value, model_cost=cost)
    return res


def compare_methods(in_sample: Scenario, out_sample: Scenario, grid: CapacityGrid,
                    period_len: int | None = None, threads: int = 1,
                    time_limit: float | None = None) -> list[SizingResult]:
    """Size with all four methods on ``in_sample`` and evaluate every capacity on both sets."""
    exact = size_exhaustive(grid, in_sample, threads)
    results = [
        exact,
        size_without_rh(in_sample, "rt", cap_max=grid.hi, time_limit=time_limit),
        size_without_rh(in_sample, "pd_h1", cap_max=grid.hi, time_limit=time_limit),
        size_coupled_rh(in_sample, period_len, cap_max=grid.hi, time_limit=time_limit),
    ]
    for r in results[1:]:
        r.capacity = grid.nearest(r.raw_capacity)
    caps = sorted({r.capacity for r in results})
    in_sample.prefetch(caps, threads)
    out_sample.prefetch(caps, threads)
    for r in results:
        r.in_sample = evaluate_capacity(r.capacity, in_sample)
        r.out_sample = evaluate_capacity(r.capacity, out_sample)
        r.avg_cycle_in = cycles_at(r.capacity, in_sample)
        r.avg_cycle_out = cycles_at(r.capacity, out_sample)
    base_in, base_out = exact.in_sample.total, exact.out_sample.total
    for r in results:
        r.loss_in = relative_loss(r.in_sample.total, base_in)
        r.loss_out = relative_loss(r.out_sample.total, base_out)
        if r.in_sample.total < base_in - 1e-9 * max(abs(base_in), 1.0):
            raise RuntimeError(f"exhaustive dominance violated by {r.method} at {r.capacity} kWh")
    return results


def relative_loss(total: float, base: float) -> float:
    """(total - base) / |base|, the loss of a method against the exhaustive optimum."""
    if base == 0:
        return 0.0 if total == 0 else math.copysign(math.inf, total)
    return (total - base) / abs(base)
