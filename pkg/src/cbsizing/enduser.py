"""Price-responsive end-user model and its receding-horizon loop.

Each horizon solves a small mixed-integer program for one user: consumption
may be shifted inside the rebound window, PV may be curtailed, exported PV
earns kWh credits that later offset grid draw.  Only the first interval of
every horizon is committed; the full plan is kept as the battery operator's
demand forecast.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_PRICE_FLOOR,
    PriceSeries,
    TariffSchedule,
    TimeGrid,
    UserParams,
    discomfort_coefficients,
    horizon_price_reference,
    time_weight,
)
from .optprog import EQ, Program, SolverError, add_complementarity, solve

logger = logging.getLogger(__name__)

FIELDS = ("x", "x_imp", "x_exp", "g_used", "credit_used", "grid_draw", "credit_bal")


@dataclass(frozen=True)
class UserState:
    credit_init: float = 0.0
    delta_x: float = 0.0

    def __post_init__(self):
        if self.credit_init < 0:
            raise ValueError(f"credit_init must be >= 0, got {self.credit_init}")


@dataclass
class UserHorizonSolution:
    x: np.ndarray
    x_imp: np.ndarray
    x_exp: np.ndarray
    g_used: np.ndarray
    credit_used: np.ndarray
    grid_draw: np.ndarray
    credit_bal: np.ndarray
    objective: float = float("nan")

    def first(self) -> dict[str, float]:
        return {f: float(getattr(self, f)[0]) for f in FIELDS}


@dataclass
class UserTrajectory:
    """Committed values (``n_total``), plans (``n_total x H``) and the states used."""

    committed: dict[str, np.ndarray]
    plans: dict[str, np.ndarray]
    credit_init: np.ndarray
    delta_x: np.ndarray
    user_id: str = ""

    @property
    def n_total(self) -> int:
        return len(self.credit_init)

    @property
    def net(self) -> np.ndarray:
        return self.committed["x_imp"] - self.committed["x_exp"]

    @property
    def plan_net(self) -> np.ndarray:
        return self.plans["x_imp"] - self.plans["x_exp"]


class HorizonError(SolverError):
    """A horizon problem could not be solved to optimality."""


def build_user_horizon(params: UserParams, tariff: TariffSchedule, pd_row, state: UserState,
                       grid: TimeGrid, j: int, price_floor: float = DEFAULT_PRICE_FLOOR) -> Program:
    """Program for user ``params`` on zero-based horizon ``j``."""
    H = grid.horizon_len
    pd_row = np.asarray(pd_row, dtype=float)
    if pd_row.shape != (H,):
        raise ValueError(f"pd_row has length {len(pd_row)}, expected {H}")
    if len(params.expected) < j + H:
        raise ValueError(f"user series of length {len(params.expected)} does not cover horizon {j}")
    if state.credit_init < 0:
        raise ValueError("credit_init must be >= 0")
    sl = grid.horizon_slice(j)
    x_hat = params.expected[sl]
    pv = params.pv_gross[sl]
    beta = params.elasticity[sl]
    hours = grid.hours_of_day()[sl]
    imp_charge = tariff.import_charge(hours)
    exp_charge = tariff.export_charge(hours)
    lam_max = horizon_price_reference(pd_row, price_floor)

    x_ub = params.ub_factor * x_hat
    p = Program(name=f"user_{params.user_id}_j{j}")
    x = p.add_vars("x", H, params.lb_factor * x_hat, x_ub)
    x_imp = p.add_vars("x_imp", H, 0.0, x_ub)
    x_exp = p.add_vars("x_exp", H, 0.0, pv)
    g_used = p.add_vars("g_used", H, 0.0, pv)
    credit_used = p.add_vars("credit_used", H, 0.0, x_ub)
    grid_draw = p.add_vars("grid_draw", H, 0.0, x_ub)
    credit_bal = p.add_vars("credit_bal", H, 0.0, state.credit_init + np.cumsum(pv))

    rb = grid.rebound_len
    p.add_constraint({int(v): 1.0 for v in x[:rb]}, EQ, float(x_hat[:rb].sum() + state.delta_x))
    for h in range(H):
        p.add_constraint({x[h]: 1.0, g_used[h]: -1.0, x_imp[h]: -1.0, x_exp[h]: 1.0}, EQ, 0.0)
        p.add_constraint({x_imp[h]: 1.0, credit_used[h]: -1.0, grid_draw[h]: -1.0}, EQ, 0.0)
        row = {credit_bal[h]: 1.0, x_exp[h]: -1.0, credit_used[h]: 1.0}
        if h:
            row[credit_bal[h - 1]] = -1.0
        p.add_constraint(row, EQ, state.credit_init if h == 0 else 0.0)
        if x_ub[h] > 0 and pv[h] > 0:
            add_complementarity(p, int(x_imp[h]), int(x_exp[h]))

        p.add_objective(grid_draw[h], pd_row[h])
        p.add_objective(x_exp[h], exp_charge[h])
        p.add_objective(x_imp[h], imp_charge[h])
        if x_hat[h] > 0:
            w = time_weight(h + 1, params.kappa, params.tau)
            q, lin, const = discomfort_coefficients(x_hat[h], beta[h], lam_max)
            p.add_quadratic(x[h], w * q)
            p.add_objective(x[h], w * lin)
            p.constant += w * const
    p.meta.update(j=j, delta_x=state.delta_x, credit_init=state.credit_init, user=params.user_id)
    return p


def solve_user_horizon(prog: Program, quad_mode: str = "piecewise", segments: int = 16) -> UserHorizonSolution:
    sol = solve(prog, quad_mode=quad_mode, segments=segments)
    if not sol.ok:
        m = prog.meta
        raise HorizonError(
            f"user {m.get('user')!r} horizon j={m.get('j')}: status {sol.status} "
            f"(delta_x={m.get('delta_x')}, credit_init={m.get('credit_init')})"
        )
    return UserHorizonSolution(**{f: sol.group(f) for f in FIELDS}, objective=sol.objective_value)


def advance_user_state(state: UserState, x: float, x_exp: float, credit_used: float,
                       x_hat: float, tol: float = 1e-9) -> UserState:
    credit = state.credit_init + x_exp - credit_used
    if credit < -tol:
        raise ValueError(f"committed flows drive the credit balance negative ({credit})")
    return UserState(credit_init=max(credit, 0.0), delta_x=state.delta_x + (x_hat - x))


def run_single_user(params: UserParams, tariff: TariffSchedule, prices: PriceSeries, grid: TimeGrid,
                    quad_mode: str = "piecewise", segments: int = 16,
                    price_floor: float = DEFAULT_PRICE_FLOOR) -> UserTrajectory:
    n, H = grid.n_total, grid.horizon_len
    plans = {f: np.zeros((n, H)) for f in FIELDS}
    credit_init = np.zeros(n)
    delta_x = np.zeros(n)
    state = UserState()
    for j in range(n):
        credit_init[j], delta_x[j] = state.credit_init, state.delta_x
        prog = build_user_horizon(params, tariff, prices.pd[j], state, grid, j, price_floor)
        sol = solve_user_horizon(prog, quad_mode, segments)
        for f in FIELDS:
            plans[f][j] = getattr(sol, f)
        c = sol.first()
        state = advance_user_state(state, c["x"], c["x_exp"], c["credit_used"], params.expected[j])
    committed = {f: plans[f][:, 0].copy() for f in FIELDS}
    return UserTrajectory(committed, plans, credit_init, delta_x, user_id=params.user_id)


def _run_user_job(args):
    return run_single_user(*args)


def run_user_rho(users: list[UserParams], tariff: TariffSchedule, prices: PriceSeries, grid: TimeGrid,
                 quad_mode: str = "piecewise", segments: int = 16, threads: int = 1,
                 price_floor: float = DEFAULT_PRICE_FLOOR) -> list[UserTrajectory]:
    """Receding-horizon run for every user; users are independent."""
    if prices.n_total != grid.n_total or prices.horizon_len != grid.horizon_len:
        raise ValueError("price matrix does not match the time grid")
    jobs = [(u, tariff, prices, grid, quad_mode, segments, price_floor) for u in users]
    if threads > 1 and len(users) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_user_job, jobs))
    out = []
    for k, job in enumerate(jobs):
        logger.debug("user RHO %d/%d", k + 1, len(jobs))
        out.append(run_single_user(*job))
    return out


@dataclass
class Neighbourhood:
    """Aggregated user plans and commitments as seen by the battery operator."""

    plan_net: np.ndarray      # (n_total, H) kWh
    plan_export: np.ndarray   # (n_total, H) kWh
    net: np.ndarray           # (n_total,) committed kWh
    export: np.ndarray        # (n_total,) committed kWh

    @classmethod
    def from_trajectories(cls, trajectories: list[UserTrajectory]) -> "Neighbourhood":
        if not trajectories:
            raise ValueError("need at least one user trajectory")
        return cls(
            plan_net=sum(t.plan_net for t in trajectories),
            plan_export=sum(t.plans["x_exp"] for t in trajectories),
            net=sum(t.net for t in trajectories),
            export=sum(t.committed["x_exp"] for t in trajectories),
        )


def aggregate_net_demand(trajectories: list[UserTrajectory], j: int, delta_h: float = 0.5):
    """Neighbourhood planned net demand on horizon ``j`` and its peak in kW."""
    net = sum(t.plan_net[j] for t in trajectories)
    return net, float(np.max(net)) / delta_h


def check_user_trajectory(traj: UserTrajectory, params: UserParams, grid: TimeGrid,
                          tol: float = 1e-6) -> list[str]:
    """Return descriptions of every violated model invariant (empty when clean)."""
    problems = []
    P = traj.plans
    n = traj.n_total
    idx = np.arange(n)[:, None] + np.arange(grid.horizon_len)[None, :]
    x_hat = params.expected[idx]
    pv = params.pv_gross[idx]
    if np.any(np.minimum(P["x_imp"], P["x_exp"]) > tol):
        problems.append("import/export complementarity")
    if np.any(np.abs(P["x"] - P["g_used"] - P["x_imp"] + P["x_exp"]) > tol):
        problems.append("net demand balance")
    if np.any(P["g_used"] > pv + 1e-9 + tol):
        problems.append("used PV exceeds gross PV")
    if np.any(P["credit_bal"] < -1e-9 - tol):
        problems.append("negative credit balance")
    if np.any(P["grid_draw"] < -1e-9 - tol):
        problems.append("negative grid draw")
    if np.any(np.abs(P["grid_draw"] - (P["x_imp"] - P["credit_used"])) > tol):
        problems.append("grid draw balance")
    flows = np.cumsum(P["x_exp"] - P["credit_used"], axis=1)
    if np.any(np.abs(P["credit_bal"] - (traj.credit_init[:, None] + flows)) > tol):
        problems.append("credit recursion")
    if np.any(P["x"] < params.lb_factor * x_hat - 1e-9 - tol) or np.any(P["x"] > params.ub_factor * x_hat + 1e-9 + tol):
        problems.append("consumption bounds")
    rb = grid.rebound_len
    lhs = P["x"][:, :rb].sum(axis=1)
    rhs = x_hat[:, :rb].sum(axis=1) + traj.delta_x
    if np.any(np.abs(lhs - rhs) > tol):
        problems.append("rebound accounting")
    c = traj.committed
    final = traj.credit_init[-1] + c["x_exp"][-1] - c["credit_used"][-1]
    if abs(final - (c["x_exp"].sum() - c["credit_used"].sum())) > tol:
        problems.append("credit conservation")
    for f in FIELDS:
        if not np.array_equal(c[f], P[f][:, 0]):
            problems.append(f"committed {f} differs from plan")
    return problems
