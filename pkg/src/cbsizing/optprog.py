"""Backend-neutral mixed-integer program builder and solver.

Programs are minimisations with linear rows, bounded variables and convex
separable quadratic objective terms.  ``solve`` hands pure MILPs to HiGHS
(via :func:`scipy.optimize.milp`).  Quadratic terms are either replaced by a
secant (piecewise-linear) overestimator, which keeps the whole problem a
MILP, or solved natively by branch-and-bound over Clarabel QP relaxations.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
BINARY = "binary"

LE, EQ, GE = "<=", "==", ">="
_RELATIONS = {"<=": LE, "≤": LE, "==": EQ, "=": EQ, ">=": GE, "≥": GE}

FEAS_TOL = 1e-6
MIP_GAP = 1e-6
INT_TOL = 1e-6


class ProgramError(ValueError):
    """Raised for malformed programs."""


class SolverError(RuntimeError):
    """Raised when a program that must be solvable is not solved to optimality."""


@dataclass
class Program:
    name: str = "program"
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    kind: list[str] = field(default_factory=list)
    names: list[str] = field(default_factory=list)
    linear: dict[int, float] = field(default_factory=dict)
    quadratic: dict[int, float] = field(default_factory=dict)
    constant: float = 0.0
    rows: list[tuple[np.ndarray, np.ndarray, str, float]] = field(default_factory=list)
    groups: dict[str, np.ndarray] = field(default_factory=dict)
    pairs: list[tuple[int, int, int]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_var(self, lb: float = 0.0, ub: float = math.inf, kind: str = CONTINUOUS,
                name: str | None = None) -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise ProgramError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ProgramError(f"variable {name or self.n_vars}: lb {lb} > ub {ub}")
        vid = self.n_vars
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.kind.append(kind)
        self.names.append(name or f"v{vid}")
        return vid

    def add_vars(self, group: str, n: int, lb=0.0, ub=math.inf, kind: str = CONTINUOUS) -> np.ndarray:
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        ids = np.array(
            [self.add_var(lbs[i], ubs[i], kind, f"{group}_{i}") for i in range(n)], dtype=int
        )
        self.groups[group] = np.concatenate([self.groups[group], ids]) if group in self.groups else ids
        return ids

    def add_constraint(self, terms: Mapping[int, float] | Iterable[tuple[int, float]],
                       relation: str, rhs: float) -> int:
        if relation not in _RELATIONS:
            raise ProgramError(f"unknown relation {relation!r}")
        items = terms.items() if isinstance(terms, Mapping) else terms
        merged: dict[int, float] = {}
        for vid, coef in items:
            vid = int(vid)
            if not 0 <= vid < self.n_vars:
                raise ProgramError(f"constraint references undeclared variable {vid}")
            merged[vid] = merged.get(vid, 0.0) + float(coef)
        idx = np.fromiter(merged.keys(), dtype=int, count=len(merged))
        val = np.fromiter(merged.values(), dtype=float, count=len(merged))
        self.rows.append((idx, val, _RELATIONS[relation], float(rhs)))
        return len(self.rows) - 1

    def add_objective(self, vid: int, coef: float) -> None:
        vid = int(vid)
        self.linear[vid] = self.linear.get(vid, 0.0) + float(coef)

    def add_quadratic(self, vid: int, coef: float) -> None:
        """Add ``coef * v**2`` to the objective; ``coef`` must be non-negative."""
        if coef < 0:
            raise ProgramError("quadratic coefficients must be non-negative (convexity)")
        if coef == 0:
            return
        vid = int(vid)
        self.quadratic[vid] = self.quadratic.get(vid, 0.0) + float(coef)

    # -- dense views -------------------------------------------------------

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lb, dtype=float), np.array(self.ub, dtype=float)

    def linear_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for vid, coef in self.linear.items():
            c[vid] += coef
        return c

    def row_matrix(self) -> tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
        """Constraint matrix with row bounds ``lo <= A x <= hi``."""
        m = self.n_rows
        if m == 0:
            return sparse.csr_matrix((0, self.n_vars)), np.zeros(0), np.zeros(0)
        counts = [len(r[0]) for r in self.rows]
        ri = np.repeat(np.arange(m), counts)
        ci = np.concatenate([r[0] for r in self.rows])
        vals = np.concatenate([r[1] for r in self.rows])
        A = sparse.csr_matrix((vals, (ri, ci)), shape=(m, self.n_vars))
        rhs = np.array([r[3] for r in self.rows])
        rel = np.array([r[2] for r in self.rows])
        lo = np.where(rel == LE, -np.inf, rhs)
        hi = np.where(rel == GE, np.inf, rhs)
        return A, lo, hi

    def integrality(self) -> np.ndarray:
        return np.array([1 if k == BINARY else 0 for k in self.kind], dtype=int)

    def evaluate_objective(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        total = self.constant + float(self.linear_vector() @ values)
        for vid, coef in self.quadratic.items():
            total += coef * values[vid] ** 2
        return total

    def max_violation(self, values: np.ndarray) -> float:
        """Largest absolute bound, row or integrality violation at ``values``."""
        values = np.asarray(values, dtype=float)
        lb, ub = self.bounds()
        worst = float(max(np.max(lb - values, initial=0.0), np.max(values - ub, initial=0.0)))
        A, lo, hi = self.row_matrix()
        if self.n_rows:
            act = A @ values
            worst = max(worst, float(np.max(lo - act, initial=0.0)), float(np.max(act - hi, initial=0.0)))
        ints = self.integrality().astype(bool)
        if ints.any():
            worst = max(worst, float(np.max(np.abs(values[ints] - np.round(values[ints])))))
        return worst

    def to_lp(self) -> str:
        """Render in CPLEX LP text format (debugging aid)."""
        names = [_lp_name(n) for n in self.names]

        def fmt(coef: float, name: str, first: bool) -> str:
            sign = "-" if coef < 0 else ("" if first else "+")
            return f"{sign} {abs(coef):.12g} {name}".strip()

        lines = [f"\\ {self.name}"]
        if self.constant:
            lines.append(f"\\ objective constant: {self.constant:.12g}")
        obj = [fmt(c, names[v], i == 0) for i, (v, c) in enumerate(sorted(self.linear.items())) if c]
        if self.quadratic:
            quad = " + ".join(f"{2 * c:.12g} {names[v]} ^ 2" for v, c in sorted(self.quadratic.items()))
            obj.append(f"+ [ {quad} ] / 2")
        lines += ["Minimize", " obj: " + (" ".join(obj) if obj else "0 " + names[0] if names else "0")]
        lines.append("Subject To")
        for r, (idx, val, rel, rhs) in enumerate(self.rows):
            body = " ".join(fmt(c, names[v], i == 0) for i, (v, c) in enumerate(zip(idx, val)))
            op = {LE: "<=", EQ: "=", GE: ">="}[rel]
            lines.append(f" c{r}: {body or '0 ' + names[0]} {op} {rhs:.12g}")
        lines.append("Bounds")
        for v, name in enumerate(names):
            lo, hi = self.lb[v], self.ub[v]
            lo_s = "-inf" if lo == -math.inf else f"{lo:.12g}"
            hi_s = "+inf" if hi == math.inf else f"{hi:.12g}"
            lines.append(f" {lo_s} <= {name} <= {hi_s}")
        bins = [names[v] for v, k in enumerate(self.kind) if k == BINARY]
        if bins:
            lines += ["Binaries", " " + " ".join(bins)]
        lines.append("End")
        return "\n".join(lines) + "\n"


def _lp_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)


@dataclass
class Solution:
    status: str
    values: np.ndarray
    objective_value: float
    groups: dict[str, np.ndarray] = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def __getitem__(self, vid: int) -> float:
        return float(self.values[vid])

    def group(self, name: str) -> np.ndarray:
        return self.values[self.groups[name]]


def add_complementarity(p: Program, a: int, b: int, m_a: float | None = None,
                        m_b: float | None = None) -> int:
    """Force ``a * b == 0`` with one binary and big-M rows; returns the binary's id.

    ``m_a`` and ``m_b`` default to the variables' upper bounds and must be finite.
    """
    for v in (a, b):
        if p.kind[v] != CONTINUOUS or p.lb[v] != 0.0:
            raise ProgramError("complementarity needs continuous variables with lower bound 0")
    m_a = p.ub[a] if m_a is None else float(m_a)
    m_b = p.ub[b] if m_b is None else float(m_b)
    if not (math.isfinite(m_a) and math.isfinite(m_b)):
        raise ProgramError("big-M bounds must be finite")
    z = p.add_var(0.0, 1.0, BINARY, name=f"z_{p.names[a]}_{p.names[b]}")
    p.add_constraint({a: 1.0, z: -m_a}, LE, 0.0)
    p.add_constraint({b: 1.0, z: m_b}, LE, m_b)
    p.pairs.append((a, b, z))
    return z


# -- solving ---------------------------------------------------------------


def solve(p: Program, quad_mode: str = "piecewise", segments: int = 16,
          time_limit: float | None = None, mip_gap: float = MIP_GAP) -> Solution:
    """Solve ``p`` to global optimality (within ``mip_gap``).

    ``quad_mode`` is ``"piecewise"`` (secant overestimator with ``segments``
    pieces per quadratic term) or ``"native"``.
    """
    if quad_mode not in ("piecewise", "native"):
        raise ProgramError(f"unknown quad_mode {quad_mode!r}")
    if not p.quadratic:
        sol = _solve_milp(p, time_limit, mip_gap)
    elif quad_mode == "piecewise":
        sol = _solve_piecewise(p, segments, time_limit, mip_gap)
    elif BINARY in p.kind:
        sol = _branch_and_bound(p, mip_gap)
    else:
        lb, ub = p.bounds()
        status, x, _ = _qp(p, lb, ub)
        sol = Solution(status, x if x is not None else np.full(p.n_vars, np.nan), math.nan)
    sol.groups = p.groups
    if sol.ok:
        sol.objective_value = p.evaluate_objective(sol.values)
    return sol


_MILP_STATUS = {0: "optimal", 1: "limit", 2: "infeasible", 3: "unbounded", 4: "limit"}


def _solve_milp(p: Program, time_limit, mip_gap, extra=None) -> Solution:
    """HiGHS MILP solve; ``extra`` = (c, lb, ub, integrality, A, lo, hi) overrides."""
    if extra is None:
        c = p.linear_vector()
        lb, ub = p.bounds()
        integrality = p.integrality()
        A, lo, hi = p.row_matrix()
    else:
        c, lb, ub, integrality, A, lo, hi = extra
    options = {"mip_rel_gap": mip_gap, "presolve": True}
    if time_limit is not None:
        options["time_limit"] = time_limit
    constraints = [LinearConstraint(A, lo, hi)] if A.shape[0] else []
    res = milp(c, constraints=constraints, bounds=Bounds(lb, ub), integrality=integrality,
               options=options)
    status = _MILP_STATUS.get(res.status, "limit")
    if status == "optimal" and res.x is None:
        status = "limit"
    x = np.asarray(res.x, dtype=float) if res.x is not None else np.full(len(c), np.nan)
    if status == "optimal" and integrality.any():
        ints = integrality.astype(bool)
        x[ints] = np.round(x[ints])
    return Solution(status, x, float(res.fun) if res.fun is not None else math.nan,
                    message=str(res.message))


def secant_rows(lo: float, hi: float, segments: int) -> list[tuple[float, float]]:
    """(slope, intercept) of the secants of v**2 on ``segments`` equal pieces of [lo, hi]."""
    pts = np.linspace(lo, hi, segments + 1)
    return [(float(a + b), float(-a * b)) for a, b in zip(pts[:-1], pts[1:])]


def _solve_piecewise(p: Program, segments: int, time_limit, mip_gap) -> Solution:
    if segments < 1:
        raise ProgramError("segments must be >= 1")
    n = p.n_vars
    c = list(p.linear_vector())
    lb, ub = p.bounds()
    lb, ub = list(lb), list(ub)
    integrality = list(p.integrality())
    A, lo, hi = p.row_matrix()
    ri, ci, vals, rlo, rhi = [], [], [], [], []
    nrow = A.shape[0]
    for vid, coef in sorted(p.quadratic.items()):
        v_lo, v_hi = p.lb[vid], p.ub[vid]
        if not (math.isfinite(v_lo) and math.isfinite(v_hi)):
            raise ProgramError(f"piecewise mode needs finite bounds on quadratic variable {p.names[vid]}")
        if v_hi - v_lo <= 0:
            # fixed variable: coef*v**2 == coef*lo*v
            c[vid] += coef * v_lo
            continue
        t = len(c)
        c.append(coef)
        lb.append(0.0)
        ub.append(max(v_lo * v_lo, v_hi * v_hi))
        integrality.append(0)
        for slope, icpt in secant_rows(v_lo, v_hi, segments):
            # t - slope*v >= icpt
            ri += [nrow, nrow]
            ci += [t, vid]
            vals += [1.0, -slope]
            rlo.append(icpt)
            rhi.append(math.inf)
            nrow += 1
    m_total = nrow
    n_total = len(c)
    A_ext = sparse.csr_matrix(
        (np.r_[A.tocoo().data, vals], (np.r_[A.tocoo().row, ri], np.r_[A.tocoo().col, ci])),
        shape=(m_total, n_total),
    )
    sol = _solve_milp(
        p, time_limit, mip_gap,
        extra=(np.array(c), np.array(lb), np.array(ub), np.array(integrality, dtype=int),
               A_ext, np.r_[lo, rlo], np.r_[hi, rhi]),
    )
    sol.values = sol.values[:n]
    return sol


# -- native quadratic path -------------------------------------------------


def _qp(p: Program, lb: np.ndarray, ub: np.ndarray):
    """Convex QP relaxation with the given bounds; returns (status, x, objective)."""
    import clarabel

    n = p.n_vars
    diag = np.zeros(n)
    for vid, coef in p.quadratic.items():
        diag[vid] = 2.0 * coef
    P = sparse.diags(diag, format="csc")
    q = p.linear_vector()
    A, lo, hi = p.row_matrix()
    eq = np.isfinite(lo) & np.isfinite(hi) & (lo == hi)
    blocks, rhs = [], []
    if eq.any():
        blocks.append(A[eq])
        rhs.append(hi[eq])
    n_eq = int(eq.sum())
    up = ~eq & np.isfinite(hi)
    dn = ~eq & np.isfinite(lo)
    if up.any():
        blocks.append(A[up])
        rhs.append(hi[up])
    if dn.any():
        blocks.append(-A[dn])
        rhs.append(-lo[dn])
    eye = sparse.identity(n, format="csr")
    fu, fl = np.isfinite(ub), np.isfinite(lb)
    if fu.any():
        blocks.append(eye[fu])
        rhs.append(ub[fu])
    if fl.any():
        blocks.append(-eye[fl])
        rhs.append(-lb[fl])
    if blocks:
        Am = sparse.vstack(blocks, format="csc")
        b = np.concatenate(rhs)
    else:
        Am = sparse.csc_matrix((0, n))
        b = np.zeros(0)
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if Am.shape[0] - n_eq:
        cones.append(clarabel.NonnegativeConeT(Am.shape[0] - n_eq))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    settings.max_iter = 500
    solver = clarabel.DefaultSolver(P, q, Am, b, cones, settings)
    res = solver.solve()
    status = str(res.status)
    if status.endswith("Solved"):
        x = np.clip(np.array(res.x), lb, ub)
        return "optimal", x, p.evaluate_objective(x)
    if "PrimalInfeasible" in status:
        return "infeasible", None, math.inf
    if "DualInfeasible" in status:
        return "unbounded", None, -math.inf
    return "limit", None, math.nan


def _branch_and_bound(p: Program, mip_gap: float, node_limit: int = 20000) -> Solution:
    base_lb, base_ub = p.bounds()
    ints = np.flatnonzero(p.integrality())
    pair_of = {z: (a, b) for a, b, z in p.pairs}
    best_x, best_obj = None, math.inf

    def try_incumbent(x, lb, ub):
        nonlocal best_x, best_obj
        fix = np.round(x[ints])
        for k, zid in enumerate(ints):
            if lb[zid] == ub[zid]:
                fix[k] = lb[zid]
            elif zid in pair_of:
                a, b = pair_of[zid]
                fix[k] = 1.0 if x[a] >= x[b] else 0.0
        flb, fub = lb.copy(), ub.copy()
        flb[ints] = fix
        fub[ints] = fix
        status, xf, obj = _qp(p, flb, fub)
        if status == "optimal" and obj < best_obj and p.max_violation(xf) <= FEAS_TOL:
            best_x, best_obj = xf, obj

    stack = [(base_lb, base_ub)]
    nodes = 0
    unbounded = False
    while stack:
        if nodes >= node_limit:
            status = "limit" if best_x is None else "optimal"
            logger.warning("branch-and-bound hit node limit %d", node_limit)
            break
        lb, ub = stack.pop()
        nodes += 1
        status, x, obj = _qp(p, lb, ub)
        if status == "infeasible":
            continue
        if status == "unbounded":
            unbounded = True
            break
        if status != "optimal":
            continue
        if obj >= best_obj - mip_gap * max(1.0, abs(best_obj)):
            continue
        frac = np.abs(x[ints] - np.round(x[ints]))
        if frac.max(initial=0.0) <= INT_TOL:
            x = x.copy()
            x[ints] = np.round(x[ints])
            best_x, best_obj = x, p.evaluate_objective(x)
            continue
        try_incumbent(x, lb, ub)
        if obj >= best_obj - mip_gap * max(1.0, abs(best_obj)):
            continue
        k = int(np.argmax(frac))
        zid = ints[k]
        lo_lb, lo_ub = lb.copy(), ub.copy()
        lo_ub[zid] = 0.0
        hi_lb, hi_ub = lb.copy(), ub.copy()
        hi_lb[zid] = 1.0
        if x[zid] >= 0.5:
            stack += [(lo_lb, lo_ub), (hi_lb, hi_ub)]
        else:
            stack += [(hi_lb, hi_ub), (lo_lb, lo_ub)]
    else:
        status = "optimal" if best_x is not None else "infeasible"
    if unbounded:
        return Solution("unbounded", np.full(p.n_vars, np.nan), -math.inf)
    if best_x is None:
        return Solution(status if status != "optimal" else "infeasible", np.full(p.n_vars, np.nan), math.nan)
    best_x = best_x.copy()
    best_x[ints] = np.round(best_x[ints])
    return Solution("optimal", best_x, best_obj, message=f"{nodes} nodes")
