"""Dense LP and MILP kernel.

A bounded-variable revised simplex (two phases, Dantzig pricing with a
switch to Bland's rule when degenerate pivots pile up) and a best-first
branch-and-bound on top of it. Sized for the master and sub problems of
this package: a few hundred rows, dense algebra, no presolve.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve

__all__ = [
    "Tolerances",
    "DEFAULT_TOLERANCES",
    "Status",
    "LinearProgram",
    "MixedIntegerProgram",
    "SolveOutcome",
    "solve_lp",
    "solve_milp",
    "format_lp",
]


@dataclass(frozen=True)
class Tolerances:
    """Every numerical threshold the kernel uses, in one place."""

    feasibility: float = 1e-8
    optimality: float = 1e-7
    pivot: float = 1e-11
    integrality: float = 1e-6
    degenerate_streak: int = 50
    max_iter: int = 50_000


DEFAULT_TOLERANCES = Tolerances()


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    NODE_LIMIT = "node-limit"


_SENSES = ("<=", "=", ">=")


@dataclass
class LinearProgram:
    """``min c @ x`` subject to ``A @ x (senses) b`` and ``lb <= x <= ub``.

    ``senses`` holds one of ``"<="``, ``"="``, ``">="`` per row. Missing
    bounds default to ``0 <= x < inf``.
    """

    c: np.ndarray
    A: np.ndarray
    senses: Sequence[str]
    b: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    names: Sequence[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else np.zeros((len(self.senses), 0))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = tuple(self.senses)
        m = self.A.shape[0]
        if self.b.size != m or len(self.senses) != m:
            raise ValueError(f"dimension mismatch: A has {m} rows, b {self.b.size}, senses {len(self.senses)}")
        bad = [s for s in self.senses if s not in _SENSES]
        if bad:
            raise ValueError(f"unknown constraint sense {bad[0]!r}")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must match the number of variables")
        for name, arr in (("c", self.c), ("A", self.A), ("b", self.b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("NaN in variable bounds")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("bounds must allow at least one finite value")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    integrality: np.ndarray

    def __post_init__(self):
        self.integrality = np.asarray(self.integrality, dtype=bool).ravel()
        if self.integrality.size != self.lp.c.size:
            raise ValueError("integrality mask must match the number of variables")
        mask = self.integrality
        if not (np.all(np.isfinite(self.lp.lb[mask])) and np.all(np.isfinite(self.lp.ub[mask]))):
            raise ValueError("integral variables need finite bounds")


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray | None = None
    objective: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    nodes: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Standard:
    """The LP mapped to ``A z = b, 0 <= z <= U`` with row signs flipped so b >= 0.

    Column ``k`` of the standard form maps back to original variable
    ``origin[k]`` with multiplier ``scale[k]`` (+1, -1) on top of ``shift``.
    """

    def __init__(self, lp: LinearProgram):
        m, n = lp.shape
        cols, costs, upper, origin, scale = [], [], [], [], []
        shift = np.zeros(n)
        for j in range(n):
            lo, hi = lp.lb[j], lp.ub[j]
            a = lp.A[:, j]
            if np.isfinite(lo):
                shift[j] = lo
                cols.append(a)
                costs.append(lp.c[j])
                upper.append(hi - lo)
                origin.append(j)
                scale.append(1.0)
            elif np.isfinite(hi):
                shift[j] = hi
                cols.append(-a)
                costs.append(-lp.c[j])
                upper.append(np.inf)
                origin.append(j)
                scale.append(-1.0)
            else:
                for sgn in (1.0, -1.0):
                    cols.append(sgn * a)
                    costs.append(sgn * lp.c[j])
                    upper.append(np.inf)
                    origin.append(j)
                    scale.append(sgn)
        self.n_struct = len(cols)
        rhs = lp.b - lp.A @ shift
        slack_of_row = np.full(m, -1)
        for i, sense in enumerate(lp.senses):
            if sense == "=":
                continue
            e = np.zeros(m)
            e[i] = 1.0 if sense == "<=" else -1.0
            slack_of_row[i] = len(cols)
            cols.append(e)
            costs.append(0.0)
            upper.append(np.inf)
            origin.append(-1)
            scale.append(0.0)
        self.n_real = len(cols)
        A = np.column_stack(cols) if cols else np.zeros((m, 0))
        sign = np.where(rhs < 0, -1.0, 1.0)
        A = A * sign[:, None]
        rhs = rhs * sign
        # starting basis: a +1 slack where one exists, otherwise an artificial
        basis = np.empty(m, dtype=int)
        art_cols = []
        for i in range(m):
            k = slack_of_row[i]
            if k >= 0 and A[i, k] > 0:
                basis[i] = k
            else:
                e = np.zeros(m)
                e[i] = 1.0
                basis[i] = len(cols) + len(art_cols)
                art_cols.append(e)
        if art_cols:
            A = np.hstack([A, np.column_stack(art_cols)])
        self.A = A
        self.b = rhs
        self.sign = sign
        self.c = np.concatenate([costs, np.zeros(len(art_cols))])
        self.upper = np.concatenate([upper, np.full(len(art_cols), np.inf)])
        self.n_art = len(art_cols)
        self.origin = np.array(origin, dtype=int)
        self.scale = np.array(scale)
        self.shift = shift
        self.basis = basis

    def recover(self, z: np.ndarray, n: int) -> np.ndarray:
        x = self.shift.copy()
        for k in range(self.n_struct):
            x[self.origin[k]] += self.scale[k] * z[k]
        return x[:n]


def _simplex(A, b, c, upper, basis, at_upper, tol: Tolerances, it0: int = 0):
    """Bounded-variable primal simplex from a feasible basis.

    Returns ``(status, basis, at_upper, z, y, iterations)``. Nonbasic
    variables sit at 0 or at their (finite) upper bound.
    """
    m, n = A.shape
    it = it0
    streak = 0
    bland = False
    fixed = upper <= 0.0
    while True:
        z = np.where(at_upper, upper, 0.0)
        z[basis] = 0.0
        if m:
            try:
                lu = lu_factor(A[:, basis], check_finite=False)
            except (LinAlgError, ValueError):
                raise LinAlgError("singular basis")
            zb = lu_solve(lu, b - A @ z, check_finite=False)
            z[basis] = zb
            y = lu_solve(lu, c[basis], trans=1, check_finite=False)
        else:
            zb = np.zeros(0)
            y = np.zeros(0)
        if it >= tol.max_iter:
            return Status.ITERATION_LIMIT, basis, at_upper, z, y, it
        d = c - A.T @ y
        is_basic = np.zeros(n, dtype=bool)
        is_basic[basis] = True
        eligible = ~is_basic & ~fixed & ((~at_upper & (d < -tol.optimality)) | (at_upper & (d > tol.optimality)))
        cand = np.flatnonzero(eligible)
        if cand.size == 0:
            return Status.OPTIMAL, basis, at_upper, z, y, it
        if bland:
            j = int(cand[0])
        else:
            j = int(cand[np.argmax(np.abs(d[cand]))])
        direction = -1.0 if at_upper[j] else 1.0
        w = lu_solve(lu, A[:, j], check_finite=False) if m else np.zeros(0)
        dzb = -direction * w
        ub_b = upper[basis]
        ratios = np.full(m, np.inf)
        relaxed = np.full(m, np.inf)
        hits_upper = np.zeros(m, dtype=bool)
        # pivots are judged relative to the column so tiny entries never enter the basis
        piv = max(tol.pivot, 1e-9 * float(np.abs(dzb).max(initial=0.0)))
        dec = dzb < -piv
        ratios[dec] = np.maximum(zb[dec], 0.0) / -dzb[dec]
        relaxed[dec] = (np.maximum(zb[dec], 0.0) + tol.feasibility) / -dzb[dec]
        inc = (dzb > piv) & np.isfinite(ub_b)
        ratios[inc] = np.maximum(ub_b[inc] - zb[inc], 0.0) / dzb[inc]
        relaxed[inc] = (np.maximum(ub_b[inc] - zb[inc], 0.0) + tol.feasibility) / dzb[inc]
        hits_upper[inc] = True
        t_flip = upper[j]
        t_min = ratios.min() if m else np.inf
        if not np.isfinite(t_min) and not np.isfinite(t_flip):
            return Status.UNBOUNDED, basis, at_upper, z, y, it
        it += 1
        if t_flip <= t_min:
            at_upper[j] = not at_upper[j]
            step = t_flip
        else:
            if bland:
                ties = np.flatnonzero(ratios <= t_min + 1e-12 * max(1.0, t_min))
            else:
                # Harris pass: any row blocking within the relaxed step, largest pivot wins
                ties = np.flatnonzero(ratios <= relaxed.min())
            if bland:
                r = int(ties[np.argmin(basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(dzb[ties]))])
            leaving = basis[r]
            at_upper[leaving] = bool(hits_upper[r])
            basis = basis.copy()
            basis[r] = j
            at_upper[j] = False
            step = ratios[r]
        if step <= 1e-12:
            streak += 1
            if streak >= tol.degenerate_streak:
                bland = True
        else:
            streak = 0


def solve_lp(lp: LinearProgram, tol: Tolerances = DEFAULT_TOLERANCES) -> SolveOutcome:
    """Solve a linear program with the two-phase bounded simplex.

    Returns
    -------
    SolveOutcome
        On optimality, ``duals[i]`` is the sensitivity of the optimal
        objective to ``b[i]`` (so ``>=`` rows carry nonnegative duals in
        a minimisation) and ``reduced_costs = c - A.T @ duals``.
    """
    m, n = lp.shape
    std = _Standard(lp)
    N = std.A.shape[1]
    at_upper = np.zeros(N, dtype=bool)
    basis = std.basis.copy()
    upper = std.upper.copy()
    iterations = 0
    if std.n_art:
        phase1_c = np.zeros(N)
        phase1_c[std.n_real:] = 1.0
        status, basis, at_upper, z, _, iterations = _simplex(std.A, std.b, phase1_c, upper, basis, at_upper, tol)
        if status is Status.ITERATION_LIMIT:
            return SolveOutcome(status, iterations=iterations)
        infeas = z[std.n_real:].sum()
        if infeas > tol.feasibility * max(1.0, np.abs(std.b).max(initial=0.0)):
            return SolveOutcome(Status.INFEASIBLE, iterations=iterations)
        # artificials stay at zero for the rest of the solve
        upper[std.n_real:] = 0.0
        at_upper[std.n_real:] = False
    status, basis, at_upper, z, y, iterations = _simplex(std.A, std.b, std.c, upper, basis, at_upper, tol, iterations)
    if status is not Status.OPTIMAL:
        return SolveOutcome(status, iterations=iterations)
    x = std.recover(z, n)
    duals = y * std.sign
    reduced = lp.c - lp.A.T @ duals
    return SolveOutcome(
        Status.OPTIMAL,
        x=x,
        objective=float(lp.c @ x),
        duals=duals,
        reduced_costs=reduced,
        iterations=iterations,
    )


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    outcome: SolveOutcome = field(compare=False)


def _most_fractional(x, mask, tol):
    frac = np.abs(x - np.round(x))
    frac = np.where(mask, frac, 0.0)
    j = int(np.argmax(frac))  # argmax returns the lowest index among ties
    if frac[j] <= tol:
        return -1
    return j


def solve_milp(
    mip: MixedIntegerProgram,
    gap_tol: float = 1e-9,
    node_limit: int = 100_000,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> SolveOutcome:
    """Best-first branch and bound over LP relaxations.

    Branches on the lowest-index most-fractional integral variable by
    tightening its bounds. ``gap_tol`` is absolute. ``nodes`` counts the
    child relaxations created, so an integral root relaxation reports 0.
    """
    lp = mip.lp
    mask = mip.integrality
    lb0 = lp.lb.copy()
    ub0 = lp.ub.copy()
    lb0[mask] = np.ceil(lb0[mask] - tol.integrality)
    ub0[mask] = np.floor(ub0[mask] + tol.integrality)

    def relax(lb, ub):
        return solve_lp(replace(lp, lb=lb, ub=ub), tol)

    root = relax(lb0, ub0)
    iterations = root.iterations
    if not root.optimal:
        return SolveOutcome(root.status, iterations=iterations)
    heap = [_Node(root.objective, 0, lb0, ub0, root)]
    seq = 1
    nodes = 0
    best: SolveOutcome | None = None
    best_obj = math.inf
    hit_limit = False
    while heap:
        node = heapq.heappop(heap)
        if node.bound >= best_obj - gap_tol:
            break
        x = node.outcome.x
        j = _most_fractional(x, mask, tol.integrality)
        if j < 0:
            best = node.outcome
            best_obj = node.bound
            continue
        if nodes >= node_limit:
            hit_limit = True
            break
        for lo, hi in ((node.lb[j], math.floor(x[j])), (math.ceil(x[j]), node.ub[j])):
            if lo > hi:
                continue
            lb = node.lb.copy()
            ub = node.ub.copy()
            lb[j], ub[j] = lo, hi
            child = relax(lb, ub)
            nodes += 1
            iterations += child.iterations
            if child.status is Status.UNBOUNDED:
                return SolveOutcome(Status.UNBOUNDED, iterations=iterations, nodes=nodes)
            if child.optimal and child.objective < best_obj - gap_tol:
                heapq.heappush(heap, _Node(child.objective, seq, lb, ub, child))
                seq += 1
    if best is None:
        status = Status.NODE_LIMIT if hit_limit else Status.INFEASIBLE
        return SolveOutcome(status, iterations=iterations, nodes=nodes)
    x = best.x.copy()
    x[mask] = np.round(x[mask])
    return SolveOutcome(
        Status.NODE_LIMIT if hit_limit else Status.OPTIMAL,
        x=x,
        objective=float(lp.c @ x),
        iterations=iterations,
        nodes=nodes,
    )


def format_lp(lp: LinearProgram, integrality: np.ndarray | None = None) -> str:
    """Human-readable dump of a (mixed-integer) linear program, for debugging."""
    m, n = lp.shape
    names = list(lp.names) if lp.names is not None else [f"x{j}" for j in range(n)]

    def expr(coefs):
        terms = [f"{v:+.10g} {names[j]}" for j, v in enumerate(coefs) if v != 0.0]
        return " ".join(terms) if terms else "0"

    lines = ["minimize", "  " + expr(lp.c), "subject to"]
    for i in range(m):
        lines.append(f"  r{i}: {expr(lp.A[i])} {lp.senses[i]} {lp.b[i]:.10g}")
    lines.append("bounds")
    for j in range(n):
        lines.append(f"  {lp.lb[j]:.10g} <= {names[j]} <= {lp.ub[j]:.10g}")
    if integrality is not None and np.any(integrality):
        lines.append("integer")
        lines.append("  " + " ".join(names[j] for j in np.flatnonzero(integrality)))
    lines.append("end")
    return "\n".join(lines) + "\n"
