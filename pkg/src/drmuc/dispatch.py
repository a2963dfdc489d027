"""Second-stage economic dispatch and its sensitivity to the commitment.

The recourse problem decouples by hour: committed thermal units must run
at least at their minimum output, the remaining net load is served in
merit order from the units' flexible ranges and the grid, and any surplus
is spilled at no cost. ``subproblem_lp`` builds the same problem for the
LP kernel, which is what the merit-order path is checked against.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .optkernel import LinearProgram, SolveOutcome, solve_lp

__all__ = [
    "TgrParams",
    "MicrogridInstance",
    "CommitmentSchedule",
    "HourlyDispatch",
    "DispatchResult",
    "InfeasibleDispatch",
    "validate_commitment",
    "hourly_dispatch",
    "evaluate_q",
    "dispatch_sensitivity",
    "first_stage_cost",
    "enumerate_schedules",
    "subproblem_lp",
    "solve_subproblem_lp",
    "load_instance",
    "save_instance",
]


class InfeasibleDispatch(ValueError):
    """Net load exceeds committed capacity plus the purchase limit."""


@dataclass(frozen=True)
class TgrParams:
    """A thermal generation resource. Powers in kW, ``c_p`` in $/kWh."""

    id: str
    p_min: float
    p_max: float
    min_uptime: int = 1
    min_downtime: int = 1
    c_p: float = 0.0
    c_u: float = 0.0
    c_v: float = 0.0
    initial_commitment: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_min <= self.p_max:
            raise ValueError(f"{self.id}: need 0 <= p_min <= p_max")
        if self.min_uptime < 1 or self.min_downtime < 1:
            raise ValueError(f"{self.id}: minimum up/down times must be >= 1")
        if min(self.c_p, self.c_u, self.c_v) < 0:
            raise ValueError(f"{self.id}: costs must be nonnegative")
        if self.initial_commitment not in (0, 1):
            raise ValueError(f"{self.id}: initial_commitment must be 0 or 1")


@dataclass(frozen=True)
class MicrogridInstance:
    tgrs: tuple[TgrParams, ...]
    horizon: int = 24
    purchase_limit: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "tgrs", tuple(self.tgrs))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.purchase_limit < 0:
            raise ValueError("purchase_limit must be nonnegative")

    @property
    def n_units(self) -> int:
        return len(self.tgrs)

    def column(self, attr: str) -> np.ndarray:
        return np.array([getattr(t, attr) for t in self.tgrs], dtype=float)

    def scaled(self, factor: float) -> "MicrogridInstance":
        """Copy with every cost coefficient multiplied by ``factor``."""
        tgrs = [
            TgrParams(t.id, t.p_min, t.p_max, t.min_uptime, t.min_downtime,
                      t.c_p * factor, t.c_u * factor, t.c_v * factor, t.initial_commitment)
            for t in self.tgrs
        ]
        return MicrogridInstance(tuple(tgrs), self.horizon, self.purchase_limit)


@dataclass
class CommitmentSchedule:
    """On/off status ``u`` and start-up indicator ``v``, both (G, H)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must have the same shape")

    @classmethod
    def off(cls, instance: MicrogridInstance) -> "CommitmentSchedule":
        shape = (instance.n_units, instance.horizon)
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_status(cls, u, instance: MicrogridInstance) -> "CommitmentSchedule":
        """Schedule with the cheapest start-up indicators consistent with ``u``."""
        u = np.atleast_2d(np.asarray(u, dtype=float)).reshape(instance.n_units, instance.horizon)
        prev = np.column_stack([instance.column("initial_commitment"), u[:, :-1]])
        return cls(u, np.maximum(u - prev, 0.0))

    def to_dict(self) -> dict:
        return {"u": self.u.astype(int).tolist(), "v": self.v.astype(int).tolist()}


@dataclass
class HourlyDispatch:
    p_g: np.ndarray
    p_b: float
    p_s: float
    cost: float
    price: float


@dataclass
class DispatchResult:
    p_g: np.ndarray
    p_b: np.ndarray
    p_s: np.ndarray
    cost: float
    balance_price: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    phi: np.ndarray = field(repr=False)


def validate_commitment(schedule: CommitmentSchedule, instance: MicrogridInstance) -> list[str]:
    """List every violated first-stage constraint; an empty list means feasible.

    Hours are reported 1-based, matching the usual statement of the
    start-up, minimum-uptime and minimum-downtime constraints.
    """
    G, H = instance.n_units, instance.horizon
    u, v = schedule.u, schedule.v
    if u.shape != (G, H):
        return [f"schedule shape {u.shape} does not match ({G}, {H})"]
    problems = []
    tol = 1e-6
    for name, arr in (("u", u), ("v", v)):
        off = np.abs(arr - np.round(arr)) > tol
        off |= (np.round(arr) < 0) | (np.round(arr) > 1)
        for g, h in zip(*np.nonzero(off)):
            problems.append(f"{name}[{g},{h + 1}] is not binary")
    for g, tgr in enumerate(instance.tgrs):
        status = np.concatenate([[tgr.initial_commitment], u[g]])
        for h in range(1, H + 1):
            rise = status[h] - status[h - 1]
            if v[g, h - 1] < rise - tol:
                problems.append(f"start-up: v[{g},{h}] < u[{g},{h}] - u[{g},{h - 1}]")
            for nu in range(h, min(h - 1 + tgr.min_uptime, H) + 1):
                if rise > status[nu] + tol:
                    problems.append(f"min-uptime: unit {g} started at hour {h} is off at hour {nu}")
            for nu in range(h, min(h - 1 + tgr.min_downtime, H) + 1):
                if -rise > 1 - status[nu] + tol:
                    problems.append(f"min-downtime: unit {g} stopped at hour {h} is on at hour {nu}")
    return problems


def hourly_dispatch(p_lo, p_hi, c_p, eta_h: float, lambda_h: float, purchase_limit: float = math.inf) -> HourlyDispatch:
    """Merit-order dispatch for one hour.

    Parameters
    ----------
    p_lo, p_hi : array_like
        Output bounds per unit, already multiplied by the commitment
        status (so an uncommitted unit has ``0, 0``).
    c_p : array_like
        Linear fuel cost per unit.
    eta_h, lambda_h : float
        Net load and grid price.
    purchase_limit : float
        Upper bound on grid purchases; ``inf`` for none.

    Returns
    -------
    HourlyDispatch
        Optimal outputs plus the balance price, an optimal dual of the
        balance row. When ``c_p == lambda_h`` the units are used before
        the grid.
    """
    p_lo = np.asarray(p_lo, dtype=float)
    p_hi = np.asarray(p_hi, dtype=float)
    c_p = np.asarray(c_p, dtype=float)
    if lambda_h < 0 and not math.isfinite(purchase_limit):
        raise ValueError("negative price with unlimited purchases makes the dispatch unbounded")
    p_g = p_lo.copy()
    p_b = purchase_limit if lambda_h < 0 else 0.0
    residual = eta_h - p_g.sum() - p_b
    if residual <= 0.0:
        cost = float(c_p @ p_g + lambda_h * p_b)
        return HourlyDispatch(p_g, p_b, -residual, cost, 0.0)
    # (cost, tie rank, index): units before the grid on equal cost
    segments = [(c_p[g], 0, g) for g in range(p_g.size) if p_hi[g] > p_lo[g]]
    if lambda_h >= 0:
        segments.append((lambda_h, 1, -1))
    segments.sort()
    price = 0.0
    for cost_k, _, g in segments:
        cap = p_hi[g] - p_lo[g] if g >= 0 else purchase_limit
        take = min(cap, residual)
        if g >= 0:
            p_g[g] += take
        else:
            p_b += take
        residual -= take
        price = cost_k
        if residual <= 0.0:
            break
    if residual > 1e-9 * max(1.0, abs(eta_h)):
        raise InfeasibleDispatch(f"net load {eta_h} exceeds available supply")
    cost = float(c_p @ p_g + lambda_h * p_b)
    return HourlyDispatch(p_g, p_b, 0.0, cost, price)


def _xi_arrays(xi):
    """Accept a DailyProfile-like object, an (H, 2) array or an (eta, lambda) pair."""
    if hasattr(xi, "eta") and hasattr(xi, "lam"):
        return np.asarray(xi.eta, dtype=float), np.asarray(xi.lam, dtype=float)
    arr = np.asarray(xi, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 0], arr[:, 1]
    eta, lam = xi
    return np.asarray(eta, dtype=float), np.asarray(lam, dtype=float)


def evaluate_q(schedule: CommitmentSchedule, xi, instance: MicrogridInstance) -> DispatchResult:
    """Optimal dispatch cost ``Q(x, xi)`` and its dual information.

    ``schedule.u`` may be fractional, in which case the units' bounds are
    ``u * p_min`` and ``u * p_max`` (the continuous relaxation the cuts
    are built on).
    """
    eta, lam = _xi_arrays(xi)
    G, H = instance.n_units, instance.horizon
    if eta.size != H or lam.size != H:
        raise ValueError(f"realization length {eta.size} does not match horizon {H}")
    u = schedule.u
    p_min, p_max, c_p = instance.column("p_min"), instance.column("p_max"), instance.column("c_p")
    p_g = np.zeros((G, H))
    p_b = np.zeros(H)
    p_s = np.zeros(H)
    price = np.zeros(H)
    cost = 0.0
    for h in range(H):
        hd = hourly_dispatch(u[:, h] * p_min, u[:, h] * p_max, c_p, eta[h], lam[h], instance.purchase_limit)
        p_g[:, h] = hd.p_g
        p_b[h], p_s[h], price[h] = hd.p_b, hd.p_s, hd.price
        cost += hd.cost
    gap = c_p[:, None] - price[None, :]
    lower = np.maximum(gap, 0.0)
    upper = np.maximum(-gap, 0.0)
    phi = lower * p_min[:, None] - upper * p_max[:, None]
    return DispatchResult(p_g, p_b, p_s, cost, price, lower, upper, phi)


def dispatch_sensitivity(schedule: CommitmentSchedule, xi, instance: MicrogridInstance) -> np.ndarray:
    """Subgradient of ``Q`` with respect to the (relaxed) commitment ``u``, shape (G, H).

    The start-up indicators do not enter the dispatch, so their
    sensitivity is identically zero and is not returned.
    """
    return evaluate_q(schedule, xi, instance).phi


def first_stage_cost(schedule: CommitmentSchedule, instance: MicrogridInstance) -> float:
    c_u = instance.column("c_u")
    c_v = instance.column("c_v")
    return float(c_u @ schedule.u.sum(axis=1) + c_v @ schedule.v.sum(axis=1))


def enumerate_schedules(instance: MicrogridInstance) -> Iterator[CommitmentSchedule]:
    """Every feasible commitment with cost-minimal start-up indicators.

    Exponential in ``G * H``; meant for brute-force checks on tiny instances.
    """
    G, H = instance.n_units, instance.horizon
    for bits in itertools.product((0.0, 1.0), repeat=G * H):
        sched = CommitmentSchedule.from_status(np.array(bits), instance)
        if not validate_commitment(sched, instance):
            yield sched


def subproblem_lp(schedule: CommitmentSchedule, xi, instance: MicrogridInstance) -> LinearProgram:
    """The full recourse LP with the commitment kept as explicit rows.

    Variables are ordered ``p_g`` (G*H, row-major), ``p_b`` (H), ``p_s``
    (H). Rows: ``G*H`` lower output limits (``p_g >= u p_min``), ``G*H``
    upper output limits (``p_g <= u p_max``), then ``H`` balance rows.
    """
    eta, lam = _xi_arrays(xi)
    G, H = instance.n_units, instance.horizon
    u = schedule.u
    p_min, p_max, c_p = instance.column("p_min"), instance.column("p_max"), instance.column("c_p")
    n = G * H + 2 * H
    c = np.concatenate([np.repeat(c_p, H), lam, np.zeros(H)])
    A = np.zeros((2 * G * H + H, n))
    b = np.zeros(2 * G * H + H)
    senses = [">="] * (G * H) + ["<="] * (G * H) + ["="] * H
    for g in range(G):
        for h in range(H):
            k = g * H + h
            A[k, k] = 1.0
            b[k] = u[g, h] * p_min[g]
            A[G * H + k, k] = 1.0
            b[G * H + k] = u[g, h] * p_max[g]
            A[2 * G * H + h, k] = 1.0
    for h in range(H):
        row = 2 * G * H + h
        A[row, G * H + h] = 1.0
        A[row, G * H + H + h] = -1.0
        b[row] = eta[h]
    ub = np.full(n, np.inf)
    if math.isfinite(instance.purchase_limit):
        ub[G * H:G * H + H] = instance.purchase_limit
    lb = np.zeros(n)
    # p_g has no sign bound beyond its output-limit rows
    lb[:G * H] = -np.inf
    return LinearProgram(c, A, senses, b, lb, ub)


def solve_subproblem_lp(schedule: CommitmentSchedule, xi, instance: MicrogridInstance) -> tuple[SolveOutcome, np.ndarray]:
    """Solve the recourse LP with the simplex kernel.

    Returns the outcome and the sensitivity of the optimal cost to ``u``
    recovered from the output-limit duals, shape (G, H).
    """
    G, H = instance.n_units, instance.horizon
    out = solve_lp(subproblem_lp(schedule, xi, instance))
    if not out.optimal:
        return out, np.full((G, H), np.nan)
    lo = out.duals[:G * H].reshape(G, H)
    hi = out.duals[G * H:2 * G * H].reshape(G, H)
    phi = lo * instance.column("p_min")[:, None] + hi * instance.column("p_max")[:, None]
    return out, phi


def load_instance(path) -> MicrogridInstance:
    """Read an instance from its JSON config."""
    doc = json.loads(Path(path).read_text())
    return instance_from_dict(doc)


def instance_from_dict(doc: dict) -> MicrogridInstance:
    try:
        tgrs = tuple(
            TgrParams(
                id=str(t["id"]),
                p_min=float(t["p_min_kw"]),
                p_max=float(t["p_max_kw"]),
                min_uptime=int(t.get("min_up_h", 1)),
                min_downtime=int(t.get("min_down_h", 1)),
                c_p=float(t.get("c_p_per_kwh", 0.0)),
                c_u=float(t.get("c_u_per_h", 0.0)),
                c_v=float(t.get("c_v", 0.0)),
                initial_commitment=int(t.get("initial_commitment", 0)),
            )
            for t in doc.get("tgrs", [])
        )
        limit = doc.get("purchase_limit_kw")
        return MicrogridInstance(tgrs, int(doc.get("horizon", 24)), math.inf if limit is None else float(limit))
    except KeyError as exc:
        raise ValueError(f"instance is missing field {exc.args[0]!r}") from None


def instance_to_dict(instance: MicrogridInstance) -> dict:
    doc = {"horizon": instance.horizon}
    if math.isfinite(instance.purchase_limit):
        doc["purchase_limit_kw"] = instance.purchase_limit
    doc["tgrs"] = [
        {
            "id": t.id,
            "p_min_kw": t.p_min,
            "p_max_kw": t.p_max,
            "min_up_h": t.min_uptime,
            "min_down_h": t.min_downtime,
            "c_p_per_kwh": t.c_p,
            "c_u_per_h": t.c_u,
            "c_v": t.c_v,
            "initial_commitment": t.initial_commitment,
        }
        for t in instance.tgrs
    ]
    return doc


def save_instance(instance: MicrogridInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2) + "\n")


def schedule_from_sequence(rows: Sequence[Sequence[float]], instance: MicrogridInstance) -> CommitmentSchedule:
    return CommitmentSchedule.from_status(np.asarray(rows, dtype=float), instance)
