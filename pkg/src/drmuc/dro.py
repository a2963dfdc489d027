"""KL-divergence distributionally robust unit commitment.

The inner worst case over the KL ball is dualised into

    min_{x, mu, zeta >= 0}  c.x + mu + rho*zeta + sum_w pi_w * zeta * exp((Q_w(x) - mu)/zeta - 1)

and solved by Benders decomposition: a mixed-integer master over the
commitment, ``mu``, ``zeta`` and a surrogate ``theta`` for the exponential
term, and per-scenario dispatch subproblems whose costs and commitment
sensitivities give the cuts. A plain stochastic benchmark (expected cost
under the nominal distribution) is solved with the L-shaped method.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .clustering import ScenarioSet
from .dispatch import (
    CommitmentSchedule,
    InfeasibleDispatch,
    MicrogridInstance,
    evaluate_q,
    first_stage_cost,
    hourly_dispatch,
    validate_commitment,
)
from .optkernel import LinearProgram, MixedIntegerProgram, Status, format_lp, solve_milp

__all__ = [
    "AmbiguityParams",
    "SolverConfig",
    "Cut",
    "GuardRow",
    "guard_row",
    "MasterSolution",
    "IterationRecord",
    "SolveTrace",
    "WorstCaseDistribution",
    "UCSolution",
    "SolverError",
    "GuardViolation",
    "kl_divergence",
    "kbar",
    "rbar",
    "r_total",
    "build_cut",
    "recourse_upper_bound",
    "solve_master",
    "dual_minimizer",
    "worst_case_expectation",
    "solve_rkl_muc",
    "solve_suc",
    "evaluate_commitment",
]

# below this divergence tolerance the dual optimum escapes to zeta -> inf
RHO_SUC_THRESHOLD = 1e-12


class SolverError(RuntimeError):
    """The master problem failed or the solution is not trustworthy."""


class GuardViolation(SolverError):
    """An exponent ``(Q - mu) / zeta`` exceeded the computational bound."""


@dataclass(frozen=True)
class AmbiguityParams:
    rho: float
    k_max: float = 50.0
    zeta_floor: float = 1e-9

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.k_max <= 0 or self.zeta_floor <= 0:
            raise ValueError("k_max and zeta_floor must be positive")


@dataclass
class SolverConfig:
    tol: float = 1e-5
    max_iter: int = 500
    k_max: float = 50.0
    zeta_floor: float = 1e-9
    exact_anchor_cuts: bool = True
    commitment_guard: bool = True  # False: the single constant row Q^M - mu <= k_max*zeta
    gap_tol: float = 1e-9
    node_limit: int = 100_000
    threads: int = 1
    check_bounds: bool = True
    dump_lp: object = None  # callable receiving the text of every master problem


def kl_divergence(p, q) -> float:
    """``sum p log(p/q)`` over the support of ``p``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must share one support")
    pos = p > 0
    if np.any(q[pos] <= 0):
        raise ValueError("p puts mass where q has none")
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))


def kbar(Q, mu, zeta, zeta_floor: float = 1e-9):
    """Scaled excess ``(Q - mu) / zeta``."""
    if zeta < zeta_floor:
        raise ValueError(f"zeta={zeta} below floor {zeta_floor}")
    return (np.asarray(Q, dtype=float) - mu) / zeta


def rbar(Q, mu, zeta, zeta_floor: float = 1e-9):
    """Per-scenario term ``zeta * exp(kbar - 1)``."""
    return zeta * np.exp(kbar(Q, mu, zeta, zeta_floor) - 1.0)


def r_total(Q, pi, mu, zeta, zeta_floor: float = 1e-9) -> float:
    """Probability-weighted sum of :func:`rbar` over scenarios."""
    return float(np.asarray(pi, dtype=float) @ rbar(Q, mu, zeta, zeta_floor))


@dataclass
class Cut:
    """Affine under-estimator of ``r_total`` in ``(u, v, mu, zeta)``.

    ``alpha`` has shape (G, H, 2): coefficients on ``u`` in ``[..., 0]``
    and on ``v`` in ``[..., 1]`` (always zero, ``v`` does not reach the
    dispatch).
    """

    alpha: np.ndarray
    beta: float
    gamma: float
    anchor_u: np.ndarray
    anchor_v: np.ndarray
    anchor_mu: float
    anchor_zeta: float
    anchor_value: float
    intercept: float

    def evaluate(self, u, mu, zeta, v=None) -> float:
        val = self.intercept + float(np.sum(self.alpha[..., 0] * u)) + self.beta * mu + self.gamma * zeta
        if v is not None:
            val += float(np.sum(self.alpha[..., 1] * v))
        return val

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.alpha ** 2) + self.beta ** 2 + self.gamma ** 2))


@dataclass(frozen=True)
class GuardRow:
    """Safeguard ``mu + k_max*zeta >= value + sum(grad * (u - anchor_u))``.

    ``value`` is the largest scenario cost at the anchor commitment and
    ``grad`` a subgradient of that maximum. Each scenario cost is convex
    in the relaxed ``u``, so the right-hand side under-estimates
    ``max_w Q(x, xi_w)`` and the row never removes a point whose exponents
    all stay below ``k_max``; at the anchor itself it is exact.
    """

    value: float
    grad: np.ndarray
    anchor_u: np.ndarray


def guard_row(schedule: CommitmentSchedule, Q, dQ) -> GuardRow:
    """Guard row at ``schedule`` from its scenario costs ``Q`` and sensitivities ``dQ`` (S, G, H)."""
    Q = np.asarray(Q, dtype=float)
    w = int(np.argmax(Q))
    # headroom so rounding in Q never pushes an exponent past the bound
    value = float(Q[w]) + 1e-9 * max(1.0, abs(float(Q[w])))
    return GuardRow(value, np.asarray(dQ[w], dtype=float).copy(), np.asarray(schedule.u, dtype=float).copy())


def build_cut(schedule: CommitmentSchedule, mu: float, zeta: float, Q, dQ, pi,
              k_max: float | None = None, zeta_floor: float = 1e-9) -> Cut:
    """First-order expansion of ``r_total`` at ``(schedule, mu, zeta)``.

    Parameters
    ----------
    Q : array (S,)
        Dispatch cost per scenario at the anchor.
    dQ : array (S, G, H)
        Subgradient of each ``Q`` with respect to ``u``.
    pi : array (S,)
        Nominal probabilities.

    Each partial derivative multiplies its own variable:
    ``d/du = sum pi e^(K-1) dQ``, ``d/dmu = -sum pi e^(K-1)``,
    ``d/dzeta = sum pi (1 - K) e^(K-1)``.
    """
    Q = np.asarray(Q, dtype=float)
    dQ = np.asarray(dQ, dtype=float)
    pi = np.asarray(pi, dtype=float)
    K = kbar(Q, mu, zeta, zeta_floor)
    if k_max is not None and K.max() > k_max * (1 + 1e-9) + 1e-9:
        raise GuardViolation(f"max exponent {K.max():.6g} exceeds bound {k_max}")
    E = np.exp(K - 1.0)
    w = pi * E
    alpha_u = np.tensordot(w, dQ, axes=1)
    alpha = np.stack([alpha_u, np.zeros_like(alpha_u)], axis=-1)
    beta = -float(w.sum())
    gamma = float(np.sum(w * (1.0 - K)))
    value = float(zeta * w.sum())
    # value - alpha.x_j - beta mu_j - gamma zeta_j collapses to sum pi E Q - alpha.x_j
    intercept = float(w @ Q) - float(np.sum(alpha_u * schedule.u))
    return Cut(alpha, beta, gamma, schedule.u.copy(), schedule.v.copy(), float(mu), float(zeta), value, intercept)


@dataclass
class WorstCaseDistribution:
    probabilities: np.ndarray
    expectation: float
    kl_to_nominal: float
    tilt: float = 0.0


def worst_case_expectation(Q, pi, rho: float) -> tuple[float, WorstCaseDistribution]:
    """Maximise ``sum p Q`` over distributions within KL ``rho`` of ``pi``.

    The maximiser is the exponential tilt ``p ∝ pi exp(t Q)``; ``t`` is
    found by bisection so the KL constraint binds. When ``rho`` reaches
    ``-log pi(argmax Q)`` the tilt runs off to infinity and the answer is
    the nominal mass renormalised over the maximisers.
    """
    Q = np.asarray(Q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if Q.shape != pi.shape or Q.ndim != 1 or Q.size == 0:
        raise ValueError("Q and pi must be vectors of one length")
    if np.any(pi <= 0) or abs(math.fsum(pi) - 1.0) > 1e-9:
        raise ValueError("pi must be a strictly positive distribution")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    qmax = Q.max()
    logpi = np.log(pi)
    shifted = Q - qmax

    def tilt(t):
        logits = logpi + t * shifted
        lse = logsumexp(logits)
        p = np.exp(logits - lse)
        kl = float(np.sum(p * (t * shifted - lse)))
        return p, max(kl, 0.0)

    top = Q == qmax
    kl_limit = -math.log(math.fsum(pi[top]))
    if rho == 0 or np.all(top):
        p, t = pi.copy(), 0.0
    elif rho >= kl_limit:
        p = np.where(top, pi, 0.0)
        p, t = p / p.sum(), math.inf
    else:
        lo, hi = 0.0, 1.0 / max(qmax - Q.min(), 1e-300)
        while tilt(hi)[1] <= rho:
            lo, hi = hi, 2.0 * hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if tilt(mid)[1] <= rho:
                lo = mid
            else:
                hi = mid
        p, t = tilt(lo)[0], lo
    p = p / math.fsum(p)
    value = float(p @ Q)
    return value, WorstCaseDistribution(p, value, kl_divergence(p, pi), t)


def recourse_upper_bound(instance: MicrogridInstance, scenario_set: ScenarioSet, max_enum_units: int = 10) -> float:
    """An upper bound on ``Q(x, xi)`` over all commitments and scenarios.

    Hour by hour, takes the most expensive dispatch over every subset of
    committed units (exact per hour, ignoring inter-hour coupling). For
    many units the cheaper bound ``sum c_p p_min + max(lambda, c_p) * max(eta, 0)``
    per hour is used instead. Subsets that cannot serve the load under a
    purchase cap are skipped, since the master never selects them.
    """
    G = instance.n_units
    p_min, p_max, c_p = instance.column("p_min"), instance.column("p_max"), instance.column("c_p")
    best = -math.inf
    for s in scenario_set.scenarios:
        total = 0.0
        for h in range(instance.horizon):
            eta, lam = s.eta[h], s.lam[h]
            if G <= max_enum_units:
                worst = -math.inf
                for bits in itertools.product((0.0, 1.0), repeat=G):
                    u = np.array(bits)
                    try:
                        d = hourly_dispatch(u * p_min, u * p_max, c_p, eta, lam, instance.purchase_limit)
                    except InfeasibleDispatch:
                        continue
                    worst = max(worst, d.cost)
                if worst == -math.inf:
                    raise SolverError(f"net load {eta} exceeds total capacity")
            else:
                worst = float(c_p @ p_min) + max(lam, float(c_p.max())) * max(eta, 0.0)
            total += worst
        best = max(best, total)
    return best


def _recourse_lower_bound(instance: MicrogridInstance, scenario_set: ScenarioSet, expected: bool = True) -> float:
    """Lower bound on ``Q``: only forced purchases at negative prices can make it negative."""
    if not math.isfinite(instance.purchase_limit):
        return 0.0
    lows = np.array([sum(min(l, 0.0) * instance.purchase_limit for l in s.lam) for s in scenario_set.scenarios])
    return float(scenario_set.probabilities @ lows) if expected else float(lows.min())


def peak_net_load(instance: MicrogridInstance, scenario_set: ScenarioSet) -> np.ndarray | None:
    """Per-hour largest net load over the scenarios when purchases are capped, else ``None``."""
    if math.isfinite(instance.purchase_limit):
        return np.max([s.eta for s in scenario_set.scenarios], axis=0)
    return None


def _commitment_rows(instance: MicrogridInstance, n_vars: int, peak: np.ndarray | None = None):
    """Start-up, minimum-uptime and minimum-downtime rows over ``[u, v, ...]``.

    Windows that only restate the variable bounds (``nu == h``) are left out.
    With a purchase cap, ``peak`` adds the induced capacity rows
    ``sum_g p_max u[g, h] >= peak[h] - limit`` so every scenario stays
    dispatchable (surplus is curtailed, so shortage is the only failure).
    """
    G, H = instance.n_units, instance.horizon
    rows, senses, rhs = [], [], []
    if peak is not None:
        p_max = instance.column("p_max")
        for h in range(H):
            need = float(peak[h]) - instance.purchase_limit
            if need <= 0:
                continue
            if need > p_max.sum() * (1 + 1e-12):
                raise SolverError(f"net load {peak[h]} in hour {h + 1} exceeds total capacity")
            r = np.zeros(n_vars)
            r[np.arange(G) * H + h] = p_max
            rows.append(r), senses.append(">="), rhs.append(need)

    def ui(g, h):  # h is 1-based
        return g * H + (h - 1)

    def vi(g, h):
        return G * H + g * H + (h - 1)

    for g, tgr in enumerate(instance.tgrs):
        u0 = float(tgr.initial_commitment)
        for h in range(1, H + 1):
            # v[h] - u[h] + u[h-1] >= 0
            r = np.zeros(n_vars)
            r[vi(g, h)] = 1.0
            r[ui(g, h)] -= 1.0
            const = 0.0
            if h > 1:
                r[ui(g, h - 1)] += 1.0
            else:
                const = u0
            rows.append(r), senses.append(">="), rhs.append(-const)
            for nu in range(h + 1, min(h - 1 + tgr.min_uptime, H) + 1):
                # u[h] - u[h-1] - u[nu] <= 0
                r = np.zeros(n_vars)
                r[ui(g, h)] += 1.0
                r[ui(g, nu)] -= 1.0
                if h > 1:
                    r[ui(g, h - 1)] -= 1.0
                    b = 0.0
                else:
                    b = u0
                rows.append(r), senses.append("<="), rhs.append(b)
            for nu in range(h + 1, min(h - 1 + tgr.min_downtime, H) + 1):
                # u[h-1] - u[h] + u[nu] <= 1
                r = np.zeros(n_vars)
                r[ui(g, h)] -= 1.0
                r[ui(g, nu)] += 1.0
                if h > 1:
                    r[ui(g, h - 1)] += 1.0
                    b = 1.0
                else:
                    b = 1.0 - u0
                rows.append(r), senses.append("<="), rhs.append(b)
    return rows, senses, rhs


def _first_stage_costs(instance: MicrogridInstance) -> np.ndarray:
    H = instance.horizon
    return np.concatenate([np.repeat(instance.column("c_u"), H), np.repeat(instance.column("c_v"), H)])


def _split_schedule(x: np.ndarray, instance: MicrogridInstance) -> CommitmentSchedule:
    G, H = instance.n_units, instance.horizon
    # + 0.0 clears negative zeros left by rounding
    u = (np.round(x[:G * H]) + 0.0).reshape(G, H)
    v = (np.round(x[G * H:2 * G * H]) + 0.0).reshape(G, H)
    return CommitmentSchedule(u, v)


def _scaled_row(row: np.ndarray, rhs: float) -> tuple[np.ndarray, float]:
    s = max(1.0, float(np.abs(row).max()))
    return row / s, rhs / s


@dataclass
class MasterSolution:
    schedule: CommitmentSchedule
    mu: float
    zeta: float
    theta: float
    objective: float
    first_stage_cost: float
    nodes: int = 0


@dataclass(frozen=True)
class MasterBox:
    mu_lo: float
    mu_hi: float
    zeta_lo: float
    zeta_hi: float

    @classmethod
    def default(cls, q_max: float, rho: float, zeta_floor: float, q_min: float = 0.0) -> "MasterBox":
        # zeta* <= (Q^M - Q_min) / rho because the dual value stays below max Q;
        # mu* >= min Q - zeta*, and mu > max Q only raises the objective
        zeta_hi = (q_max - min(q_min, 0.0)) / max(rho, 1e-6) + 1.0
        return cls(min(q_min, 0.0) - zeta_hi, q_max, zeta_floor, zeta_hi)

    def contains(self, mu: float, zeta: float) -> bool:
        return self.mu_lo <= mu <= self.mu_hi and self.zeta_lo <= zeta <= self.zeta_hi


def solve_master(cuts: Sequence[Cut], instance: MicrogridInstance, rho: float, q_max: float,
                 params: AmbiguityParams | None = None, box: MasterBox | None = None,
                 config: SolverConfig | None = None, peak: np.ndarray | None = None,
                 guards: Sequence[GuardRow] | None = None) -> MasterSolution:
    """Solve the cut-based master MILP.

    ``min c.x + mu + rho*zeta + theta`` over feasible commitments, with
    ``theta`` above every cut, ``theta >= 0`` and a linear safeguard
    keeping every exponent bounded: the constant row
    ``q_max - mu <= k_max * zeta`` when ``guards`` is None, otherwise one
    row per :class:`GuardRow`. ``peak`` is the per-hour peak net load from
    :func:`peak_net_load`.
    """
    params = params or AmbiguityParams(rho)
    config = config or SolverConfig()
    box = box or MasterBox.default(q_max, rho, params.zeta_floor)
    G, H = instance.n_units, instance.horizon
    n_bin = 2 * G * H
    i_mu, i_zeta, i_theta = n_bin, n_bin + 1, n_bin + 2
    n = n_bin + 3
    c = np.concatenate([_first_stage_costs(instance), [1.0, rho, 1.0]])
    rows, senses, rhs = _commitment_rows(instance, n, peak)
    if guards is None:
        guard = np.zeros(n)
        guard[i_mu], guard[i_zeta] = -1.0, -params.k_max
        rows.append(guard), senses.append("<="), rhs.append(-q_max)
    for g in guards or ():
        r = np.zeros(n)
        r[:G * H] = -g.grad.ravel()
        r[i_mu], r[i_zeta] = 1.0, params.k_max
        r, b = _scaled_row(r, g.value - float(np.sum(g.grad * g.anchor_u)))
        rows.append(r), senses.append(">="), rhs.append(b)
    for cut in cuts:
        r = np.zeros(n)
        r[:G * H] = -cut.alpha[..., 0].ravel()
        r[G * H:n_bin] = -cut.alpha[..., 1].ravel()
        r[i_mu], r[i_zeta], r[i_theta] = -cut.beta, -cut.gamma, 1.0
        r, b = _scaled_row(r, cut.intercept)
        rows.append(r), senses.append(">="), rhs.append(b)
    lb = np.concatenate([np.zeros(n_bin), [box.mu_lo, max(box.zeta_lo, params.zeta_floor), 0.0]])
    ub = np.concatenate([np.ones(n_bin), [box.mu_hi, box.zeta_hi, np.inf]])
    names = [f"u[{g},{h + 1}]" for g in range(G) for h in range(H)]
    names += [f"v[{g},{h + 1}]" for g in range(G) for h in range(H)]
    names += ["mu", "zeta", "theta"]
    lp = LinearProgram(c, np.array(rows).reshape(len(rows), n), senses, rhs, lb, ub, names)
    mask = np.zeros(n, dtype=bool)
    mask[:n_bin] = True
    if config.dump_lp is not None:
        config.dump_lp(format_lp(lp, mask))
    out = solve_milp(MixedIntegerProgram(lp, mask), gap_tol=config.gap_tol, node_limit=config.node_limit)
    if out.status is not Status.OPTIMAL:
        raise SolverError(f"master problem {out.status.value}")
    x = out.x
    sched = _split_schedule(x, instance)
    return MasterSolution(
        sched, float(x[i_mu]), float(x[i_zeta]), float(x[i_theta]), out.objective,
        first_stage_cost(sched, instance), out.nodes,
    )


@dataclass
class IterationRecord:
    nu: int
    lb: float
    ub: float
    mp_objective: float
    candidate_value: float
    mu: float
    zeta: float
    max_kbar: float
    cut_norm: float
    wall_time: float
    guard_rounds: int = 0  # master re-solves after adding guard rows


@dataclass
class SolveTrace:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    q_max: float = math.nan
    tol: float = math.nan
    cuts: list = field(default_factory=list, repr=False)  # cut set of the last master solve
    guards: list | None = field(default=None, repr=False)  # guard rows of the last master solve
    box: "MasterBox | None" = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def lb(self) -> float:
        return self.records[-1].lb if self.records else -math.inf

    @property
    def ub(self) -> float:
        return self.records[-1].ub if self.records else math.inf


@dataclass
class UCSolution:
    method: str
    rho: float
    schedule: CommitmentSchedule
    objective: float
    first_stage_cost: float
    recourse: float
    lb: float
    ub: float
    status: str
    scenario_costs: np.ndarray
    worst_case: WorstCaseDistribution
    mu: float = math.nan
    zeta: float = math.nan
    trace: SolveTrace | None = field(default=None, repr=False)
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return self.trace.iterations if self.trace else 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rho": self.rho,
            "objective": self.objective,
            "lb": self.lb,
            "ub": self.ub,
            "iterations": self.iterations,
            "status": self.status,
            "first_stage_cost": self.first_stage_cost,
            "schedule": self.schedule.to_dict(),
            "worst_case_distribution": {
                "probabilities": self.worst_case.probabilities.tolist(),
                "expectation": self.worst_case.expectation,
                "kl_to_nominal": self.worst_case.kl_to_nominal,
            },
            "timing": {"wall_s": self.wall_time},
        }


def _evaluate_scenarios(schedule, scenario_set, instance, pool=None):
    def one(s):
        res = evaluate_q(schedule, s.xi, instance)
        return res.cost, res.phi

    results = list(pool.map(one, scenario_set.scenarios)) if pool else [one(s) for s in scenario_set.scenarios]
    Q = np.array([r[0] for r in results])
    dQ = np.stack([r[1] for r in results])
    return Q, dQ


def dual_minimizer(Q, pi, rho: float, q_max: float, k_max: float, zeta_floor: float = 1e-9,
                   zeta_max: float = math.inf):
    """Minimiser ``(mu, zeta)`` of ``mu + rho*zeta + r_total`` for fixed ``Q`` under the safeguard.

    Without the safeguard the optimal ``zeta`` is the reciprocal of the
    worst-case tilt and ``mu = zeta * log(sum pi exp(Q/zeta)) - zeta``.
    If that point violates ``q_max - mu <= k_max * zeta`` (always the case
    when the tilt is unbounded and the infimum sits at ``zeta -> 0``), the
    restricted problem is solved as a one-dimensional search over
    ``log zeta`` with ``mu`` set to its best value on the feasible side.
    ``None`` when ``rho = 0`` (minimiser at infinity).
    """
    Q = np.asarray(Q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if rho <= 0:
        return None
    logpi = np.log(pi)

    def mu_free(zeta):
        return zeta * float(logsumexp(logpi + Q / zeta)) - zeta

    _, wc = worst_case_expectation(Q, pi, rho)
    if 0.0 < wc.tilt < math.inf:
        zeta = max(1.0 / wc.tilt, zeta_floor)
        mu = mu_free(zeta)
        if q_max - mu <= k_max * zeta:
            return mu, zeta

    def mu_at(zeta):
        return max(mu_free(zeta), q_max - k_max * zeta)

    def objective(log_zeta):
        zeta = math.exp(log_zeta)
        mu = mu_at(zeta)
        return mu + rho * zeta + r_total(Q, pi, mu, zeta, zeta_floor)

    hi = min(zeta_max, max(q_max - float(Q.min()), 1.0) / rho + 1.0)
    res = minimize_scalar(objective, bounds=(math.log(zeta_floor), math.log(hi)), method="bounded",
                          options={"xatol": 1e-12})
    zeta = math.exp(res.x)
    return mu_at(zeta), zeta


def evaluate_commitment(schedule: CommitmentSchedule, instance: MicrogridInstance,
                        scenario_set: ScenarioSet, rho: float) -> tuple[float, WorstCaseDistribution, np.ndarray]:
    """Exact robust objective ``c.x + max_P E_P[Q(x, xi)]`` of a fixed commitment."""
    Q, _ = _evaluate_scenarios(schedule, scenario_set, instance)
    value, wc = worst_case_expectation(Q, scenario_set.probabilities, rho)
    return first_stage_cost(schedule, instance) + value, wc, Q


def solve_rkl_muc(instance: MicrogridInstance, scenario_set: ScenarioSet, rho: float,
                  config: SolverConfig | None = None) -> tuple[UCSolution, SolveTrace]:
    """Benders decomposition of the dualised robust problem.

    Alternates master solves and per-scenario dispatches until the best
    upper bound is within ``config.tol`` of the master objective. The
    exponent safeguard is enforced per commitment: a master candidate
    whose ``(max_w Q - mu) / zeta`` exceeds ``k_max`` is not dispatched
    further; a guard row at that commitment is added and the master is
    re-solved. The all-off commitment seeds the first guard row when it
    is feasible. The reported ``objective`` is the exact robust cost of
    the incumbent commitment. ``rho`` below 1e-12 is handed to
    :func:`solve_suc`.
    """
    config = config or SolverConfig()
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho < RHO_SUC_THRESHOLD:
        sol, trace = solve_suc(instance, scenario_set, config)
        sol.rho = rho
        return sol, trace
    if scenario_set.horizon != instance.horizon:
        raise ValueError("scenario horizon does not match the instance")
    t0 = time.perf_counter()
    params = AmbiguityParams(rho, config.k_max, config.zeta_floor)
    pi = scenario_set.probabilities
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        peak = peak_net_load(instance, scenario_set)
        q_max = recourse_upper_bound(instance, scenario_set)
        # headroom so rounding in Q never pushes an exponent past the guard
        q_max += 1e-9 * max(1.0, abs(q_max))
        box = MasterBox.default(q_max, rho, params.zeta_floor, _recourse_lower_bound(instance, scenario_set, expected=False))
        trace = SolveTrace(q_max=q_max, tol=config.tol, box=box)
        cuts: list[Cut] = trace.cuts
        cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

        def evaluate(schedule):
            key = schedule.u.tobytes()
            if key not in cache:
                cache[key] = _evaluate_scenarios(schedule, scenario_set, instance, pool)
            return cache[key]

        guards = None
        if config.commitment_guard:
            guards = trace.guards = []
            off = CommitmentSchedule.off(instance)
            if not validate_commitment(off, instance) and (peak is None or np.all(peak <= instance.purchase_limit)):
                guards.append(guard_row(off, *evaluate(off)))
        guarded = set()
        lb, ub = -math.inf, math.inf
        incumbent = None
        for nu in range(1, config.max_iter + 1):
            rounds = 0
            while True:
                mp = solve_master(cuts, instance, rho, q_max, params, box, config, peak, guards)
                Q, dQ = evaluate(mp.schedule)
                zeta = max(mp.zeta, params.zeta_floor)
                top = q_max if guards is None else guard_row(mp.schedule, Q, dQ).value
                key = mp.schedule.u.tobytes()
                if guards is None or key in guarded or top - mp.mu <= params.k_max * zeta:
                    break
                guards.append(guard_row(mp.schedule, Q, dQ))
                guarded.add(key)
                rounds += 1
            lb = max(lb, mp.objective)
            # absorb LP feasibility slack on the safeguard row
            mp = replace(mp, mu=max(mp.mu, top - params.k_max * zeta), zeta=zeta)
            kb = float(kbar(Q, mp.mu, zeta, params.zeta_floor).max())
            cut = build_cut(mp.schedule, mp.mu, zeta, Q, dQ, pi, params.k_max, params.zeta_floor)
            new_cuts = [cut]
            value = mp.first_stage_cost + mp.mu + rho * zeta + cut.anchor_value
            if value < ub:
                ub = value
                incumbent = (mp, Q)
            if config.exact_anchor_cuts:
                # tangent at the exact inner optimum for this commitment: flat in (mu, zeta)
                anchor = dual_minimizer(Q, pi, rho, top, params.k_max, params.zeta_floor, box.zeta_hi)
                if anchor is not None and box.contains(*anchor) and top - anchor[0] <= params.k_max * anchor[1] * (1 + 1e-12):
                    extra = build_cut(mp.schedule, anchor[0], anchor[1], Q, dQ, pi, params.k_max, params.zeta_floor)
                    new_cuts.append(extra)
                    v2 = mp.first_stage_cost + anchor[0] + rho * anchor[1] + extra.anchor_value
                    if v2 < ub:
                        ub = v2
                        incumbent = (replace(mp, mu=anchor[0], zeta=anchor[1]), Q)
            trace.records.append(IterationRecord(nu, lb, ub, mp.objective, value, mp.mu, zeta, kb,
                                                 cut.norm, time.perf_counter() - t0, rounds))
            if ub - lb <= config.tol:
                trace.status = "converged"
                break
            cuts.extend(new_cuts)
        else:
            trace.status = "max-iter"
    finally:
        if pool:
            pool.shutdown()
    mp, Q = incumbent
    if config.check_bounds and trace.status == "converged":
        _check_box(mp, box)
    recourse, wc = worst_case_expectation(Q, pi, rho)
    sol = UCSolution(
        "rkl-muc", rho, mp.schedule, mp.first_stage_cost + recourse, mp.first_stage_cost, recourse,
        lb, ub, trace.status, Q, wc, mp.mu, mp.zeta, trace, time.perf_counter() - t0,
    )
    return sol, trace


def _check_box(mp: MasterSolution, box: MasterBox) -> None:
    # mu <= Q^M is a valid bound, not an artificial one
    eps = 1e-9 * max(1.0, box.zeta_hi)
    active = []
    if mp.mu <= box.mu_lo + eps:
        active.append(f"mu at lower box bound {box.mu_lo:.6g}")
    if mp.zeta >= box.zeta_hi - eps:
        active.append(f"zeta at upper box bound {box.zeta_hi:.6g}")
    if active:
        raise SolverError("artificial master bound active at termination: " + "; ".join(active))


def solve_suc(instance: MicrogridInstance, scenario_set: ScenarioSet,
              config: SolverConfig | None = None) -> tuple[UCSolution, SolveTrace]:
    """Nominal-expectation benchmark by the L-shaped method (one aggregated cut per round)."""
    config = config or SolverConfig()
    if scenario_set.horizon != instance.horizon:
        raise ValueError("scenario horizon does not match the instance")
    t0 = time.perf_counter()
    G, H = instance.n_units, instance.horizon
    n_bin = 2 * G * H
    n = n_bin + 1
    pi = scenario_set.probabilities
    c = np.concatenate([_first_stage_costs(instance), [1.0]])
    base_rows, base_senses, base_rhs = _commitment_rows(instance, n, peak_net_load(instance, scenario_set))
    lb_theta = _recourse_lower_bound(instance, scenario_set)
    mask = np.zeros(n, dtype=bool)
    mask[:n_bin] = True
    lbv = np.concatenate([np.zeros(n_bin), [lb_theta]])
    ubv = np.concatenate([np.ones(n_bin), [np.inf]])
    cut_rows, cut_rhs = [], []
    trace = SolveTrace(q_max=math.nan, tol=config.tol)
    lb, ub = -math.inf, math.inf
    incumbent = None
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for nu in range(1, config.max_iter + 1):
            rows = base_rows + cut_rows
            lp = LinearProgram(c, np.array(rows).reshape(len(rows), n), base_senses + [">="] * len(cut_rows),
                               base_rhs + cut_rhs, lbv, ubv)
            if config.dump_lp is not None:
                config.dump_lp(format_lp(lp, mask))
            out = solve_milp(MixedIntegerProgram(lp, mask), gap_tol=config.gap_tol, node_limit=config.node_limit)
            if out.status is not Status.OPTIMAL:
                raise SolverError(f"L-shaped master {out.status.value}")
            lb = max(lb, out.objective)
            sched = _split_schedule(out.x, instance)
            fsc = first_stage_cost(sched, instance)
            Q, dQ = _evaluate_scenarios(sched, scenario_set, instance, pool)
            expected = float(pi @ Q)
            value = fsc + expected
            if value < ub:
                ub = value
                incumbent = (sched, Q, fsc)
            g = np.tensordot(pi, dQ, axes=1)
            r = np.zeros(n)
            r[:G * H] = -g.ravel()
            r[-1] = 1.0
            r, b = _scaled_row(r, expected - float(np.sum(g * sched.u)))
            trace.records.append(IterationRecord(nu, lb, ub, out.objective, value, math.nan, math.nan,
                                                 math.nan, float(np.linalg.norm(g)), time.perf_counter() - t0))
            if ub - lb <= config.tol:
                trace.status = "converged"
                break
            cut_rows.append(r)
            cut_rhs.append(b)
        else:
            trace.status = "max-iter"
    finally:
        if pool:
            pool.shutdown()
    sched, Q, fsc = incumbent
    recourse, wc = worst_case_expectation(Q, pi, 0.0)
    sol = UCSolution("suc", 0.0, sched, fsc + recourse, fsc, recourse, lb, ub, trace.status, Q, wc,
                     trace=trace, wall_time=time.perf_counter() - t0)
    return sol, trace
