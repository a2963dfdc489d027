"""Out-of-sample pricing of commitments and the rho sweep against the stochastic benchmark."""

from __future__ import annotations

import datetime as dt
import io
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import ClusteringConfig, build_scenario_set, kmeans_sdtw, normalize
from .dispatch import (
    CommitmentSchedule,
    MicrogridInstance,
    TgrParams,
    evaluate_q,
    first_stage_cost,
    validate_commitment,
)
from .dro import SolverConfig, SolverError, solve_rkl_muc, solve_suc
from .market_data import (
    Dataset,
    SyntheticRegime,
    _atomic_write,
    apply_surcharge,
    profiles_from_records,
    split_dataset,
    synthetic_records,
)

__all__ = [
    "DEFAULT_RHOS",
    "EvaluationResult",
    "SweepRow",
    "SweepReport",
    "out_of_sample_cost",
    "rho_sweep",
    "ShiftExperiment",
    "shift_experiment",
]

DEFAULT_RHOS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
CSV_HEADER = ("rho", "total_cost", "iterations", "wall_ms")


@dataclass
class EvaluationResult:
    """Cost of one fixed commitment replayed over a set of days.

    The first-stage cost is charged once per day since the commitment is
    a daily plan reapplied to each test day.
    """

    method: str
    rho: float
    dates: list
    first_stage: float
    dispatch_costs: np.ndarray

    @property
    def day_costs(self) -> np.ndarray:
        return self.first_stage + self.dispatch_costs

    @property
    def total(self) -> float:
        return math.fsum(self.day_costs)


def out_of_sample_cost(schedule: CommitmentSchedule, test: Dataset, instance: MicrogridInstance,
                       method: str = "", rho: float = math.nan) -> EvaluationResult:
    """Replay ``schedule`` on every test day: per-day cost ``c.x + Q(x, xi_d)``."""
    problems = validate_commitment(schedule, instance)
    if problems:
        raise ValueError("infeasible commitment: " + "; ".join(problems))
    if test.horizon != instance.horizon:
        raise ValueError("test horizon does not match the instance")
    costs = np.array([evaluate_q(schedule, p, instance).cost for p in test.profiles])
    return EvaluationResult(method, rho, test.dates, first_stage_cost(schedule, instance), costs)


@dataclass
class SweepRow:
    label: str  # "rkl-muc" or "suc"
    rho: float
    total_cost: float
    iterations: int
    wall_ms: int
    training_objective: float = math.nan
    status: str = "converged"
    error: str = ""
    schedule: CommitmentSchedule | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class SweepReport:
    rows: list[SweepRow]
    suc: SweepRow | None = None

    @property
    def all_rows(self) -> list[SweepRow]:
        return self.rows + ([self.suc] if self.suc is not None else [])

    @property
    def failures(self) -> list[SweepRow]:
        return [r for r in self.all_rows if not r.ok]

    def row_for(self, rho: float) -> SweepRow:
        for r in self.rows:
            if r.rho == rho:
                return r
        raise KeyError(rho)

    def to_csv(self, timing: bool = True) -> str:
        """``rho,total_cost,iterations,wall_ms``; the benchmark row has ``rho = suc``.

        Failed rows keep their place with an empty cost. ``timing=False``
        blanks the wall-clock column for byte-level comparisons.
        """
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        for r in self.all_rows:
            rho = "suc" if r.label == "suc" else repr(float(r.rho))
            cost = repr(float(r.total_cost)) if r.ok else ""
            wall = str(r.wall_ms) if timing else ""
            buf.write(f"{rho},{cost},{r.iterations},{wall}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        _atomic_write(path, lambda fh: fh.write(self.to_csv()))

    def write_svg(self, path, title: str = "Out-of-sample cost") -> None:
        """Line chart of total out-of-sample cost against rho, with SUC as a second series."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        ok = [r for r in self.rows if r.ok]
        with matplotlib.rc_context({"svg.hashsalt": "drmuc", "svg.fonttype": "path"}):
            fig, ax = plt.subplots(figsize=(6.0, 4.0))
            ax.plot([r.rho for r in ok], [r.total_cost for r in ok], "o-", label="RKL-MUC")
            if self.suc is not None and self.suc.ok:
                xs = [r.rho for r in self.rows] or [0.0]
                ax.plot([min(xs), max(xs)], [self.suc.total_cost] * 2, "s--", label="SUC")
            ax.set_xlabel("KL radius rho")
            ax.set_ylabel("total out-of-sample cost ($)")
            ax.set_title(title)
            ax.grid(True, alpha=0.3)
            ax.legend()
            fig.tight_layout()
            buf = io.StringIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
            plt.close(fig)
        _atomic_write(path, lambda fh: fh.write(buf.getvalue()))


def _run(label, rho, solve, test, instance) -> SweepRow:
    t0 = time.perf_counter()
    try:
        sol, trace = solve()
        ev = out_of_sample_cost(sol.schedule, test, instance, label, rho)
    except (SolverError, ValueError, ArithmeticError) as exc:
        ms = int(round(1000 * (time.perf_counter() - t0)))
        return SweepRow(label, rho, math.nan, 0, ms, status="failed", error=f"{type(exc).__name__}: {exc}")
    ms = int(round(1000 * (time.perf_counter() - t0)))
    err = "" if sol.converged else f"solver stopped with status {sol.status}"
    return SweepRow(label, rho, ev.total, sol.iterations, ms, sol.objective, sol.status, err, sol.schedule)


def rho_sweep(instance: MicrogridInstance, scenario_set, rhos: Sequence[float], test: Dataset,
              config: SolverConfig | None = None, include_suc: bool = True) -> SweepReport:
    """Solve for each rho (in the given order), price each commitment on ``test``, add the SUC row.

    A failing solve is recorded on its row and the sweep carries on.
    """
    if not len(rhos):
        raise ValueError("rhos must be non-empty")
    config = config or SolverConfig()
    rows = [_run("rkl-muc", float(r), lambda r=r: solve_rkl_muc(instance, scenario_set, float(r), config), test, instance)
            for r in rhos]
    suc = _run("suc", 0.0, lambda: solve_suc(instance, scenario_set, config), test, instance) if include_suc else None
    return SweepReport(rows, suc)


@dataclass
class ShiftExperiment:
    """Train on one synthetic regime, test on a perturbed one.

    The defaults are a desk-scale version of a month-long case study:
    an eight-period day, one thermal unit and a handful of scenarios.
    """

    horizon: int = 8
    n_scenarios: int = 4
    train_start: dt.date = dt.date(2023, 1, 1)
    train_days: int = 60
    test_days: int = 30
    surcharge_mwh: float = 100.0
    train_regime: SyntheticRegime = field(default_factory=SyntheticRegime)
    test_regime: SyntheticRegime = field(default_factory=lambda: SyntheticRegime(
        evening_load=2.1, spike_prob=0.45, spike_mwh=140.0, cloud_prob=0.6))
    instance: MicrogridInstance = field(default_factory=lambda: MicrogridInstance(
        (TgrParams("tgr1", p_min=0.5, p_max=3.0, min_uptime=2, min_downtime=2,
                   c_p=0.13, c_u=0.01, c_v=0.05),), horizon=8))
    rhos: tuple = DEFAULT_RHOS
    gamma: float = 1.0


def shift_experiment(seed: int, setup: ShiftExperiment | None = None,
                     config: SolverConfig | None = None) -> SweepReport:
    """One seeded run of the train/test distribution-shift sweep."""
    setup = setup or ShiftExperiment()
    if setup.instance.horizon != setup.horizon:
        raise ValueError("experiment horizon does not match the instance")
    split = setup.train_start + dt.timedelta(days=setup.train_days)
    end = split + dt.timedelta(days=setup.test_days - 1)
    train_recs = synthetic_records(setup.train_start, split - dt.timedelta(days=1), seed, setup.horizon,
                                   setup.train_regime)
    test_recs = synthetic_records(split, end, seed + 10_000, setup.horizon, setup.test_regime)
    data = apply_surcharge(profiles_from_records(train_recs + test_recs, setup.horizon), setup.surcharge_mwh)
    train, test = split_dataset(data, split)
    points, stats = normalize(train)
    clustering = kmeans_sdtw(points, setup.n_scenarios, ClusteringConfig(gamma=setup.gamma, seed=seed))
    scenarios = build_scenario_set(train, clustering, stats)
    return rho_sweep(setup.instance, scenarios, setup.rhos, test, config)
