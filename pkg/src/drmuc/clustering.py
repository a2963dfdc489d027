"""Scenario construction: soft-DTW k-means over daily (net load, price) series.

Every training day is an (H, 2) series. Both channels are z-scored with
training-set statistics, days are partitioned with k-means under the
soft-DTW score, and each cluster becomes one scenario whose realization
is the de-normalised centroid and whose probability is the cluster's
share of days.

Cluster assignment and barycenters use the soft-DTW *divergence*
``sdtw(x, y) - (sdtw(x, x) + sdtw(y, y)) / 2``: the raw score is not
minimised at ``x == y`` for ``gamma > 0``, the divergence is, so a
singleton cluster keeps its member as centroid and inertia is zero when
every day is its own cluster. For one-step series the two coincide with
the squared Euclidean distance.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.optimize import minimize

from .market_data import Dataset, DailyProfile

__all__ = [
    "SeriesPoint",
    "NormalizationStats",
    "ClusteringConfig",
    "Clustering",
    "Scenario",
    "ScenarioSet",
    "ElbowReport",
    "softmin",
    "sdtw",
    "sdtw_gradient",
    "sdtw_divergence",
    "sdtw_divergence_gradient",
    "sdtw_barycenter",
    "kmeans_sdtw",
    "variance_captured",
    "elbow_scan",
    "normalize",
    "build_scenario_set",
    "load_scenario_set",
    "save_scenario_set",
]


@numba.njit(cache=True)
def _softmin3(a, b, c, gamma):
    m = min(a, b, c)
    if m == np.inf:
        return np.inf
    s = math.exp(-(a - m) / gamma) + math.exp(-(b - m) / gamma) + math.exp(-(c - m) / gamma)
    return m - gamma * math.log(s)


@numba.njit(cache=True)
def _sq_dists(X, Y):
    n, m = X.shape[0], Y.shape[0]
    D = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(X.shape[1]):
                d = X[i, k] - Y[j, k]
                acc += d * d
            D[i, j] = acc
    return D


@numba.njit(cache=True)
def _forward(D, gamma):
    n, m = D.shape
    R = np.full((n + 2, m + 2), np.inf)
    R[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            R[i, j] = D[i - 1, j - 1] + _softmin3(R[i - 1, j - 1], R[i - 1, j], R[i, j - 1], gamma)
    return R


@numba.njit(cache=True)
def _backward(D, R, gamma):
    # expected alignment matrix E = d sdtw / d D
    n, m = D.shape
    Dp = np.zeros((n + 2, m + 2))
    Dp[1:n + 1, 1:m + 1] = D
    R = R.copy()
    R[n + 1, :] = -np.inf
    R[:, m + 1] = -np.inf
    R[n + 1, m + 1] = R[n, m]
    E = np.zeros((n + 2, m + 2))
    E[n + 1, m + 1] = 1.0
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            a = math.exp((R[i + 1, j] - R[i, j] - Dp[i + 1, j]) / gamma)
            b = math.exp((R[i, j + 1] - R[i, j] - Dp[i, j + 1]) / gamma)
            c = math.exp((R[i + 1, j + 1] - R[i, j] - Dp[i + 1, j + 1]) / gamma)
            E[i, j] = E[i + 1, j] * a + E[i, j + 1] * b + E[i + 1, j + 1] * c
    return E[1:n + 1, 1:m + 1]


@numba.njit(cache=True)
def _value_and_grad(X, Y, gamma):
    D = _sq_dists(X, Y)
    R = _forward(D, gamma)
    E = _backward(D, R, gamma)
    G = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(Y.shape[0]):
            for k in range(X.shape[1]):
                G[i, k] += 2.0 * E[i, j] * (X[i, k] - Y[j, k])
    return R[X.shape[0], Y.shape[0]], G


def _as_series(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("series must be a non-empty (length, channels) array")
    return np.ascontiguousarray(X)


def softmin(a: float, b: float, c: float, gamma: float) -> float:
    """Smoothed minimum ``-gamma * log(exp(-a/gamma) + exp(-b/gamma) + exp(-c/gamma))``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return float(_softmin3(float(a), float(b), float(c), float(gamma)))


def sdtw(X, Y, gamma: float = 1.0) -> float:
    """Soft-DTW score between two series with squared Euclidean ground cost."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    X, Y = _as_series(X), _as_series(Y)
    return float(_forward(_sq_dists(X, Y), float(gamma))[X.shape[0], Y.shape[0]])


def sdtw_gradient(X, Y, gamma: float = 1.0) -> np.ndarray:
    """Gradient of :func:`sdtw` with respect to ``X``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return _value_and_grad(_as_series(X), _as_series(Y), float(gamma))[1]


def sdtw_divergence(X, Y, gamma: float = 1.0) -> float:
    """``sdtw(X, Y) - (sdtw(X, X) + sdtw(Y, Y)) / 2``; nonnegative, zero at ``X == Y``."""
    return sdtw(X, Y, gamma) - 0.5 * (sdtw(X, X, gamma) + sdtw(Y, Y, gamma))


def sdtw_divergence_gradient(X, Y, gamma: float = 1.0) -> np.ndarray:
    X, Y = _as_series(X), _as_series(Y)
    # d/dX sdtw(X, X) = 2 * grad_X by symmetry, halved by the divergence
    return _value_and_grad(X, Y, float(gamma))[1] - _value_and_grad(X, X, float(gamma))[1]


@dataclass
class BarycenterResult:
    series: np.ndarray
    objective: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0


def sdtw_barycenter(members: Sequence[np.ndarray], gamma: float = 1.0, init=None,
                    max_iter: int = 100, tol: float = 1e-6, weights=None,
                    return_result: bool = False):
    """Series minimising the weighted sum of soft-DTW divergences to ``members``.

    Local descent (L-BFGS) from ``init``, which defaults to the first
    member. ``history`` in the full result holds the objective at every
    accepted step.
    """
    if len(members) == 0:
        raise ValueError("barycenter of an empty member list")
    Ys = [_as_series(y) for y in members]
    shape = Ys[0].shape
    if any(y.shape != shape for y in Ys):
        raise ValueError("all members must share one shape")
    w = np.ones(len(Ys)) if weights is None else np.asarray(weights, dtype=float)
    x0 = (Ys[0] if init is None else _as_series(init)).copy()
    self_terms = sum(wi * sdtw(y, y, gamma) for wi, y in zip(w, Ys))
    total_w = float(w.sum())

    def fun(flat):
        X = flat.reshape(x0.shape)
        val_xx, g_xx = _value_and_grad(X, X, float(gamma))
        val = -0.5 * total_w * val_xx - 0.5 * self_terms
        grad = -total_w * g_xx
        for wi, y in zip(w, Ys):
            v, g = _value_and_grad(X, y, float(gamma))
            val += wi * v
            grad = grad + wi * g
        return val, grad.ravel()

    history = [fun(x0.ravel())[0]]
    res = minimize(fun, x0.ravel(), jac=True, method="L-BFGS-B",
                   callback=lambda xk: history.append(fun(xk)[0]),
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-12})
    best = res.x.reshape(x0.shape)
    # keep the starting point when the solver could not improve on it
    if res.fun > history[0]:
        best, value = x0, history[0]
    else:
        value = float(res.fun)
    if return_result:
        return BarycenterResult(best, value, history, int(res.nit))
    return best


@dataclass(frozen=True)
class SeriesPoint:
    values: np.ndarray
    source_date: object = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or not np.all(np.isfinite(v)):
            raise ValueError("series point must be a finite (H, 2) matrix")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # per channel
    std: np.ndarray

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mean) / self.std

    def invert(self, matrix: np.ndarray) -> np.ndarray:
        return matrix * self.std + self.mean


def normalize(dataset: Dataset) -> tuple[list[SeriesPoint], NormalizationStats]:
    """Z-score both channels with statistics pooled over all days and hours."""
    mats = dataset.matrices()
    flat = mats.reshape(-1, 2)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    stats = NormalizationStats(mean, std)
    return [SeriesPoint(stats.apply(m), p.date) for m, p in zip(mats, dataset.profiles)], stats


@dataclass
class ClusteringConfig:
    gamma: float = 1.0
    seed: int = 0
    max_iter: int = 30
    tol: float = 1e-6
    barycenter_iter: int = 50
    threads: int = 1


@dataclass
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray  # (S, H, 2), normalised space
    inertia: float
    S: int
    seed: int
    gamma: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.S)


def _values(points) -> list[np.ndarray]:
    return [np.ascontiguousarray(p.values if isinstance(p, SeriesPoint) else _as_series(p)) for p in points]


def _cost_matrix(X, C, gamma, self_x, pool):
    self_c = [sdtw(c, c, gamma) for c in C]

    def row(i):
        return [sdtw(X[i], c, gamma) - 0.5 * (self_x[i] + sc) for c, sc in zip(C, self_c)]

    rows = list(pool.map(row, range(len(X)))) if pool else [row(i) for i in range(len(X))]
    return np.maximum(np.array(rows), 0.0)


def _seed_centroids(X, S, gamma, self_x, rng):
    n = len(X)
    chosen = [int(rng.integers(n))]
    dist = np.full(n, np.inf)
    while len(chosen) < S:
        c = X[chosen[-1]]
        sc = sdtw(c, c, gamma)
        d = np.array([max(sdtw(x, c, gamma) - 0.5 * (sx + sc), 0.0) for x, sx in zip(X, self_x)])
        dist = np.minimum(dist, d)
        dist[chosen] = 0.0
        total = dist.sum()
        if total > 0:
            chosen.append(int(rng.choice(n, p=dist / total)))
        else:
            rest = [i for i in range(n) if i not in chosen]
            chosen.append(int(rng.choice(rest)))
    return [X[i].copy() for i in chosen]


def kmeans_sdtw(points, S: int, config: ClusteringConfig | None = None) -> Clustering:
    """k-means under the soft-DTW divergence with k-means++ seeding.

    Deterministic for a given ``config.seed``. Stops when assignments
    repeat or after ``config.max_iter`` rounds. An empty cluster is
    re-seeded with the point farthest from its centroid.
    """
    config = config or ClusteringConfig()
    X = _values(points)
    n = len(X)
    if S < 1:
        raise ValueError("S must be at least 1")
    if S > n:
        raise ValueError(f"S={S} exceeds the number of points ({n})")
    gamma = config.gamma
    rng = np.random.default_rng(config.seed)
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        self_x = [sdtw(x, x, gamma) for x in X]
        C = _seed_centroids(X, S, gamma, self_x, rng)
        assign = None
        history = []
        it = 0
        for it in range(1, config.max_iter + 1):
            cost = _cost_matrix(X, C, gamma, self_x, pool)
            new = np.argmin(cost, axis=1)
            counts = np.bincount(new, minlength=S)
            for k in np.flatnonzero(counts == 0):
                own = cost[np.arange(n), new]
                movable = [i for i in np.argsort(-own, kind="stable") if np.bincount(new, minlength=S)[new[i]] > 1]
                i = movable[0]
                new[i] = k
                C[k] = X[i].copy()
                cost = _cost_matrix(X, C, gamma, self_x, pool)
            history.append(float(cost[np.arange(n), new].sum()))
            if assign is not None and np.array_equal(new, assign):
                break
            assign = new

            def update(k):
                members = [X[i] for i in np.flatnonzero(assign == k)]
                if len(members) == 1:
                    return members[0].copy()
                return sdtw_barycenter(members, gamma, init=C[k], max_iter=config.barycenter_iter, tol=config.tol)

            C = list(pool.map(update, range(S))) if pool else [update(k) for k in range(S)]
        cost = _cost_matrix(X, C, gamma, self_x, pool)
        inertia = float(cost[np.arange(n), assign].sum())
    finally:
        if pool:
            pool.shutdown()
    return Clustering(assign, np.stack(C), inertia, S, config.seed, gamma, history, it)


def variance_captured(points, clustering: Clustering) -> float:
    """Share of total squared Euclidean spread explained by the partition.

    ``1 - SS_within / SS_total`` on the flattened normalised series, with
    within-cluster spread measured around each cluster's Euclidean mean.
    Identical points (``SS_total == 0``) count as fully explained.
    """
    V = np.stack([v.ravel() for v in _values(points)])
    if len(V) != clustering.assignments.size:
        raise ValueError("clustering does not cover the points")
    total = float(((V - V.mean(axis=0)) ** 2).sum())
    within = 0.0
    for k in range(clustering.S):
        members = V[clustering.assignments == k]
        if len(members):
            within += float(((members - members.mean(axis=0)) ** 2).sum())
    if total <= 1e-300:
        return 1.0
    return min(max(1.0 - within / total, 0.0), 1.0)


@dataclass
class ElbowReport:
    rows: list[tuple[int, float]]
    chosen_S: int
    threshold: float
    monotone_tolerance: float = 1e-3
    clusterings: dict = field(default_factory=dict, repr=False)

    @property
    def is_monotone(self) -> bool:
        vals = [v for _, v in self.rows]
        return all(b >= a - self.monotone_tolerance for a, b in zip(vals, vals[1:]))

    def to_csv(self) -> str:
        lines = ["# variance captured: squared Euclidean on flattened z-scored series",
                 "S,variance_captured"]
        lines += [f"{s},{v:.10f}" for s, v in self.rows]
        return "\n".join(lines) + "\n"


def elbow_scan(points, S_range: Sequence[int], config: ClusteringConfig | None = None,
               threshold: float = 0.01, monotone_tolerance: float = 1e-3) -> ElbowReport:
    """Cluster for every ``S`` in ``S_range`` and pick the elbow.

    The chosen ``S`` is the last one before the marginal gain in variance
    captured first drops below ``threshold``; the full table is kept so a
    different ``S`` can be picked by hand.
    """
    S_values = sorted(set(int(s) for s in S_range))
    if not S_values:
        raise ValueError("empty S range")
    rows, fits = [], {}
    for S in S_values:
        fit = kmeans_sdtw(points, S, config)
        fits[S] = fit
        rows.append((S, variance_captured(points, fit)))
    chosen = S_values[-1]
    for (s_prev, v_prev), (s, v) in zip(rows, rows[1:]):
        if v - v_prev < threshold:
            chosen = s_prev
            break
    return ElbowReport(rows, chosen, threshold, monotone_tolerance, fits)


@dataclass(frozen=True)
class Scenario:
    xi: np.ndarray  # (H, 2): net load kW, price $/kWh
    probability: float

    @property
    def eta(self) -> np.ndarray:
        return self.xi[:, 0]

    @property
    def lam(self) -> np.ndarray:
        return self.xi[:, 1]


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[Scenario, ...]
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ValueError("scenario set is empty")
        for s in self.scenarios:
            if s.xi.shape != (self.horizon, 2):
                raise ValueError(f"scenario shape {s.xi.shape} != ({self.horizon}, 2)")
            if not s.probability > 0:
                raise ValueError("scenario probabilities must be positive")
        if abs(math.fsum(self.probabilities) - 1.0) > 1e-12:
            raise ValueError("scenario probabilities must sum to 1")

    def __len__(self):
        return len(self.scenarios)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "scenarios": [
                {"probability": s.probability, "eta": s.eta.tolist(), "lambda": s.lam.tolist()}
                for s in self.scenarios
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSet":
        try:
            scen = tuple(
                Scenario(np.column_stack([np.asarray(s["eta"], float), np.asarray(s["lambda"], float)]),
                         float(s["probability"]))
                for s in doc["scenarios"]
            )
            return cls(scen, int(doc["horizon"]))
        except KeyError as exc:
            raise ValueError(f"scenario file is missing field {exc.args[0]!r}") from None

    @classmethod
    def from_profiles(cls, profiles: Sequence[DailyProfile], probabilities=None) -> "ScenarioSet":
        """Scenario set with one scenario per profile (equal weights by default)."""
        n = len(profiles)
        probs = np.full(n, 1.0 / n) if probabilities is None else np.asarray(probabilities, float)
        return cls(tuple(Scenario(p.as_matrix(), float(q)) for p, q in zip(profiles, probs)), profiles[0].horizon)


def build_scenario_set(training: Dataset, clustering: Clustering, stats: NormalizationStats,
                       clip_prices: bool = True) -> ScenarioSet:
    """De-normalise the centroids and weight them by cluster size.

    Smoothed centroids can dip below zero on the price channel; with
    ``clip_prices`` those entries are clipped to zero so the scenario
    keeps a bounded dispatch.
    """
    n_days = len(training)
    if clustering.assignments.size != n_days:
        raise ValueError("clustering was not fitted on this training set")
    sizes = clustering.sizes
    if np.any(sizes == 0):
        raise ValueError("clustering has an empty cluster")
    scenarios = []
    for k in range(clustering.S):
        xi = stats.invert(clustering.centroids[k])
        if clip_prices:
            xi[:, 1] = np.maximum(xi[:, 1], 0.0)
        scenarios.append(Scenario(xi, sizes[k] / n_days))
    return ScenarioSet(tuple(scenarios), training.horizon)


def save_scenario_set(scenarios: ScenarioSet, path) -> None:
    from .market_data import _atomic_write

    _atomic_write(path, lambda fh: fh.write(json.dumps(scenarios.to_dict(), indent=2) + "\n"))


def load_scenario_set(path) -> ScenarioSet:
    return ScenarioSet.from_dict(json.loads(Path(path).read_text()))
