import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import Bounds, LinearConstraint, milp

from drmuc.optkernel import (
    DEFAULT_TOLERANCES,
    LinearProgram,
    MixedIntegerProgram,
    Status,
    format_lp,
    solve_lp,
    solve_milp,
)


def random_lp(rng, n, m, bounded=True):
    A = rng.integers(-5, 6, (m, n)).astype(float)
    c = rng.integers(-5, 6, n).astype(float)
    lb = -rng.uniform(0, 2, n) * rng.integers(0, 2, n)
    ub = lb + rng.uniform(3, 6, n) if bounded else np.full(n, np.inf)
    x0 = lb + rng.uniform(0, 3, n)  # feasible by construction
    senses = list(rng.choice(["<=", ">=", "="], m, p=[0.45, 0.45, 0.1]))
    slack = rng.uniform(0, 2, m)
    b = A @ x0 + np.array([s if t == "<=" else -s if t == ">=" else 0.0 for s, t in zip(slack, senses)])
    return LinearProgram(c, A, senses, b, lb, ub)


def vertex_oracle(lp):
    """Minimum over all basic feasible points of a bounded LP."""
    n = lp.c.size
    rows = [(lp.A[i], lp.b[i]) for i in range(lp.A.shape[0])]
    rows += [(np.eye(n)[j], lp.lb[j]) for j in range(n)] + [(np.eye(n)[j], lp.ub[j]) for j in range(n)]
    best = np.inf
    for combo in itertools.combinations(range(len(rows)), n):
        M = np.array([rows[k][0] for k in combo])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, np.array([rows[k][1] for k in combo]))
        if np.any(x < lp.lb - 1e-9) or np.any(x > lp.ub + 1e-9):
            continue
        ax = lp.A @ x
        ok = all(
            (s == "<=" and v <= r + 1e-9) or (s == ">=" and v >= r - 1e-9) or (s == "=" and abs(v - r) <= 1e-9)
            for v, r, s in zip(ax, lp.b, lp.senses)
        )
        if ok:
            best = min(best, float(lp.c @ x))
    return best


def highs(lp, integrality=None):
    cons = LinearConstraint(lp.A, [r if s != "<=" else -np.inf for r, s in zip(lp.b, lp.senses)],
                            [r if s != ">=" else np.inf for r, s in zip(lp.b, lp.senses)])
    res = milp(lp.c, constraints=cons, bounds=Bounds(lp.lb, lp.ub),
               integrality=None if integrality is None else integrality.astype(int))
    return res


def check_optimality_certificate(lp, out, tol=1e-7):
    x, y, d = out.x, out.duals, out.reduced_costs
    scale = 1.0 + np.abs(lp.c).max()
    ax = lp.A @ x
    for v, r, s, yi in zip(ax, lp.b, lp.senses, y):
        if s == "<=":
            assert v <= r + 1e-8 and yi <= tol * scale
        elif s == ">=":
            assert v >= r - 1e-8 and yi >= -tol * scale
        else:
            assert abs(v - r) <= 1e-8
        if s != "=" and abs(yi) > tol * scale:
            assert abs(v - r) <= 1e-7
    assert np.allclose(d, lp.c - lp.A.T @ y, atol=1e-9 * scale)
    at_lo = np.isclose(x, lp.lb, atol=1e-9)
    at_hi = np.isclose(x, lp.ub, atol=1e-9)
    free = ~at_lo & ~at_hi
    assert np.all(np.abs(d[free]) <= tol * scale)
    assert np.all(d[at_lo & ~at_hi] >= -tol * scale)
    assert np.all(d[at_hi & ~at_lo] <= tol * scale)
    # strong duality with the bound multipliers folded into d
    assert out.objective == pytest.approx(float(lp.b @ y + d @ x), rel=1e-7, abs=1e-7)


def test_tolerances_pinned():
    assert DEFAULT_TOLERANCES.feasibility == 1e-8
    assert DEFAULT_TOLERANCES.optimality == 1e-7


def test_single_bound_row():
    out = solve_lp(LinearProgram([1.0], [[1.0]], [">="], [3.0]))
    assert out.status is Status.OPTIMAL
    assert out.x[0] == pytest.approx(3.0)
    assert out.duals[0] == pytest.approx(1.0)


def test_unbounded():
    out = solve_lp(LinearProgram([-1.0], np.zeros((0, 1)), [], []))
    assert out.status is Status.UNBOUNDED


def test_infeasible():
    out = solve_lp(LinearProgram([1.0], [[1.0], [1.0]], ["<=", ">="], [1.0, 2.0]))
    assert out.status is Status.INFEASIBLE


def test_free_and_negative_bounds():
    lp = LinearProgram([1.0, 1.0], [[1.0, -1.0]], ["="], [2.0], lb=[-np.inf, -3.0], ub=[np.inf, 5.0])
    out = solve_lp(lp)
    assert out.objective == pytest.approx(-4.0)
    assert out.x == pytest.approx([-1.0, -3.0])


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        LinearProgram([1.0, 2.0], [[1.0]], ["<="], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([np.nan], [[1.0]], ["<="], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["<"], [1.0])
    with pytest.raises(ValueError):
        MixedIntegerProgram(LinearProgram([1.0], [[1.0]], ["<="], [1.0]), [True])


def test_matches_vertex_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(150):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        lp = random_lp(rng, n, m)
        out = solve_lp(lp)
        oracle = vertex_oracle(lp)
        assert out.status is Status.OPTIMAL
        assert out.objective == pytest.approx(oracle, rel=1e-7, abs=1e-7)
        check_optimality_certificate(lp, out)


def test_matches_highs_up_to_twenty_vars():
    rng = np.random.default_rng(11)
    for _ in range(60):
        n, m = int(rng.integers(5, 21)), int(rng.integers(3, 15))
        lp = random_lp(rng, n, m, bounded=bool(rng.integers(0, 2)))
        out = solve_lp(lp)
        ref = highs(lp)
        if ref.status == 3:
            assert out.status is Status.UNBOUNDED
            continue
        assert ref.status == 0
        assert out.status is Status.OPTIMAL
        assert out.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-7)
        check_optimality_certificate(lp, out)


def test_degenerate_problem_terminates():
    # many redundant rows through one vertex
    A = np.array([[1.0, 1.0]] * 6 + [[1.0, 0.0], [0.0, 1.0]])
    lp = LinearProgram([-1.0, -1.0], A, ["<="] * 8, [1.0] * 8)
    out = solve_lp(lp)
    assert out.objective == pytest.approx(-1.0)


def test_knapsack():
    lp = LinearProgram([-3.0, -2.0], [[1.0, 1.0]], ["<="], [1.0], ub=[1.0, 1.0])
    out = solve_milp(MixedIntegerProgram(lp, [True, True]))
    assert -out.objective == pytest.approx(3.0)
    assert out.x.tolist() == [1.0, 0.0]


def test_integral_relaxation_needs_no_branching():
    lp = LinearProgram([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], [">=", ">="], [1.0, 0.0], ub=[3.0, 3.0])
    out = solve_milp(MixedIntegerProgram(lp, [True, True]))
    assert out.nodes == 0
    assert out.objective == pytest.approx(1.0)


def random_binary_milp(rng, n=10, m=4, n_cont=2):
    A = rng.integers(-4, 6, (m, n + n_cont)).astype(float)
    b = A[:, :n].clip(min=0).sum(axis=1) * rng.uniform(0.3, 0.7, m) + 1.0
    c = np.concatenate([rng.integers(-9, 4, n), rng.integers(-2, 3, n_cont)]).astype(float)
    ub = np.concatenate([np.ones(n), np.full(n_cont, 2.0)])
    lp = LinearProgram(c, A, ["<="] * m, b, ub=ub)
    return MixedIntegerProgram(lp, np.arange(n + n_cont) < n)


def enumeration_oracle(mip):
    n_int = int(mip.integrality.sum())
    best = np.inf
    for bits in itertools.product((0.0, 1.0), repeat=n_int):
        lb, ub = mip.lp.lb.copy(), mip.lp.ub.copy()
        lb[mip.integrality] = ub[mip.integrality] = bits
        sub = LinearProgram(mip.lp.c, mip.lp.A, mip.lp.senses, mip.lp.b, lb, ub)
        res = highs(sub)
        if res.status == 0:
            best = min(best, res.fun)
    return best


def test_milp_matches_exhaustive_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(15):
        mip = random_binary_milp(rng)
        out = solve_milp(mip)
        assert out.status is Status.OPTIMAL
        assert out.objective == pytest.approx(enumeration_oracle(mip), abs=1e-9)
        assert np.all(out.x[mip.integrality] == np.round(out.x[mip.integrality]))
        relax = solve_lp(mip.lp)
        assert out.objective >= relax.objective - 1e-9


def test_milp_is_deterministic():
    mip = random_binary_milp(np.random.default_rng(5))
    a, b = solve_milp(mip), solve_milp(mip)
    assert np.array_equal(a.x, b.x) and a.nodes == b.nodes and a.objective == b.objective


def test_node_limit_reported():
    mip = random_binary_milp(np.random.default_rng(8), n=12)
    out = solve_milp(mip, node_limit=1)
    assert out.status in (Status.NODE_LIMIT, Status.OPTIMAL)
    if out.status is Status.NODE_LIMIT:
        assert out.nodes >= 1


def test_format_lp_lists_every_variable():
    lp = LinearProgram([1.0, -2.0], [[1.0, 1.0]], ["<="], [4.0], names=["a", "b"])
    text = format_lp(lp, np.array([True, False]))
    assert "a" in text and "b" in text and "<=" in text


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_lp_weak_duality_property(seed):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, int(rng.integers(1, 7)), int(rng.integers(1, 6)))
    out = solve_lp(lp)
    assert out.status is Status.OPTIMAL
    check_optimality_certificate(lp, out)
