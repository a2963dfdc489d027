import numpy as np
import pytest

from drmuc.clustering import Scenario, ScenarioSet
from drmuc.dispatch import MicrogridInstance, TgrParams


def random_instance(rng, G, H, purchase_limit=np.inf):
    tgrs = tuple(
        TgrParams(
            id=f"g{g}",
            p_min=float(rng.uniform(0.5, 4.0)),
            p_max=float(rng.uniform(5.0, 12.0)),
            min_uptime=int(rng.integers(1, 3)),
            min_downtime=int(rng.integers(1, 3)),
            c_p=float(rng.uniform(0.03, 0.2)),
            c_u=float(rng.uniform(0.0, 0.3)),
            c_v=float(rng.uniform(0.0, 1.5)),
            initial_commitment=int(rng.integers(0, 2)),
        )
        for g in range(G)
    )
    return MicrogridInstance(tgrs, H, purchase_limit)


def random_scenarios(rng, S, H, eta=(-2.0, 15.0), lam=(0.01, 0.3)):
    probs = rng.dirichlet(np.ones(S))
    probs = probs / probs.sum()
    # exact unit sum after float normalisation
    probs[-1] = 1.0 - probs[:-1].sum()
    scen = tuple(
        Scenario(np.column_stack([rng.uniform(*eta, H), rng.uniform(*lam, H)]), float(p)) for p in probs
    )
    return ScenarioSet(scen, H)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def one_unit():
    return MicrogridInstance((TgrParams("g", p_min=1.0, p_max=5.0, c_p=0.10),), horizon=1)


# acceptance criteria: one summary line per criterion at the end of the run
_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _, ok_before, _ = _CRITERIA.get(number, (title, True, ""))
    _CRITERIA[number] = (title, ok_before and rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
