import itertools

import numpy as np
import pytest

from belieflab import LikelihoodModel

ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running Monte Carlo test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    num, title = mark.args
    entry = ACCEPTANCE.setdefault(num, {"title": title, "ok": True, "ran": False, "secs": 0.0})
    if rep.when == "call":
        entry["ran"] = True
        entry["secs"] += rep.duration
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        e = ACCEPTANCE[num]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status}  {e['title']}  ({e['secs']:.1f} s)")


def product_model(factor_rows, index_fns, shape, theta_star=0):
    """Model on a product hypothesis set; agent i reads factor_rows[i][index_fns[i](theta)]."""
    thetas = list(itertools.product(*[range(s) for s in shape]))
    tables = [[rows[fn(t)] for t in thetas] for rows, fn in zip(factor_rows, index_fns)]
    return LikelihoodModel(tables, theta_star)


@pytest.fixture
def pair_model():
    """2 agents, 8 hypotheses (a, b) with a in {0,1}, b in {0..3}."""
    r1 = [[0.8, 0.1, 0.1], [0.1, 0.1, 0.8]]
    r2 = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8], [0.34, 0.33, 0.33]]
    return product_model([r1, r2], [lambda t: t[0], lambda t: t[1]], (2, 4))


def ring3_model():
    """3 agents, 12 hypotheses (a, b), a in {0..2}, b in {0..3}."""
    A3 = [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]
    B4 = [[0.55 if i == j else 0.15 for j in range(4)] for i in range(4)]
    C2 = [[0.7, 0.3], [0.3, 0.7]]
    return product_model([A3, B4, C2],
                         [lambda t: t[0], lambda t: t[1], lambda t: (t[0] + t[1]) % 2], (3, 4))


@pytest.fixture
def ring3():
    return ring3_model()


def random_model(rng, n, m, alphabet=(2, 5), floor=0.02):
    tables = []
    for _ in range(n):
        s = int(rng.integers(alphabet[0], alphabet[1] + 1))
        t = rng.dirichlet(np.ones(s), size=m) + floor
        tables.append(t / t.sum(axis=1, keepdims=True))
    return LikelihoodModel(tables, int(rng.integers(m)))
