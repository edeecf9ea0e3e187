import numpy as np
import pytest

from urank.clicks import OracleClickModel
from urank.data import generate_synthetic, make_query, Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    return generate_synthetic(12, 6, 5, 4, seed=3)


@pytest.fixture
def small_oracle():
    return OracleClickModel.sample(5, eta=1.0, seed=11, k_max=6)


def one_query_dataset(features, relevance, utility_values=None, y_max=4, qid="q0"):
    features = np.asarray(features, dtype=float)
    q = make_query(qid, features, relevance, utility_values)
    return Dataset((q,), features.shape[1], y_max)


def numeric_grad(f, params, eps=1e-6):
    """Central differences of scalar f() w.r.t. every entry of every array in params (in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            hi = f()
            p[idx] = old - eps
            lo = f()
            p[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def rel_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
