import numpy as np
import pytest

from urank.bounds import (bound_terms, is_monotone, lemma_grid_check, order_consistent,
                          random_monotone_snapshot, verify_bounds)
from urank.matching import km_match
from urank.ranker import positions_from_order


def test_zero_table_all_terms_zero():
    t = bound_terms([1.0, -2.0, 0.5], [1, 3, 2], np.zeros((3, 3)), 1.0, 5.0)
    assert t["regret"] == t["l_prime"] == t["l_double_prime"] == t["c2"] == 0.0
    rep = verify_bounds([{"scores": [1.0, -2.0, 0.5], "positions": [1, 3, 2],
                          "table": np.zeros((3, 3)).tolist(), "sigma": 1.0, "score_bound": 5.0}])
    assert rep.ok and rep.min_slack_1 == 0.0 and rep.min_slack_2 == 0.0


@pytest.mark.parametrize("consistent", [True, False])
def test_random_monotone_instances(consistent):
    rng = np.random.default_rng(0 if consistent else 1)
    snaps = [random_monotone_snapshot(rng, int(rng.integers(2, 9)), 8, consistent=consistent)
             for _ in range(500)]
    rep = verify_bounds(snaps)
    assert rep.n_violations_loss == 0 and rep.n_violations_regret == 0
    assert rep.n_checked_loss == 500
    if consistent:
        assert rep.n_checked_regret == 500


def test_optimal_scores_zero_regret():
    # separable table u(i, k) = a_i * d_k; scores in the order of a are optimal
    a = np.array([0.3, 0.9, 0.5, 0.1])
    d = 1.0 / np.arange(1, 5)
    table = np.outer(a, d)
    s = a * 4
    pos = positions_from_order(np.argsort(-s))
    t = bound_terms(s, pos, table, 1.0, 5.0)
    assert t["regret"] == pytest.approx(0.0, abs=1e-12)
    assert t["l_double_prime"] - t["regret"] >= 0
    assert km_match(table).total_weight == pytest.approx(table[np.arange(4), pos - 1].sum())


def test_nonmonotone_tables_are_skipped_and_counted():
    snap = {"scores": [0.5, -0.5], "positions": [1, 2], "table": [[0.1, 0.5], [0.2, 0.1]],
            "sigma": 1.0, "score_bound": 5.0}
    rep = verify_bounds([snap])
    assert rep.n_skipped_nonmonotone == 1 and rep.n_checked_loss == 0
    assert rep.records[0].monotone is False


def test_scores_beyond_bound_rejected():
    with pytest.raises(ValueError):
        verify_bounds([{"scores": [6.0, 0.0], "positions": [1, 2], "table": [[1, 0], [1, 0]],
                        "sigma": 1.0, "score_bound": 5.0}])


def test_helpers():
    assert is_monotone([[3, 2, 2], [1, 0, 0]])
    assert not is_monotone([[1, 2]])
    assert order_consistent([0.9, 0.1], [1, 2])
    assert not order_consistent([0.1, 0.9], [1, 2])
    assert not order_consistent([0.5, 0.5], [1, 2])


def test_lemma_grid_passes():
    out = lemma_grid_check(1.0, 5.0, 10_000)
    assert out["lemma1_violations"] == out["lemma2_violations"] == out["lemma3_violations"] == 0


def test_natural_log_would_break_the_indicator_bound():
    # the pairwise term must use log base 2: at x = 0 the natural log gives ln 2 < 1 = 1[x <= 0]
    x = np.linspace(-5, 5, 10_001)
    natural = np.logaddexp(0.0, -x)
    assert np.any(natural < (x <= 0))
    assert np.logaddexp(0.0, 0.0) < 1.0


def test_report_serializes():
    rng = np.random.default_rng(3)
    rep = verify_bounds([random_monotone_snapshot(rng, 4, 4) for _ in range(3)])
    d = rep.to_dict()
    assert d["ok"] and len(d["records"]) == 3
    assert {"regret", "l_double_prime", "l_prime", "c1", "c2", "slack_1", "slack_2"} <= set(d["records"][0])
