import numpy as np
import pytest

from urank.clicks import (ClickSession, LoggingPolicy, OracleClickModel, fit_pointwise_policy,
                          group_sessions, rank_by_policy, simulate_logs, simulate_sessions)
from urank.data import make_query

from conftest import one_query_dataset


def zero_w(dim=2, **kw):
    return OracleClickModel(np.zeros(dim), **kw)


def test_attention_examples():
    m = OracleClickModel(np.array([-0.5, 0.5]))
    assert m.attention_prob([0.3, 0.9], 1) == 1.0
    assert zero_w().attention_prob([0.3, 0.9], 2) == 0.5
    assert m.attention_prob([3.0, 0.0], 9) == 1.0      # w.x = -1.5 clamps the exponent


def test_relevance_examples():
    m = zero_w()
    assert m.relevance_prob(0) == pytest.approx(0.1)
    assert m.relevance_prob(4) == 1.0
    assert m.relevance_prob(2) == pytest.approx(0.28)


def test_click_examples():
    m = zero_w()
    assert m.click_prob([0.1, 0.2], 4, 1) == 1.0
    assert m.click_prob([0.1, 0.2], 0, 1) == pytest.approx(0.1)
    assert m.click_prob([0.1, 0.2], 2, 4) == pytest.approx(0.07)


@pytest.mark.parametrize("bad", [0, 11])
def test_position_out_of_range(bad):
    with pytest.raises(ValueError):
        zero_w().attention_prob([0.0, 0.0], bad)


def test_grade_out_of_range():
    with pytest.raises(ValueError):
        zero_w().relevance_prob(5)


def test_model_validation():
    with pytest.raises(ValueError):
        OracleClickModel(np.array([0.5, 0.1]))          # does not sum to 0
    with pytest.raises(ValueError):
        OracleClickModel(np.zeros(2), epsilon=1.0)


def test_sample_is_centered_and_deterministic():
    a = OracleClickModel.sample(20, eta=1.0, seed=4)
    b = OracleClickModel.sample(20, eta=1.0, seed=4)
    np.testing.assert_array_equal(a.w, b.w)
    assert abs(a.w.sum()) < 1e-12


def test_click_curve_monotone_in_position(rng):
    m = OracleClickModel.sample(6, seed=1)
    feats = rng.random((50, 6))
    A = m.attention_matrix(feats)
    assert np.all(np.diff(A, axis=1) <= 0)
    assert np.all(A[:, :1] >= A)


def test_relevance_sorted_tie_rule():
    q = make_query("q", np.zeros((3, 1)), [1, 3, 3])
    np.testing.assert_array_equal(rank_by_policy(LoggingPolicy("relevance_sorted"), q), [1, 2, 0])


def test_constant_pointwise_gives_identity():
    q = make_query("q", np.random.default_rng(0).random((4, 2)), [0, 1, 2, 3])
    policy = LoggingPolicy("pretrained_pointwise", np.zeros(2), 0.3)
    np.testing.assert_array_equal(rank_by_policy(policy, q), [0, 1, 2, 3])


def test_random_shuffle_same_seed():
    q = make_query("q", np.zeros((6, 1)), [0] * 6)
    p = LoggingPolicy("random_shuffle")
    np.testing.assert_array_equal(rank_by_policy(p, q, seed=5), rank_by_policy(p, q, seed=5))


def test_policy_validation():
    with pytest.raises(ValueError):
        LoggingPolicy("pretrained_pointwise")
    with pytest.raises(ValueError):
        LoggingPolicy("bogus")


def test_fit_pointwise_policy(small_dataset):
    policy = fit_pointwise_policy(small_dataset, label_fraction=0.5, seed=0)
    assert policy.coef.shape == (small_dataset.feature_dim,)
    again = LoggingPolicy.from_dict(policy.to_dict())
    np.testing.assert_array_equal(again.coef, policy.coef)


def test_fixed_policy_sessions_share_placement():
    ds = one_query_dataset(np.random.default_rng(0).random((4, 2)), [0, 1, 2, 3])
    sessions = simulate_sessions(zero_w(), LoggingPolicy("relevance_sorted"), ds, 3, seed=0)
    assert len(sessions) == 3
    assert len({s.placement for s in sessions}) == 1


def test_sessions_truncated_to_kmax():
    ds = one_query_dataset(np.zeros((7, 2)), [0] * 7)
    sessions = simulate_sessions(zero_w(k_max=4), LoggingPolicy("random_shuffle"), ds, 5, seed=0)
    assert all(len(s.placement) == 4 for s in sessions)


def test_epsilon_near_one_clicks_top():
    ds = one_query_dataset(np.zeros((1, 2)), [0])
    logs = simulate_logs(zero_w(epsilon=0.999), LoggingPolicy("relevance_sorted"), ds, 10_000, 0)
    assert logs["q0"].clicks.mean() == pytest.approx(0.999, abs=0.002)


def test_empirical_click_rate_matches_oracle():
    rng = np.random.default_rng(3)
    feats = rng.random((5, 4))
    ds = one_query_dataset(feats, [0, 1, 2, 3, 4])
    m = OracleClickModel.sample(4, seed=8, k_max=5)
    S = 100_000
    qlog = simulate_logs(m, LoggingPolicy("random_shuffle"), ds, S, seed=1)["q0"]
    P = m.position_ctr(ds.queries[0])
    shown = np.zeros((5, 5))
    clicked = np.zeros((5, 5))
    cols = np.broadcast_to(np.arange(5), qlog.placements.shape)
    np.add.at(shown, (qlog.placements, cols), 1)
    np.add.at(clicked, (qlog.placements, cols), qlog.clicks)
    freq = clicked / shown
    se = np.sqrt(P * (1 - P) / shown)
    # 25 cells: allow one 3-SE excursion (about 7% chance of any under the null)
    assert np.sum(np.abs(freq - P) > 3 * se) <= 1


def test_simulation_deterministic(small_dataset, small_oracle):
    p = LoggingPolicy("random_shuffle")
    a = simulate_sessions(small_oracle, p, small_dataset, 4, seed=2)
    b = simulate_sessions(small_oracle, p, small_dataset, 4, seed=2)
    c = simulate_sessions(small_oracle, p, small_dataset, 4, seed=3)
    assert a == b and a != c


def test_per_query_seeds_independent_of_other_queries(small_dataset, small_oracle):
    p = LoggingPolicy("random_shuffle")
    full = simulate_logs(small_oracle, p, small_dataset, 4, seed=2)
    first = simulate_logs(small_oracle, p, small_dataset.subset([small_dataset.queries[0].query_id]), 4, 2)
    qid = small_dataset.queries[0].query_id
    np.testing.assert_array_equal(full[qid].clicks, first[qid].clicks)


def test_session_invariants():
    with pytest.raises(ValueError):
        ClickSession("q", (0, 0), (1, 0))
    with pytest.raises(ValueError):
        ClickSession("q", (0, 1), (1, 2))
    s = ClickSession("q", (2, 0), (1, 0))
    np.testing.assert_array_equal(s.positions(3), [2, 0, 1])
    assert ClickSession.from_dict(s.to_dict()) == s


def test_group_sessions_round_trip(small_dataset, small_oracle):
    sessions = simulate_sessions(small_oracle, LoggingPolicy("random_shuffle"), small_dataset, 3, 0)
    logs = group_sessions(sessions)
    back = [s for qid, lg in logs.items() for s in lg.sessions(qid)]
    assert back == sessions
