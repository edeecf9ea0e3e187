import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urank.data import (Dataset, LetorParseError, check_permutation, generate_synthetic,
                        make_query, normalize_features, parse_letor, truncate_to_top_k,
                        write_letor)


def _write(tmp_path, text):
    p = tmp_path / "d.txt"
    p.write_text(text)
    return p


def test_parse_single_line_maps_fields(tmp_path):
    ds = parse_letor(_write(tmp_path, "2 qid:7 1:0.5 3:0.25\n"), 3)
    q = ds.query("7")
    assert len(ds) == 1 and len(q) == 1
    assert q.items[0].relevance == 2
    np.testing.assert_array_equal(q.items[0].features, [0.5, 0.0, 0.25])
    assert q.items[0].utility_value == 1.0


def test_parse_empty_file(tmp_path):
    ds = parse_letor(_write(tmp_path, ""), 4)
    assert len(ds) == 0 and ds.feature_dim == 4


def test_parse_merges_noncontiguous_qids(tmp_path):
    ds = parse_letor(_write(tmp_path, "1 qid:1 1:1\n0 qid:2 1:2\n3 qid:1 1:3\n"), 1)
    assert [q.query_id for q in ds] == ["1", "2"]
    assert len(ds.query("1")) == 2 and len(ds.query("2")) == 1
    np.testing.assert_array_equal(ds.query("1").relevance, [1, 3])


def test_parse_comments_and_utility_token(tmp_path):
    ds = parse_letor(_write(tmp_path, "# header\n1 qid:a 2:0.5 b:2.5 # doc=x\n"), 2)
    it = ds.query("a").items[0]
    np.testing.assert_array_equal(it.features, [0.0, 0.5])
    assert it.utility_value == 2.5


@pytest.mark.parametrize("line", ["x qid:1 1:0.5", "1 1:0.5", "1 qid:1 0:0.5", "1 qid:1 1:abc",
                                  "1 qid:1 1-0.5"])
def test_parse_malformed_reports_line_number(tmp_path, line):
    with pytest.raises(LetorParseError) as err:
        parse_letor(_write(tmp_path, "0 qid:1 1:0.1\n" + line + "\n"), 2)
    assert err.value.lineno == 2


def test_parse_feature_id_beyond_dim_is_error(tmp_path):
    with pytest.raises(LetorParseError):
        parse_letor(_write(tmp_path, "1 qid:1 5:0.5\n"), 3)


def test_parse_label_above_ymax(tmp_path):
    with pytest.raises(ValueError):
        parse_letor(_write(tmp_path, "5 qid:1 1:0.5\n"), 1, y_max=4)


def test_round_trip_is_exact(tmp_path):
    ds = generate_synthetic(5, 4, 6, 4, seed=2, utility="bid")
    p = tmp_path / "rt.txt"
    write_letor(ds, p)
    back = parse_letor(p, 6, 4)
    assert [q.query_id for q in back] == [q.query_id for q in ds]
    for a, b in zip(ds, back):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.relevance, b.relevance)
        np.testing.assert_array_equal(a.utility_values, b.utility_values)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from("abc"),
                          st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=3)),
                min_size=1, max_size=10))
def test_round_trip_property(tmp_path_factory, rows):
    lines = [f"{y} qid:{q} " + " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(f)) for y, q, f in rows]
    p = tmp_path_factory.mktemp("rt") / "x.txt"
    p.write_text("\n".join(lines) + "\n")
    ds = parse_letor(p, 3, 3)
    p2 = p.with_name("y.txt")
    write_letor(ds, p2)
    ds2 = parse_letor(p2, 3, 3)
    for a, b in zip(ds, ds2):
        assert a.query_id == b.query_id
        np.testing.assert_array_equal(a.features, b.features)
        assert a.features.shape[1] == 3


def test_synthetic_shape_and_range():
    ds = generate_synthetic(2, 3, 4, 2, seed=1)
    assert len(ds) == 2 and all(len(q) == 3 for q in ds)
    feats = np.concatenate([q.features for q in ds])
    assert feats.shape == (6, 4) and feats.min() >= 0 and feats.max() <= 1


def test_synthetic_deterministic():
    a, b = generate_synthetic(4, 5, 3, 4, seed=9), generate_synthetic(4, 5, 3, 4, seed=9)
    for qa, qb in zip(a, b):
        np.testing.assert_array_equal(qa.features, qb.features)
        np.testing.assert_array_equal(qa.relevance, qb.relevance)


def test_synthetic_covers_every_grade():
    ds = generate_synthetic(100, 10, 20, 4, seed=7)
    grades = np.concatenate([q.relevance for q in ds])
    assert set(np.unique(grades)) == {0, 1, 2, 3, 4}


def test_synthetic_bids():
    ds = generate_synthetic(3, 4, 2, 4, seed=0, utility="bid")
    b = np.concatenate([q.utility_values for q in ds])
    assert np.all(b > 0) and len(np.unique(b)) > 1


def test_truncate():
    q = make_query("q", np.arange(15)[:, None] / 15, [0] * 15)
    assert len(truncate_to_top_k(q, 10, np.arange(15))) == 10
    q6 = make_query("q", np.arange(6)[:, None] / 6, [0, 1, 2, 3, 4, 0])
    out = truncate_to_top_k(q6, 10, np.arange(6))
    np.testing.assert_array_equal(out.relevance, q6.relevance)


def test_truncate_reversed_hand_trace():
    q = make_query("q", [[0.0], [0.5], [1.0]], [0, 1, 2])
    out = truncate_to_top_k(q, 2, [2, 1, 0])
    np.testing.assert_array_equal(out.features[:, 0], [1.0, 0.5])
    np.testing.assert_array_equal(out.relevance, [2, 1])
    assert [it.item_id for it in out.items] == [0, 1]


def test_invalid_permutation():
    with pytest.raises(ValueError):
        check_permutation([0, 0, 1], 3)
    q = make_query("q", [[0.0], [0.5]], [0, 1])
    with pytest.raises(ValueError):
        truncate_to_top_k(q, 1, [1, 2])


def test_dataset_validation():
    q = make_query("q", [[0.0, 1.0]], [5])
    with pytest.raises(ValueError):
        Dataset((q,), 2, 4)
    with pytest.raises(ValueError):
        Dataset((q,), 3, 5)


def test_normalize_features():
    q = make_query("q", [[2.0, 5.0], [4.0, 5.0]], [0, 1])
    out = normalize_features(Dataset((q,), 2, 4))
    np.testing.assert_array_equal(out.query("q").features, [[0.0, 0.0], [1.0, 0.0]])
