import io
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvqa.core import (
    ComparisonMatrix,
    ComparisonSet,
    InputError,
    Item,
    ItemCatalog,
    Method,
    Outcome,
    QualityScores,
    Rating,
    RatingSet,
    ScoreEntry,
    TiePolicy,
    Vote,
    build_comparison_matrix,
    parse_items,
    parse_ratings,
    parse_votes,
    read_scores,
    write_items,
    write_ratings,
    write_scores_csv,
    write_votes,
)

ITEM_HEADER = "item_id,source_id,codec,preset,target_bitrate_kbps,actual_bitrate_kbps,duration_s,is_reference\n"
VOTE_HEADER = "group_id,item_a,item_b,outcome,observer_id\n"
RATING_HEADER = "observer_id,item_id,score\n"


def dump(writer, obj):
    buf = io.StringIO()
    writer(obj, buf)
    return buf.getvalue()


# -- items ------------------------------------------------------------------


def test_parse_items_empty_body():
    assert len(parse_items(ITEM_HEADER)) == 0


def test_parse_items_single_row():
    cat = parse_items(ITEM_HEADER + "v1,src1,x264,fast,1000,1043.2,10.0,false\n")
    assert len(cat) == 1
    it = cat.items[0]
    assert it.actual_bitrate_kbps == 1043.2
    assert it.codec == "x264" and not it.is_reference


def test_parse_items_duplicate_names_row():
    text = ITEM_HEADER + "v1,s,x,p,1000,1000,10,false\nv1,s,x,p,2000,2000,10,false\n"
    with pytest.raises(InputError) as e:
        parse_items(text)
    assert e.value.code == "DUPLICATE_ITEM_ID"
    assert "row 2" in str(e.value)


def test_parse_items_errors():
    with pytest.raises(InputError, match="MISSING_COLUMN"):
        parse_items("item_id,source_id\nv1,s\n")
    with pytest.raises(InputError, match="NON_POSITIVE_BITRATE"):
        parse_items(ITEM_HEADER + "v1,s,x,p,1000,0,10,false\n")
    # references carry no bitrate requirement
    cat = parse_items(ITEM_HEADER + "r,s,ref,none,0,0,10,true\n")
    assert cat.reference_of("s").item_id == "r"


def test_catalog_single_reference_per_source():
    ref = Item("r1", "s", "ref", "", 0, 0, 10, True)
    with pytest.raises(InputError, match="DUPLICATE_REFERENCE"):
        ItemCatalog((ref, Item("r2", "s", "ref", "", 0, 0, 10, True)))


# -- votes ------------------------------------------------------------------


def test_parse_votes_examples():
    vs = parse_votes(VOTE_HEADER + "g1,v1,v2,a,u1\n")
    assert len(vs) == 1 and vs.votes[0].outcome is Outcome.A_WINS

    with pytest.raises(InputError, match="SELF_COMPARISON"):
        parse_votes(VOTE_HEADER + "g1,v1,v1,a,u1\n")
    with pytest.raises(InputError, match="BAD_OUTCOME"):
        parse_votes(VOTE_HEADER + "g1,v1,v2,draw,u1\n")

    vs = parse_votes(VOTE_HEADER + "g1,v1,v2,a,u1\ng1,v2,v1,b,u2\n")
    assert [v.winner for v in vs.votes] == ["v1", "v1"]


def test_votes_single_group_per_item():
    with pytest.raises(InputError, match="MIXED_GROUP"):
        ComparisonSet((Vote("g1", "v1", "v2", Outcome.A_WINS), Vote("g2", "v1", "v3", Outcome.A_WINS)))


def _votes(pairs):
    return ComparisonSet(tuple(Vote("g", a, b, o, f"u{k}") for k, (a, b, o) in enumerate(pairs)))


def test_matrix_counting_and_ties():
    m = build_comparison_matrix(_votes([("v1", "v2", Outcome.A_WINS)] * 10), "g")
    assert m.item_ids == ("v1", "v2")
    np.testing.assert_array_equal(m.c, [[0, 10], [0, 0]])
    assert m.totals[0, 1] == 10

    ties = _votes([("v1", "v2", Outcome.TIE)] * 4)
    half = build_comparison_matrix(ties, "g", TiePolicy.HALF_WIN)
    assert half.c[0, 1] == half.c[1, 0] == 2.0
    drop = build_comparison_matrix(ties, "g", TiePolicy.DROP)
    assert drop.c[0, 1] == drop.c[1, 0] == 0.0


def test_matrix_unknown_group_and_order():
    vs = _votes([("b", "a", Outcome.A_WINS), ("c", "a", Outcome.B_WINS)])
    with pytest.raises(InputError, match="UNKNOWN_GROUP"):
        build_comparison_matrix(vs, "nope")
    m = build_comparison_matrix(vs, "g")
    assert m.item_ids == ("a", "b", "c")
    assert m.c[1, 0] == 1 and m.c[0, 2] == 1


def test_matrix_is_read_only_and_validated():
    m = ComparisonMatrix(("a", "b"), [[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        m.c[0, 1] = 5
    with pytest.raises(InputError):
        ComparisonMatrix(("a", "b"), [[1, 0], [0, 0]])
    with pytest.raises(InputError):
        ComparisonMatrix(("a", "b"), [[0, -1], [0, 0]])


vote_lists = st.lists(
    st.tuples(
        st.sampled_from(["v1", "v2", "v3", "v4"]),
        st.sampled_from(["v1", "v2", "v3", "v4"]),
        st.sampled_from(list(Outcome)),
    ).filter(lambda t: t[0] != t[1]),
    min_size=1,
    max_size=40,
)


@given(vote_lists, st.randoms(use_true_random=False))
def test_matrix_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    for policy in TiePolicy:
        m1 = build_comparison_matrix(_votes(pairs), "g", policy)
        m2 = build_comparison_matrix(_votes(shuffled), "g", policy)
        assert m1.item_ids == m2.item_ids
        np.testing.assert_array_equal(m1.c, m2.c)


@given(vote_lists)
def test_half_win_preserves_vote_count(pairs):
    m = build_comparison_matrix(_votes(pairs), "g", TiePolicy.HALF_WIN)
    # each vote adds exactly one unit to c_ij + c_ji of its pair
    assert np.triu(m.totals, 1).sum() == len(pairs)
    assert np.all(np.diag(m.c) == 0)


# -- ratings ----------------------------------------------------------------


def test_parse_ratings_examples():
    rs = parse_ratings(RATING_HEADER + "u1,v1,20\n")
    assert rs.scores[0].score == 20
    with pytest.raises(InputError, match="SCORE_OUT_OF_RANGE"):
        parse_ratings(RATING_HEADER + "u1,v1,21\n")
    with pytest.raises(InputError, match="SCORE_OUT_OF_RANGE"):
        parse_ratings(RATING_HEADER + "u1,v1,7.5\n")
    with pytest.raises(InputError, match="DUPLICATE_RATING"):
        parse_ratings(RATING_HEADER + "u1,v1,10\nu1,v1,10\n")


def test_rating_set_views():
    rs = RatingSet((Rating("v1", "u1", 10), Rating("v1", "u2", 14), Rating("v2", "u1", 3)))
    assert rs.N == 2 and rs.J == 2
    assert rs.mos() == {"v1": 12.0, "v2": 3.0}
    assert list(rs.by_observer()) == ["u1", "u2"]


# -- round trips --------------------------------------------------------------

ident = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-", min_size=1, max_size=6)


@given(st.lists(st.tuples(ident, ident, st.integers(0, 20)), max_size=30, unique_by=lambda t: (t[0], t[1])))
def test_ratings_round_trip(rows):
    rs = RatingSet(tuple(Rating(i, o, s) for o, i, s in rows))
    text = dump(write_ratings, rs)
    assert parse_ratings(text) == rs
    assert dump(write_ratings, parse_ratings(text)) == text


@given(st.lists(st.tuples(ident, ident, st.sampled_from(list(Outcome)), ident), max_size=30))
def test_votes_round_trip(rows):
    vs = ComparisonSet(tuple(Vote("g", a, b, o, u) for a, b, o, u in rows if a != b))
    assert parse_votes(dump(write_votes, vs)) == vs


@given(
    st.lists(
        st.tuples(
            ident,
            st.floats(1, 1e5, allow_nan=False),
            st.floats(1, 1e5, allow_nan=False),
            st.floats(0.1, 600, allow_nan=False),
        ),
        max_size=20,
        unique_by=lambda t: t[0],
    )
)
def test_items_round_trip(rows):
    cat = ItemCatalog(tuple(Item(i, "src", "x265", "slow", t, a, d) for i, t, a, d in rows))
    assert parse_items(dump(write_items, cat)) == cat


def test_round_trip_ignores_column_order():
    text = "score,item_id,observer_id\n5,v1,u1\n"
    assert parse_ratings(text) == RatingSet((Rating("v1", "u1", 5),))


def test_round_trip_small_fixture_shuffled():
    rnd = random.Random(1)
    rows = [f"u{k},v{k % 3},{k % 21}" for k in range(12)]
    rnd.shuffle(rows)
    text = RATING_HEADER + "\n".join(rows) + "\n"
    assert dump(write_ratings, parse_ratings(text)) == text


# -- scores -----------------------------------------------------------------


def test_score_entry_interval():
    ScoreEntry(1.0, 0.5, 1.5)
    with pytest.raises(InputError):
        ScoreEntry(2.0, 0.5, 1.5)


def test_scores_json_and_csv_round_trip():
    s = QualityScores({"a": ScoreEntry(0.5, 0.1, 0.9), "b": ScoreEntry(-0.5)}, Method.BT, "note", {"beta": 0.9})
    assert QualityScores.from_json_obj(s.to_json_obj()) == s
    back = read_scores(dump(write_scores_csv, s), Method.BT)
    assert back.as_dict() == s.as_dict()
    assert read_scores("item_id,score\na,3\n").as_dict() == {"a": 3.0}
