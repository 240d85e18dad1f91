import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_matches
from parcep.events import EventType, make_primitive
from parcep.query import (
    And,
    Leaf,
    PatternQuery,
    QuerySyntaxError,
    Seq,
    and_match,
    format_query,
    parse_query,
    reference_evaluate,
    seq_match,
)

MS = 1000


def ev(t, ts, eid=-1, **attrs):
    return make_primitive(t, ts, attrs, eid)


def test_parse_baseline_query():
    q = parse_query("PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s")
    assert q.pattern == Seq(Leaf(EventType("E1")), Leaf(EventType("E2")))
    assert q.where_key == "Id" and q.window == 1_000_000


def test_parse_nested_without_key():
    q = parse_query("PATTERN AND(E1, SEQ(E2, E3)) WITHIN 2 s")
    assert isinstance(q.pattern, And) and isinstance(q.pattern.right, Seq)
    assert q.where_key is None and q.window == 2_000_000
    assert q.partitioned_type is EventType("E3")


@pytest.mark.parametrize(
    "text",
    [
        "PATTERN SEQ(E1) WITHIN 1 s",
        "PATTERN SEQ(E1, E2, E3) WITHIN 1 s",
        "PATTERN SEQ(E1, E2) WITHIN",
        "PATTERN SEQ(E1, E2) WITHIN 1 fortnight",
        "PATTERN SEQ(E1, E1) WITHIN 1 s",
        "SEQ(E1, E2) WITHIN 1 s",
        "PATTERN SEQ(E1",
        "PATTERN SEQ(E1, E2) WITHIN 0 s",
    ],
)
def test_parse_errors(text):
    with pytest.raises(ValueError):
        parse_query(text)


def test_syntax_error_reports_position():
    with pytest.raises(QuerySyntaxError) as info:
        parse_query("PATTERN SEQ(E1")
    assert info.value.line == 1 and info.value.col == 15


@pytest.mark.parametrize(
    "text",
    [
        "PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s",
        "PATTERN AND(E1, SEQ(E2, E3)) WITHIN 2 s",
        "PATTERN SEQ(AND(A, B), C) WHERE [k] WITHIN 250 ms",
    ],
)
def test_format_round_trip(text):
    q = parse_query(text)
    assert parse_query(format_query(q)) == q


def test_retains_partitioned():
    assert not parse_query("PATTERN SEQ(E1, E2) WITHIN 1 s").retains_partitioned
    assert parse_query("PATTERN AND(E1, E2) WITHIN 1 s").retains_partitioned
    assert parse_query("PATTERN SEQ(E1, AND(E2, E3)) WITHIN 1 s").retains_partitioned
    assert not parse_query("PATTERN SEQ(AND(E1, E2), E3) WITHIN 1 s").retains_partitioned


Q5 = parse_query("PATTERN SEQ(E1, E2) WITHIN 5 s")
QK = parse_query("PATTERN SEQ(E1, E2) WHERE [id] WITHIN 5 s")


def test_seq_match_cases():
    assert seq_match(ev("E1", 1), ev("E2", 2), Q5)
    assert not seq_match(ev("E1", 2), ev("E2", 1), Q5)
    assert not seq_match(ev("E1", 0, id=1), ev("E2", 1, id=2), QK)
    assert not seq_match(ev("E1", 3), ev("E2", 3), Q5)


def test_and_match_cases():
    assert and_match(ev("E1", 2), ev("E2", 1), Q5)
    assert not and_match(ev("E1", 0), ev("E2", 10_000_000), Q5)
    assert and_match(ev("E1", 3), ev("E2", 3), Q5)


def test_reference_examples():
    q = parse_query("PATTERN SEQ(E1, E2) WITHIN 1 s")
    s = [ev("E1", 0, 0), ev("E2", 500 * MS, 1), ev("E2", 1500 * MS, 2)]
    assert [m.key for m in reference_evaluate(q, s)] == [(0, 1)]
    q = parse_query("PATTERN AND(E1, E2) WITHIN 1 s")
    s = [ev("E2", 0, 0), ev("E1", 300 * MS, 1)]
    (m,) = reference_evaluate(q, s)
    assert m.key == (1, 0) and (m.start_ts, m.end_ts) == (0, 300 * MS)
    assert reference_evaluate(q, []) == []


def test_window_boundary_is_inclusive():
    q = parse_query("PATTERN SEQ(E1, E2) WITHIN 1 s")
    s = [ev("E1", 0, 0), ev("E2", 1_000_000, 1), ev("E2", 1_000_001, 2)]
    assert [m.key for m in reference_evaluate(q, s)] == [(0, 1)]


def test_missing_key_attribute_never_matches():
    q = parse_query("PATTERN AND(E1, E2) WHERE [Id] WITHIN 1 s")
    s = [ev("E1", 0, 0, Id=1), ev("E2", 10, 1)]
    assert reference_evaluate(q, s) == []


PATTERNS = ["SEQ(E1, E2)", "AND(E1, E2)", "SEQ(E1, AND(E2, E3))", "AND(SEQ(E1, E2), E3)", "SEQ(SEQ(E1, E2), E3)"]

events_st = st.lists(
    st.tuples(st.sampled_from(["E1", "E2", "E3", "X"]), st.integers(0, 40), st.integers(0, 2)),
    max_size=14,
)


@settings(max_examples=300, deadline=None)
@given(pattern=st.sampled_from(PATTERNS), window=st.integers(1, 30), raw=events_st, keyed=st.booleans())
def test_reference_agrees_with_exhaustive_enumeration(pattern, window, raw, keyed):
    raw = sorted(raw, key=lambda r: r[1])
    events = [(t, ts, {"Id": k}, i) for i, (t, ts, k) in enumerate(raw)]
    key = "Id" if keyed else None
    q = parse_query(f"PATTERN {pattern}{' WHERE [Id]' if keyed else ''} WITHIN {window} us")
    stream = [make_primitive(t, ts, a, i) for t, ts, a, i in events]
    got = sorted(m.key for m in reference_evaluate(q, stream))
    assert got == brute_force_matches(pattern, window, key, events)


@settings(max_examples=100, deadline=None)
@given(raw=events_st)
def test_matches_respect_span_and_key(raw):
    q = parse_query("PATTERN AND(E1, SEQ(E2, E3)) WHERE [Id] WITHIN 10 us")
    stream = [make_primitive(t, ts, {"Id": k}, i) for i, (t, ts, k) in enumerate(sorted(raw, key=lambda r: r[1]))]
    for m in reference_evaluate(q, stream):
        ts = [c.start_ts for c in m.constituents]
        assert m.start_ts == min(ts) and m.end_ts == max(ts)
        assert m.end_ts - m.start_ts <= q.window
        assert len({c.get("Id") for c in m.constituents}) == 1
        assert m.constituents[1].start_ts < m.constituents[2].start_ts


def test_window_monotonicity():
    stream = [ev(t, ts, i, Id=i % 2) for i, (t, ts) in enumerate(
        [("E1", 0), ("E2", 10), ("E1", 20), ("E2", 35), ("E2", 80), ("E1", 90), ("E2", 100)])]
    prev = set()
    for w in (5, 15, 40, 100, 1000):
        got = {m.key for m in reference_evaluate(parse_query(f"PATTERN SEQ(E1, E2) WITHIN {w} us"), stream)}
        assert prev <= got
        prev = got


def test_patternquery_validation():
    with pytest.raises(ValueError):
        PatternQuery(Leaf(EventType("E1")), 0)
