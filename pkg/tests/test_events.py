import io
import pickle

import pytest
from hypothesis import given, strategies as st

from parcep.events import (
    EventType,
    PrimitiveEvent,
    compose,
    format_event,
    make_primitive,
    parse_event,
    read_events,
    seconds,
    write_events,
)


def test_primitive_construction():
    e = make_primitive("E1", 5, {"id": 7})
    assert (e.event_type.name, e.start_ts, e.end_ts, e.get("id")) == ("E1", 5, 5, 7)
    z = make_primitive("E2", 0)
    assert z.start_ts == z.end_ts == 0 and z.attributes == ()


def test_negative_timestamp_rejected():
    with pytest.raises(ValueError):
        make_primitive("E1", -1)


def test_non_integer_timestamp_rejected():
    with pytest.raises(TypeError):
        make_primitive("E1", 1.5)


@pytest.mark.parametrize("bad", [True, None, [1], 2**63])
def test_bad_attribute_values(bad):
    with pytest.raises((TypeError, ValueError)):
        make_primitive("E1", 1, {"k": bad})


def test_long_string_attribute_rejected():
    with pytest.raises(ValueError):
        make_primitive("E1", 1, {"k": "x" * 65})


def test_event_types_are_interned():
    assert EventType("Stock") is EventType("Stock")
    assert pickle.loads(pickle.dumps(EventType("Stock"))) is EventType("Stock")
    with pytest.raises(AttributeError):
        EventType("Stock").name = "other"
    with pytest.raises(ValueError):
        EventType("")


def test_compose_spans_constituents():
    a, b = make_primitive("E", 3), make_primitive("E", 9)
    c = compose("OUT", [b, a])
    assert (c.start_ts, c.end_ts) == (3, 9)
    assert c.constituents == (b, a)
    single = compose("OUT", [make_primitive("E", 4)])
    assert (single.start_ts, single.end_ts) == (4, 4)
    with pytest.raises(ValueError):
        compose("OUT", [])


def test_arrival_and_departure_stamps_are_write_once():
    e = make_primitive("E1", 10, eid=3).with_arrival(12)
    done = e.with_departure(20)
    assert (done.arrival_ts, done.departure_ts, done.eid) == (12, 20, 3)
    with pytest.raises(ValueError):
        e.with_arrival(13)
    with pytest.raises(ValueError):
        done.with_departure(30)
    with pytest.raises(ValueError):
        PrimitiveEvent(EventType("E1"), 1, 1, (), 0, 5, 4)


def test_seconds_conversion():
    assert seconds(1) == 1_000_000
    assert seconds(0.0005) == 500


attr_values = st.one_of(
    st.integers(min_value=-(2**63), max_value=2**63 - 1),
    st.floats(allow_nan=False, allow_infinity=False),
    st.text(alphabet=st.characters(blacklist_characters=",=\n\r", blacklist_categories=("Cs",)), max_size=20),
)


@given(
    ts=st.integers(min_value=0, max_value=10**15),
    attrs=st.dictionaries(st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,6}", fullmatch=True), attr_values, max_size=4),
)
def test_wire_format_round_trip(ts, attrs):
    e = make_primitive("E1", ts, attrs)
    back = parse_event(format_event(e))
    assert back == e


def test_read_events_numbers_lines_and_skips_comments():
    fh = io.StringIO()
    write_events([make_primitive("E1", 1, {"Id": 2}), make_primitive("E2", 5)], fh)
    text = "# header\n\n" + fh.getvalue()
    got = list(read_events(io.StringIO(text)))
    assert [e.eid for e in got] == [0, 1]
    assert got[0].get("Id") == 2 and got[1].event_type is EventType("E2")


def test_malformed_lines():
    with pytest.raises(ValueError):
        parse_event("E1")
    with pytest.raises(ValueError):
        parse_event("E1,3,novalue")
