from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_matches
from parcep.apps import APPSController, AssignHistogram, SizingParams
from parcep.events import make_primitive
from parcep.policies import SplittingPolicy
from parcep.query import parse_query, reference_evaluate
from parcep.runtime import (
    HostState,
    ParallelRuntime,
    RoutedEvent,
    RuntimeConfig,
    StaticDispatcher,
    ThreadedRuntime,
    Worker,
    constant_service,
    merge,
    worker_process,
)

MS = 1000
Q1 = parse_query("PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s")


def stream_of(raw):
    return [make_primitive(t, ts, {"Id": k}, i) for i, (t, ts, k) in enumerate(raw)]


def run(query, stream, kind="rr", m=2, capacity=64, service=20 * MS, trace=False):
    cfg = RuntimeConfig(m=m, queue_capacity=capacity, trace=trace)
    return ParallelRuntime(query, cfg, StaticDispatcher(kind, m), constant_service(service)).run(stream)


# worker-level behaviour


def test_worker_matches_buffered_replica():
    w = Worker(HostState(0), parse_query("PATTERN SEQ(E1, E2) WITHIN 1 s"))
    w.on_replica(make_primitive("E1", 200 * MS, eid=0))
    out = worker_process(w, RoutedEvent(make_primitive("E2", 500 * MS, eid=1), 0))
    assert [c.key for c in out] == [(0, 1)]


def test_worker_window_exceeded():
    w = Worker(HostState(0), parse_query("PATTERN SEQ(E1, E2) WITHIN 1 s"))
    w.on_replica(make_primitive("E1", 0, eid=0))
    assert worker_process(w, RoutedEvent(make_primitive("E2", 1500 * MS, eid=1), 0)) == []
    assert w.replica_count == 0 and w.host.state_bytes == 0


def test_empty_buffer_departure_is_completion_time():
    s = [make_primitive("E2", 7 * MS, eid=0)]
    res = ParallelRuntime(parse_query("PATTERN SEQ(E1, E2) WITHIN 1 s"), RuntimeConfig(m=1),
                          StaticDispatcher("rr", 1), constant_service(3 * MS)).run(s)
    assert res.matches == []
    (rec,) = res.records
    assert (rec.arrival_ts, rec.departure_ts) == (7 * MS, 10 * MS)


def test_merge_is_union():
    a = make_primitive("E1", 0, eid=0)
    b = make_primitive("E2", 5, eid=1)
    from parcep.events import compose
    c1, c2 = compose("M", [a]), compose("M", [b])
    assert Counter(map(id, merge([[c1], [c2]]))) == Counter(map(id, [c1, c2]))
    assert merge([[], []]) == []


# run-level behaviour


RAW = [("E1", 0, 1), ("E2", 5 * MS, 1), ("E1", 8 * MS, 2), ("E2", 9 * MS, 2), ("E2", 10 * MS, 1),
       ("E2", 11 * MS, 2), ("E2", 12 * MS, 1), ("E1", 30 * MS, 1), ("E2", 31 * MS, 1)]


@pytest.mark.parametrize("kind", ["rr", "jsq", "llsf"])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_conservation_and_oracle_equivalence(kind, m):
    s = stream_of(RAW)
    res = run(Q1, s, kind, m, capacity=1)
    n_part = sum(1 for e in s if e.event_type.name == "E2")
    assert res.n_split == n_part == sum(res.delivered) == len(res.records)
    assert sorted(c.key for c in res.matches) == sorted(c.key for c in reference_evaluate(Q1, s))


def test_backpressure_keeps_arrival_at_event_time():
    s = stream_of([("E2", t * MS, 0) for t in range(6)])
    res = run(Q1, s, "rr", m=2, capacity=1, service=10 * MS)
    for rec in res.records:
        assert rec.arrival_ts == s[rec.eid].start_ts
    assert max(r.processing_time for r in res.records) > 10 * MS


def test_queue_capacity_never_exceeded():
    s = stream_of([("E2", t * MS, 0) for t in range(40)])
    res = run(Q1, s, "jsq", m=3, capacity=2, service=15 * MS, trace=True)
    dispatched = {}
    for line in res.trace:
        ts, h, eid, act = line.split(",")
        if act in ("redirect", "enqueue"):
            dispatched.setdefault(int(eid), int(ts))
    for h in range(3):
        spans = [(dispatched[r.eid], r.departure_ts) for r in res.records if r.host == h]
        for t, _ in spans:
            assert sum(1 for a, d in spans if a <= t < d) <= 2


def test_trace_lines_are_sorted_and_well_formed():
    res = run(Q1, stream_of(RAW), "rr", 2, capacity=1, trace=True)
    rows = [line.split(",") for line in res.trace]
    assert rows and all(len(r) == 4 for r in rows)
    assert [int(r[0]) for r in rows] == sorted(int(r[0]) for r in rows)
    acts = Counter(r[3] for r in rows)
    assert acts["enqueue"] == acts["dequeue"] == res.n_split
    assert acts["match"] == sum(r.n_matches for r in res.records)


def test_determinism():
    s = stream_of(RAW)
    a = run(Q1, s, "jsq", 3, trace=True)
    b = run(Q1, s, "jsq", 3, trace=True)
    assert a.trace == b.trace and a.records == b.records


def test_histogram_recorded_by_static_dispatcher():
    s = stream_of([("E2", t * MS, 0) for t in range(10)])
    hist = AssignHistogram(2)
    ParallelRuntime(Q1, RuntimeConfig(m=2), StaticDispatcher("rr", 2, hist), constant_service()).run(s)
    assert hist.p_host("rr") == [0.5, 0.5]
    assert hist.p_redirect("rr") == [0.0, 0.0]


def test_queues_drain_and_memory_stays_non_negative():
    q = parse_query("PATTERN AND(E1, E2) WHERE [Id] WITHIN 50 ms")
    s = stream_of(RAW)
    res = run(q, s, "llsf", 2)
    for h in res.hosts:
        assert h.queue_len == 0 and h.queued_bytes == 0
        # output still inside its hold period at the end of the run stays charged
        assert h.output_bytes >= 0 and h.state_bytes >= 0


def test_threaded_runtime_matches_reference():
    q = parse_query("PATTERN SEQ(E1, AND(E2, E3)) WHERE [Id] WITHIN 40 ms")
    raw = [("E1", 0, 0), ("E3", 3 * MS, 0), ("E2", 4 * MS, 0), ("E3", 6 * MS, 0), ("E1", 7 * MS, 1),
           ("E2", 9 * MS, 1), ("E3", 10 * MS, 1), ("E3", 80 * MS, 0)]
    s = stream_of(raw)
    res = ThreadedRuntime(q, RuntimeConfig(m=2, mode="wallclock"), StaticDispatcher("rr", 2), time_scale=0.0).run(s)
    assert sorted(c.key for c in res.matches) == sorted(c.key for c in reference_evaluate(q, s))
    assert res.n_split == 4


def test_apps_dispatcher_equivalence_small():
    s = stream_of(RAW * 1)
    d = APPSController(SizingParams(100, 50, tau=20), 2)
    d.capacity = 1
    res = ParallelRuntime(Q1, RuntimeConfig(m=2, queue_capacity=1), d, constant_service(20 * MS)).run(s)
    assert sorted(c.key for c in res.matches) == sorted(c.key for c in reference_evaluate(Q1, s))


def test_runtime_config_validation():
    with pytest.raises(ValueError):
        RuntimeConfig(m=0)
    with pytest.raises(ValueError):
        RuntimeConfig(m=1, queue_capacity=0)
    with pytest.raises(ValueError):
        RuntimeConfig(m=1, mode="bogus")
    with pytest.raises(ValueError):
        RoutedEvent(make_primitive("E2", 0), 0, redirected_from=1)


raw_st = st.lists(st.tuples(st.sampled_from(["E1", "E2", "E3"]), st.integers(0, 200), st.integers(0, 2)),
                  max_size=30)


@settings(max_examples=60, deadline=None)
@given(raw=raw_st, kind=st.sampled_from(["rr", "jsq", "llsf"]), m=st.integers(1, 4), cap=st.integers(1, 3),
       pattern=st.sampled_from(["SEQ(E1, E2)", "AND(E1, E2)", "SEQ(E1, AND(E2, E3))", "AND(SEQ(E1, E2), E3)"]))
def test_parallel_output_equals_exhaustive_matches(raw, kind, m, cap, pattern):
    raw = sorted(raw, key=lambda r: r[1])
    s = [make_primitive(t, ts * MS, {"Id": k}, i) for i, (t, ts, k) in enumerate(raw)]
    q = parse_query(f"PATTERN {pattern} WHERE [Id] WITHIN 60 ms")
    res = run(q, s, kind, m, capacity=cap, service=7 * MS)
    expected = brute_force_matches(pattern, 60 * MS, "Id", [(t, ts * MS, {"Id": k}, i) for i, (t, ts, k) in enumerate(raw)])
    assert sorted(c.key for c in res.matches) == expected
    assert len(res.records) == res.n_split == sum(res.delivered)
    for r in res.records:
        assert r.departure_ts >= r.arrival_ts


def test_split_policy_object_kept_per_dispatcher():
    d = StaticDispatcher("rr", 3)
    assert isinstance(d.policy([], 0), SplittingPolicy)
