"""
Split-(process*)-merge runtime
==============================

One splitter, ``m`` identical pattern workers and one merger.

The splitter partitions the stream of the query's rightmost event type
(the one that opens a new window on every arrival) across the workers
and replicates every other stream to all of them, so each match is
detected by exactly the worker that holds its partitioned constituent.

Two drivers share the worker logic:

* :class:`ParallelRuntime` -- deterministic discrete-event simulation on a
  virtual microsecond clock. Matching runs in stream order; queueing and
  service only decide *when* results are emitted.
* :class:`ThreadedRuntime` -- real worker threads on the wall clock.
"""

from __future__ import annotations

import heapq
import queue
import threading
import time
from collections import deque
from operator import attrgetter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence

from .events import CompositeEvent, EventType, PrimitiveEvent
from .policies import PolicyKind, SplittingPolicy, fallback_order
from .query import MATCH_TYPE, PatternQuery, evaluate_tree
from .stats import RunningStats

# service_fn(host_id, event, buffer_len, n_matches) -> service time in microseconds
ServiceFn = Callable[[int, PrimitiveEvent, int, int], int]


def constant_service(us: int = 1000) -> ServiceFn:
    return lambda host, event, buffer_len, n_matches: us


@dataclass
class HostState:
    host_id: int
    service_rate: float = 1000.0
    queue_len: int = 0
    busy: bool = False
    served_count: int = 0
    queued_bytes: int = 0
    state_bytes: int = 0
    output_bytes: int = 0
    busy_time: int = 0
    last_arrival: Optional[int] = None
    inter_arrival_stats: RunningStats = field(default_factory=RunningStats)
    service_stats: RunningStats = field(default_factory=RunningStats)

    def __post_init__(self) -> None:
        if self.service_rate <= 0:
            raise ValueError("service_rate must be positive")

    @property
    def mem_load(self) -> int:
        """Bytes of queued events + replica/partial-match state + unmerged output."""
        return self.queued_bytes + self.state_bytes + self.output_bytes

    @property
    def measured_rate(self) -> float:
        """Service rate from observed service times, else the configured prior."""
        s = self.service_stats
        if s.weight > 0 and s.mean > 0:
            return 1e6 / s.mean
        return self.service_rate

    def note_arrival(self, ts: int) -> None:
        if self.last_arrival is not None:
            self.inter_arrival_stats.add(ts - self.last_arrival)
        self.last_arrival = ts


@dataclass
class RuntimeConfig:
    m: int
    queue_capacity: int = 64
    mode: str = "virtual"
    redirect_delay: int = 200
    transfer_bytes_per_us: float = 100.0
    output_hold: int = 200_000
    deterministic_merge: bool = True
    trace: bool = False

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.mode not in ("virtual", "wallclock"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def redirect_latency(self, event: PrimitiveEvent) -> int:
        return self.redirect_delay + int(event.nbytes / self.transfer_bytes_per_us)


@dataclass(slots=True)
class RoutedEvent:
    event: PrimitiveEvent
    target_host: int
    redirected_from: Optional[int] = None
    redirect_latency: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.redirected_from is None) != (self.redirect_latency is None):
            raise ValueError("redirect_latency is set iff redirected_from is set")


def split(
    event: PrimitiveEvent,
    policy: SplittingPolicy,
    hosts: Sequence[HostState],
    capacity: Optional[int] = None,
    now: Optional[int] = None,
    redirect_latency: int | Callable[[PrimitiveEvent], int] = 0,
) -> Optional[RoutedEvent]:
    """Route one partitioned event.

    Returns ``None`` when every queue is at capacity: the event must wait at
    the splitter and be offered again later. The policy state is not touched
    in that case, so a retry is not double counted.
    """
    if not hosts:
        raise ValueError("no hosts")
    if event.arrival_ts is None:
        event = event.with_arrival(event.start_ts if now is None else now)
    if capacity is not None and all(h.queue_len >= capacity for h in hosts):
        return None
    target = policy.first_choice(hosts)
    if capacity is None or hosts[target].queue_len < capacity:
        return RoutedEvent(event, target)
    ranking = fallback_order(policy, hosts, target)
    for h in ranking:
        if hosts[h].queue_len < capacity:
            lat = redirect_latency(event) if callable(redirect_latency) else redirect_latency
            return RoutedEvent(event, h, redirected_from=target, redirect_latency=lat)
    raise AssertionError("unreachable: some host has room")


def replicate(event: PrimitiveEvent, m: int) -> list[RoutedEvent]:
    if m < 1:
        raise ValueError("m must be >= 1")
    return [RoutedEvent(event, h) for h in range(m)]


def merge(outputs: Iterable[Iterable[CompositeEvent]], deterministic: bool = True) -> list[CompositeEvent]:
    """Concatenate worker outputs; with ``deterministic`` order them by end time.

    The sort is stable, so ties keep worker order and within-worker order.
    """
    merged = [c for out in outputs for c in out]
    if deterministic:
        merged.sort(key=_end_ts)
    return merged


_end_ts = attrgetter("end_ts")


class Worker:
    """One back-end pattern operator with its replica buffer.

    Buffers are grouped by WHERE-key value and evicted once they fall out of
    the trailing window of the newest event seen.
    """

    def __init__(self, host: HostState, query: PatternQuery):
        self.host = host
        self.query = query
        self.window = query.window
        self.key = query.where_key
        self.types = frozenset(query.types)
        self.ptype = query.partitioned_type
        self.retain = query.retains_partitioned
        self.buffers: dict[object, dict[EventType, deque]] = {}
        self._order: deque = deque()
        self.replica_count = 0
        self.outputs: list[CompositeEvent] = []

    def _key_of(self, e: PrimitiveEvent):
        return None if self.key is None else e.get(self.key)

    def evict(self, now_ts: int) -> None:
        horizon = now_ts - self.window
        order = self._order
        while order and order[0][0] < horizon:
            _, k, t, nbytes = order.popleft()
            group = self.buffers[k]
            group[t].popleft()
            self.host.state_bytes -= nbytes
            if t != self.ptype:
                self.replica_count -= 1

    def _store(self, e: PrimitiveEvent, k) -> None:
        group = self.buffers.get(k)
        if group is None:
            group = self.buffers[k] = {t: deque() for t in self.types}
        group[e.event_type].append(e)
        nb = e.nbytes
        self._order.append((e.start_ts, k, e.event_type, nb))
        self.host.state_bytes += nb
        if e.event_type != self.ptype:
            self.replica_count += 1

    def _matches_with(self, e: PrimitiveEvent, k) -> list[CompositeEvent]:
        group = self.buffers.get(k)
        if group is None:
            if len(self.types) > 1:
                return []
            group = {}
        cands = {t: group[t] for t in self.types if t != e.event_type}
        cands[e.event_type] = (e,)
        return [
            CompositeEvent(MATCH_TYPE, evs, st, et)
            for st, et, evs in evaluate_tree(self.query.pattern, cands, self.window)
        ]

    def on_replica(self, e: PrimitiveEvent) -> list[CompositeEvent]:
        """Buffer a replicated event; returns matches it completes (AND-style patterns)."""
        if e.event_type not in self.types:
            return []
        k = self._key_of(e)
        if self.key is not None and k is None:
            return []
        self.evict(e.start_ts)
        found = self._matches_with(e, k) if self.retain else []
        self._store(e, k)
        return found

    def on_partitioned(self, e: PrimitiveEvent) -> list[CompositeEvent]:
        """Open the window for a partitioned event and return its matches."""
        k = self._key_of(e)
        self.evict(e.start_ts)
        if self.key is not None and k is None:
            return []
        found = self._matches_with(e, k)
        if self.retain:
            self._store(e, k)
        return found

    def process(self, routed: RoutedEvent) -> list[CompositeEvent]:
        return self.on_partitioned(routed.event)


def worker_process(worker: Worker, routed: RoutedEvent) -> list[CompositeEvent]:
    return worker.process(routed)


class _SharedBuffers:
    """Replica buffers of all workers of a virtual run, stored once.

    Every worker receives the same replicated events, so their replica
    buffers are identical. Keeping one copy and crediting each match to the
    worker that holds its partitioned constituent yields exactly the output
    of ``m`` separate :class:`Worker` objects at a fraction of the cost.
    Memory accounting still charges every host for its own copy.
    """

    def __init__(self, query: PatternQuery, hosts: Sequence[HostState]):
        self.pattern = query.pattern
        self.window = query.window
        self.key = query.where_key
        self.types = query.types
        self.type_set = frozenset(self.types)
        self.ptype = query.partitioned_type
        self.retain = query.retains_partitioned
        self.hosts = hosts
        self.buffers: dict[object, dict[EventType, deque]] = {}
        self._order: deque = deque()
        self.owner: dict[int, int] = {}  # id(partitioned event) -> host
        self.replica_count = 0

    def evict(self, now_ts: int) -> None:
        horizon = now_ts - self.window
        order = self._order
        while order and order[0][0] < horizon:
            _, group, e, owner = order.popleft()
            group[e.event_type].popleft()
            if owner is None:
                self.replica_count -= 1
                for host in self.hosts:
                    host.state_bytes -= e.nbytes
            else:
                self.hosts[owner].state_bytes -= e.nbytes
                del self.owner[id(e)]

    def _group(self, k) -> dict[EventType, deque]:
        group = self.buffers.get(k)
        if group is None:
            group = self.buffers[k] = {t: deque() for t in self.types}
        return group

    def _match(self, e: PrimitiveEvent, group) -> list:
        et = e.event_type
        for t in self.types:
            if t is not et and not group[t]:
                return []
        cands = dict(group)
        cands[e.event_type] = (e,)
        return evaluate_tree(self.pattern, cands, self.window)

    def replica(self, e: PrimitiveEvent) -> list[tuple[int, CompositeEvent]]:
        """Store a replicated event; returns (host, match) pairs it completes."""
        if e.event_type not in self.type_set:
            return []
        k = None if self.key is None else e.get(self.key)
        if self.key is not None and k is None:
            return []
        self.evict(e.start_ts)
        group = self._group(k)
        found = []
        if self.retain and group[self.ptype]:
            owner = self.owner
            found = [(owner[id(evs[-1])], CompositeEvent(MATCH_TYPE, evs, st, et))
                     for st, et, evs in self._match(e, group)]
        group[e.event_type].append(e)
        self._order.append((e.start_ts, group, e, None))
        self.replica_count += 1
        for host in self.hosts:
            host.state_bytes += e.nbytes
        return found

    def partitioned(self, e: PrimitiveEvent, h: int) -> list[CompositeEvent]:
        """Matches opened by partitioned event ``e`` on worker ``h``."""
        k = None if self.key is None else e.get(self.key)
        self.evict(e.start_ts)
        if self.key is not None and k is None:
            return []
        group = self._group(k)
        found = [CompositeEvent(MATCH_TYPE, evs, st, et) for st, et, evs in self._match(e, group)]
        if self.retain:
            group[e.event_type].append(e)
            self._order.append((e.start_ts, group, e, h))
            self.owner[id(e)] = h
            self.hosts[h].state_bytes += e.nbytes
        return found


# -- dispatch hook ----------------------------------------------------------


class Dispatcher(Protocol):
    def policy(self, hosts: Sequence[HostState], now: int) -> SplittingPolicy: ...

    def observe(self, routed: RoutedEvent, hosts: Sequence[HostState], now: int) -> None: ...

    def on_complete(self, host_id: int, service_us: int, now: int) -> None: ...


class StaticDispatcher:
    """Always the same policy. Still records the assignment histogram."""

    def __init__(self, kind: PolicyKind | str, m: int, histogram=None):
        self.splitting = SplittingPolicy(kind, m)
        self.histogram = histogram
        self.kind = self.splitting.kind

    def policy(self, hosts, now):
        return self.splitting

    def observe(self, routed, hosts, now):
        if self.histogram is not None:
            self.histogram.record_assignment(self.kind, routed.target_host, routed.redirected_from is not None,
                                             routed.redirect_latency)

    def on_complete(self, host_id, service_us, now):
        pass


# -- virtual-time driver ----------------------------------------------------


@dataclass
class EventRecord:
    eid: int
    host: int
    arrival_ts: int
    departure_ts: int
    redirected_from: Optional[int]
    policy: str
    n_matches: int

    @property
    def processing_time(self) -> int:
        return self.departure_ts - self.arrival_ts


@dataclass
class RunResult:
    matches: list[CompositeEvent]
    records: list[EventRecord]
    hosts: list[HostState]
    n_split: int
    delivered: list[int]
    makespan: int
    trace: list[str] = field(default_factory=list)

    @property
    def processing_times(self) -> list[int]:
        return [r.processing_time for r in self.records]

    def utilization(self) -> list[float]:
        if self.makespan <= 0:
            return [0.0] * len(self.hosts)
        return [h.busy_time / self.makespan for h in self.hosts]


class ParallelRuntime:
    """Deterministic virtual-time execution of the split-(process*)-merge assembly."""

    def __init__(
        self,
        query: PatternQuery,
        config: RuntimeConfig,
        dispatcher: Dispatcher,
        service: Optional[ServiceFn] = None,
        service_rates: Optional[Sequence[float]] = None,
    ):
        self.query = query
        self.config = config
        self.dispatcher = dispatcher
        self.service = service or constant_service()
        rates = service_rates or [1000.0] * config.m
        if len(rates) != config.m:
            raise ValueError("need one service rate per host")
        self.hosts = [HostState(i, service_rate=float(r)) for i, r in enumerate(rates)]

    def run(self, stream: Iterable[PrimitiveEvent]) -> RunResult:
        cfg = self.config
        m = cfg.m
        hosts = self.hosts
        dispatcher = self.dispatcher
        service_fn = self.service
        capacity = cfg.queue_capacity
        hold = cfg.output_hold
        shared = _SharedBuffers(self.query, hosts)
        ptype = shared.ptype
        types = shared.type_set
        events = sorted((e for e in stream if e.event_type in types), key=lambda e: (e.start_ts, e.eid))
        # per host FIFO of (event, start, service, matches, redirected_from, policy name)
        jobs: list[deque] = [deque() for _ in range(m)]
        free_at = [0] * m
        expiries: list[tuple[int, int, int]] = []  # (time, host, bytes) of held output
        outputs: list[list[CompositeEvent]] = [[] for _ in range(m)]
        records: list[EventRecord] = []
        delivered = [0] * m
        trace: list[tuple] = []
        n_split = 0
        splitter_clock = 0
        completions: list[tuple[int, int, int]] = []  # heap of (completion, host, seq)
        seq = 0
        tracing = cfg.trace
        heappush, heappop = heapq.heappush, heapq.heappop

        def advance(t: int) -> None:
            while completions and completions[0][0] <= t:
                dep, h, _ = heappop(completions)
                ev, _start, service, found, red_from, pname = jobs[h].popleft()
                host = hosts[h]
                host.queue_len -= 1
                host.queued_bytes -= ev.nbytes
                host.served_count += 1
                host.service_stats.add(service)
                host.busy = bool(jobs[h])
                if found:
                    outputs[h].extend(found)
                    out_bytes = sum([c.nbytes for c in found])
                    host.output_bytes += out_bytes
                    heappush(expiries, (dep + hold, h, out_bytes))
                    if tracing:
                        trace.extend([(dep, h, ev.eid, "match")] * len(found))
                records.append(EventRecord(ev.eid, h, ev.arrival_ts, dep, red_from, pname, len(found)))
                dispatcher.on_complete(h, service, dep)
            while expiries and expiries[0][0] <= t:
                _, h, b = heappop(expiries)
                hosts[h].output_bytes -= b

        for e in events:
            t = e.start_ts if e.start_ts > splitter_clock else splitter_clock
            if completions and completions[0][0] <= t or expiries and expiries[0][0] <= t:
                advance(t)
            if e.event_type is not ptype:
                for h, c in shared.replica(e):
                    outputs[h].append(c)
                continue
            n_split += 1
            ev = e.with_arrival(e.start_ts)
            while True:
                policy = dispatcher.policy(hosts, t)
                routed = split(ev, policy, hosts, capacity, t, cfg.redirect_latency)
                if routed is not None:
                    break
                # backpressure: wait at the splitter for the next completion
                t = completions[0][0]
                advance(t)
            splitter_clock = t
            dispatcher.observe(routed, hosts, t)
            h = routed.target_host
            red_from = routed.redirected_from
            found = shared.partitioned(ev, h)
            host = hosts[h]
            ready = t if red_from is None else t + routed.redirect_latency
            host.note_arrival(ready)
            service = int(service_fn(h, ev, shared.replica_count, len(found)))
            if service < 1:
                service = 1
            start = ready if ready > free_at[h] else free_at[h]
            done = start + service
            free_at[h] = done
            host.busy_time += service
            queue = jobs[h]
            queue.append((ev, start, service, found, red_from, policy.kind.name))
            host.queue_len += 1
            host.queued_bytes += ev.nbytes
            host.busy = queue[0][1] <= t
            delivered[h] += 1
            heappush(completions, (done, h, seq))
            seq += 1
            if tracing:
                if red_from is not None:
                    trace.append((t, red_from, ev.eid, "redirect"))
                trace.append((ready, h, ev.eid, "enqueue"))
                trace.append((start, h, ev.eid, "dequeue"))

        advance(max(free_at) if completions else splitter_clock)
        end = max([splitter_clock] + free_at + ([events[-1].start_ts] if events else []))
        trace_lines = []
        if tracing:
            order = {"redirect": 0, "enqueue": 1, "dequeue": 2, "match": 3}
            trace.sort(key=lambda r: (r[0], r[1], r[2], order[r[3]]))
            trace_lines = [f"{ts},{h},{eid},{act}" for ts, h, eid, act in trace]
        records.sort(key=lambda r: r.eid)
        return RunResult(
            matches=merge(outputs, cfg.deterministic_merge),
            records=records,
            hosts=hosts,
            n_split=n_split,
            delivered=delivered,
            makespan=end,
            trace=trace_lines,
        )


# -- wall-clock driver ------------------------------------------------------


class ThreadedRuntime:
    """Same contract as :class:`ParallelRuntime` with one OS thread per worker.

    Each worker consumes a FIFO carrying both its replicated events and its
    share of the partitioned stream, so matching still sees events in stream
    order. Service is emulated with ``time.sleep`` scaled by ``time_scale``.
    """

    def __init__(
        self,
        query: PatternQuery,
        config: RuntimeConfig,
        dispatcher: Dispatcher,
        service: Optional[ServiceFn] = None,
        time_scale: float = 0.0,
    ):
        self.query = query
        self.config = config
        self.dispatcher = dispatcher
        self.service = service or constant_service()
        self.time_scale = time_scale
        self.hosts = [HostState(i) for i in range(config.m)]
        self.workers = [Worker(h, query) for h in self.hosts]

    def run(self, stream: Iterable[PrimitiveEvent]) -> RunResult:
        cfg = self.config
        m = cfg.m
        ptype = self.query.partitioned_type
        types = set(self.query.types)
        events = sorted((e for e in stream if e.event_type in types), key=lambda e: (e.start_ts, e.eid))
        inboxes: list[queue.Queue] = [queue.Queue() for _ in range(m)]
        out_q: queue.Queue = queue.Queue()
        lock = threading.Lock()
        slots = threading.Condition(lock)
        t0 = time.perf_counter_ns()

        def now() -> int:
            return (time.perf_counter_ns() - t0) // 1000

        def work(h: int) -> None:
            worker, host = self.workers[h], self.hosts[h]
            while True:
                item = inboxes[h].get()
                if item is None:
                    break
                kind, payload, policy = item
                if kind == "replica":
                    late = worker.on_replica(payload)
                    if late:
                        out_q.put(("late", h, late))
                    continue
                routed: RoutedEvent = payload
                found = worker.process(routed)
                service = max(1, int(self.service(h, routed.event, worker.replica_count, len(found))))
                if self.time_scale > 0:
                    time.sleep(service * self.time_scale / 1e6)
                dep = now()
                with slots:
                    host.queue_len -= 1
                    host.queued_bytes -= routed.event.nbytes
                    host.served_count += 1
                    host.service_stats.add(service)
                    host.busy_time += service
                    slots.notify_all()
                rec = EventRecord(routed.event.eid, h, routed.event.arrival_ts, max(dep, routed.event.arrival_ts),
                                  routed.redirected_from, policy, len(found))
                out_q.put(("done", h, (rec, found, service)))

        threads = [threading.Thread(target=work, args=(h,), daemon=True) for h in range(m)]
        for th in threads:
            th.start()
        n_split = 0
        delivered = [0] * m
        for e in events:
            if e.event_type != ptype:
                for h in range(m):
                    inboxes[h].put(("replica", e, None))
                continue
            n_split += 1
            ev = e.with_arrival(now())
            with slots:
                while True:
                    policy = self.dispatcher.policy(self.hosts, now())
                    routed = split(ev, policy, self.hosts, cfg.queue_capacity, ev.arrival_ts, cfg.redirect_latency)
                    if routed is not None:
                        break
                    slots.wait()
                self.dispatcher.observe(routed, self.hosts, now())
                host = self.hosts[routed.target_host]
                host.queue_len += 1
                host.queued_bytes += ev.nbytes
                host.note_arrival(now())
                delivered[routed.target_host] += 1
            inboxes[routed.target_host].put(("split", routed, policy.kind.name))
        for h in range(m):
            inboxes[h].put(None)
        for th in threads:
            th.join()
        outputs: list[list[CompositeEvent]] = [[] for _ in range(m)]
        records = []
        while not out_q.empty():
            kind, h, payload = out_q.get()
            if kind == "late":
                outputs[h].extend(payload)
            else:
                rec, found, service = payload
                records.append(rec)
                outputs[h].extend(found)
                self.dispatcher.on_complete(h, service, rec.departure_ts)
        records.sort(key=lambda r: r.eid)
        return RunResult(merge(outputs, cfg.deterministic_merge), records, self.hosts, n_split, delivered, now())
