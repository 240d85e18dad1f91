"""
Adaptive policy selection
=========================

Sizing of the parallelism degree and batch size, queueing-theory wait
estimates, the accuracy/latency trade-off for the segment layout and the
online choice of splitting policy with the least expected waiting time.

All durations handed to the queueing formulas are in seconds when rates
are in events per second; the controller itself keeps microseconds.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .policies import POLICY_ORDER, PolicyKind, SplittingPolicy, fallback_order
from .stats import RunningStats

log = logging.getLogger(__name__)

INF = math.inf


class SaturationError(ValueError):
    """Utilization at or above 1: the steady-state wait does not exist."""


@dataclass(frozen=True)
class SizingParams:
    lam: float
    mu: float
    delta: float = 0.9
    beta: Optional[float] = None
    tau: int = 1000

    def __post_init__(self) -> None:
        if not self.lam > 0 or not self.mu > 0:
            raise ValueError("arrival and service rates must be positive")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")


def compute_parallel_degree(p: SizingParams) -> int:
    """Smallest m >= 1 with lam / (m * mu) <= delta."""
    m = max(1, math.ceil(p.lam / (p.mu * p.delta)))
    # float rounding can put the ceiling one off in either direction
    while m > 1 and p.lam / ((m - 1) * p.mu) <= p.delta:
        m -= 1
    while p.lam / (m * p.mu) > p.delta:
        m += 1
    return m


def batch_size(p: SizingParams) -> int:
    return max(1, math.floor(p.mu * p.delta + 1e-9))


def _check_rho(rho: float, mu: float) -> None:
    if not mu > 0:
        raise ValueError("mu must be positive")
    if rho < 0:
        raise ValueError("utilization cannot be negative")
    if rho >= 1:
        raise SaturationError(f"utilization {rho:.4g} >= 1")


def kingman_wait(rho: float, mu: float, c2a: float, c2s: float) -> float:
    """G/G/1 mean queueing delay, (1/mu) * rho/(1-rho) * (c2a+c2s)/2."""
    _check_rho(rho, mu)
    return (1.0 / mu) * (rho / (1.0 - rho)) * ((c2a + c2s) / 2.0)


def multiserver_wait(rho: float, mu: float, m: int, c2a: float, c2s: float) -> float:
    """G/G/m mean queueing delay (Sakasegawa-type approximation)."""
    _check_rho(rho, mu)
    if m < 1:
        raise ValueError("m must be >= 1")
    if rho == 0:
        return 0.0
    return rho ** (math.sqrt(2 * (m + 1)) - 1) / (mu * m * (1 - rho)) * ((c2a + c2s) / 2.0)


# -- estimation accuracy / processing-time trade-off ------------------------


def segment_series(history: Sequence[float], q: int, tau: int) -> Optional[np.ndarray]:
    """Mean value of each of the ``tau // q`` segments of ``q`` entries in the
    most recent ``tau`` history entries (``None`` if the history is shorter)."""
    if q < 1 or tau % q:
        raise ValueError(f"q={q} must divide tau={tau}")
    if len(history) < tau:
        return None
    h = np.asarray(history[len(history) - tau:], dtype=float)
    return h.reshape(tau // q, q).mean(axis=1)


def _lag_mse(seg: np.ndarray, l: int) -> Optional[float]:
    n = len(seg)
    count = n - l - 1
    if count <= 0:
        return None
    # segment w (1-based, w = 1..n-l-1) predicts segment w + l
    d = seg[: n - 1 - l] - seg[l: n - 1]
    return float(np.dot(d, d) / count)


def estimation_mse(history: Sequence[float], q: int, l: int, tau: int) -> Optional[float]:
    """Mean squared error of lag-``l`` predictions over ``tau // q`` segments.

    ``history`` holds one expected-wait value per batch, newest last; the last
    ``tau`` entries are grouped into segments of ``q`` batches. Returns
    ``None`` when ``tau // q - l - 1 <= 0`` or the history is too short.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    seg = segment_series(history, q, tau)
    if seg is None:
        return None
    return _lag_mse(seg, l)


@dataclass
class TimingStats:
    """Batch-level timings in one consistent unit (the controller uses microseconds)."""

    t_ps_batch: float
    t_rd: float = 0.0
    t_es_batch: float = 0.0
    c2a: float = 1.0
    c2s: float = 1.0

    def __post_init__(self) -> None:
        if min(self.t_ps_batch, self.t_rd, self.t_es_batch) < 0 or min(self.c2a, self.c2s) < 0:
            raise ValueError("timings and variation coefficients must be non-negative")


@dataclass(frozen=True)
class TradeoffResult:
    q: int
    l: int
    mse: Optional[float]
    objective: float
    feasible: bool


def segment_processing_time(stats: TimingStats, q: int) -> float:
    return q * stats.t_ps_batch + (q - 1) * stats.t_rd


def processing_constraint_ok(stats: TimingStats, q: int, l: int, m: int) -> bool:
    return l * segment_processing_time(stats, q) / m > q * stats.t_es_batch


def divisors(n: int) -> list[int]:
    small = [d for d in range(1, math.isqrt(n) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


def tradeoff_solve(
    stats: TimingStats, p: SizingParams, m: int, history: Sequence[float], beta: Optional[float] = None
) -> TradeoffResult:
    """Pick (q, l) minimising MSE / segment-processing-time.

    The horizon is ``n = tau // i`` batches; ``q`` ranges over divisors of
    ``n`` and ``l`` over ``1..n``. Feasible pairs have a defined MSE below
    ``beta`` and satisfy ``l * T_seg / m > q * T_es``. Ties favour lower l,
    then lower q. With no feasible pair the history is too erratic for any
    layout to meet the bound; the solver then returns the most responsive
    layout ``(1, 1)`` with ``feasible=False``.
    """
    beta = p.beta if beta is None else beta
    n = horizon(p)
    best: Optional[tuple] = None
    for q in divisors(n):
        seg_time = segment_processing_time(stats, q)
        if seg_time <= 0:
            continue
        seg = segment_series(history, q, n)
        if seg is None:
            continue
        for l in range(1, n + 1):
            mse = _lag_mse(seg, l)
            if mse is None:
                break
            if beta is not None and not mse < beta:
                continue
            if not processing_constraint_ok(stats, q, l, m):
                continue
            cand = (mse / seg_time, l, q, mse)
            if best is None or cand[:3] < best[:3]:
                best = cand
    if best is None:
        log.debug("no feasible (q, l); falling back to q=1, l=1")
        return TradeoffResult(1, 1, None, INF, False)
    obj, l, q, mse = best
    return TradeoffResult(q, l, mse, obj, True)


def horizon(p: SizingParams) -> int:
    """Estimation horizon in batches: one epoch of tau events, at least 3 batches."""
    return max(3, p.tau // batch_size(p))


# -- assignment / redirect histograms ---------------------------------------


class AssignHistogram:
    """Per-policy, per-host assignment and redirect counts, plus per-host
    redirect-latency histograms with fixed-width buckets centred on
    multiples of ``bucket_width``."""

    def __init__(self, m: int, bucket_width: int = 100, n_buckets: int = 32):
        if m < 1 or bucket_width <= 0 or n_buckets < 1:
            raise ValueError("invalid histogram shape")
        self.m = m
        self.bucket_width = bucket_width
        self.n_buckets = n_buckets
        self.assigned: dict[PolicyKind, list[float]] = {}
        self.redirected: dict[PolicyKind, list[float]] = {}
        self.latency = [[0.0] * n_buckets for _ in range(m)]

    def _row(self, table: dict, policy: PolicyKind) -> list[float]:
        row = table.get(policy)
        if row is None:
            row = table[policy] = [0.0] * self.m
        return row

    def record_assignment(
        self, policy: PolicyKind | str, host: int, redirected: bool = False, redirect_latency: Optional[int] = None
    ) -> "AssignHistogram":
        if policy.__class__ is not PolicyKind:
            policy = PolicyKind(policy)
        if not 0 <= host < self.m:
            raise IndexError(f"host {host} out of range")
        self._row(self.assigned, policy)[host] += 1
        red = self._row(self.redirected, policy)
        if redirected:
            red[host] += 1
            if redirect_latency is not None:
                self.record_latency(host, redirect_latency)
        return self

    def record_latency(self, host: int, latency: int) -> None:
        b = min(self.n_buckets - 1, max(0, int(round(latency / self.bucket_width))))
        self.latency[host][b] += 1

    def observed(self, policy: PolicyKind) -> bool:
        row = self.assigned.get(policy)
        return row is not None and sum(row) > 0

    def total(self, policy: PolicyKind) -> float:
        return sum(self.assigned.get(policy, ()))

    def p_host(self, policy: PolicyKind) -> list[float]:
        row = self.assigned.get(PolicyKind(policy))
        tot = sum(row) if row else 0.0
        if not tot:
            return [0.0] * self.m
        return [c / tot for c in row]

    def p_redirect(self, policy: PolicyKind) -> list[float]:
        policy = PolicyKind(policy)
        tot = self.total(policy)
        row = self.redirected.get(policy)
        if not tot or row is None:
            return [0.0] * self.m
        return [c / tot for c in row]

    def buckets(self, host: Optional[int] = None) -> list[tuple[float, float]]:
        """(midpoint, relative frequency) for non-empty buckets."""
        counts = self.latency[host] if host is not None else [sum(c) for c in zip(*self.latency)]
        tot = sum(counts)
        if not tot:
            return []
        return [(r * self.bucket_width, c / tot) for r, c in enumerate(counts) if c]

    def decay(self, factor: float, policies: Optional[Sequence[PolicyKind]] = None) -> None:
        for table in (self.assigned, self.redirected):
            for pol, row in table.items():
                if policies is None or pol in policies:
                    table[pol] = [c * factor for c in row]
        if policies is None:
            self.latency = [[c * factor for c in row] for row in self.latency]


def record_assignment(hist: AssignHistogram, policy, host: int, redirected: bool = False,
                      redirect_latency: Optional[int] = None) -> AssignHistogram:
    return hist.record_assignment(policy, host, redirected, redirect_latency)


def expected_value(buckets: Sequence[tuple[float, float]]) -> float:
    return float(sum(x * f for x, f in buckets))


def expected_redirect_time(hist: AssignHistogram | Sequence[tuple[float, float]], host: Optional[int] = None) -> float:
    """Probability-weighted mean of redirect-latency bucket midpoints (0 if none)."""
    if isinstance(hist, AssignHistogram):
        return expected_value(hist.buckets(host))
    return expected_value(hist)


def policy_expected_wait(
    p_host: Sequence[float],
    host_waits: Sequence[float],
    p_redirect: Optional[Sequence[float]] = None,
    redirect_waits: Optional[Sequence[float]] = None,
) -> float:
    """Sum over hosts of P(assign) * wait + P(redirect) * redirect time.

    A host with infinite wait that receives any share makes the policy
    saturated (returns ``inf``).
    """
    total = 0.0
    for i, (p, w) in enumerate(zip(p_host, host_waits)):
        if p > 0:
            if math.isinf(w):
                return INF
            total += p * w
        if p_redirect is not None and redirect_waits is not None:
            total += p_redirect[i] * redirect_waits[i]
    return total


@dataclass(frozen=True)
class PolicyDecision:
    chosen: PolicyKind
    waits: Mapping[PolicyKind, float]
    epoch: int = 0


def select_policy(waits: Mapping[PolicyKind, Optional[float]], epoch: int = 0) -> PolicyDecision:
    """Argmin of expected wait; ties and all-unknown fall back in RR < JSQ < LLSF order.

    ``None`` marks a candidate without observations; ``inf`` marks saturation.
    """
    known = {k: w for k, w in waits.items() if w is not None and not math.isinf(w)}
    if not known:
        return PolicyDecision(PolicyKind.RR, dict(waits), epoch)
    best = min(known, key=lambda k: (known[k], POLICY_ORDER.index(k)))
    return PolicyDecision(best, dict(waits), epoch)


# -- online controller ------------------------------------------------------


@dataclass
class APPSConfig:
    decay: float = 0.8
    estimate_cost_per_event: float = 2.0
    bucket_width: int = 100
    n_buckets: int = 32
    include_service: bool = True
    candidates: tuple[PolicyKind, ...] = POLICY_ORDER
    # a candidate is never rated better than its own recent on-policy estimate
    on_policy_memory: bool = True
    memory_min_weight: float = 0.1


@dataclass
class TraceRow:
    epoch: int
    candidate: str
    expected_wait: float
    chosen: str
    q: int
    l: int
    mse: Optional[float]


@dataclass
class _Shadow:
    occupancy: list[RunningStats]


class APPSController:
    """Dispatcher that re-selects the splitting policy at every segment boundary.

    Every candidate policy is evaluated on each dispatch ("shadow" routing):
    the host it would pick and the occupancy that host shows are recorded
    in its histogram, while only the active policy actually routes.
    """

    def __init__(self, params: SizingParams, m: int, config: Optional[APPSConfig] = None):
        self.params = params
        self.m = m
        self.config = config or APPSConfig()
        self.histogram = AssignHistogram(m, self.config.bucket_width, self.config.n_buckets)
        self.policies = {k: SplittingPolicy(k, m) for k in self.config.candidates}
        self.shadow = {k: _Shadow([RunningStats() for _ in range(m)]) for k in self.config.candidates}
        self.active = PolicyKind.RR
        self.batch = batch_size(params)
        self.horizon = horizon(params)
        # shortest segments until the first trade-off solve has data
        self.q = 1
        self.l = 1
        self.capacity: Optional[int] = None
        self.mse: Optional[float] = None
        self.beta = params.beta
        self.tradeoff_feasible = False
        self.history: deque[float] = deque(maxlen=self.horizon)
        self.snapshots: deque[dict] = deque(maxlen=params.tau + 2)
        self.trace: list[TraceRow] = []
        self.decisions = 0
        self.n_dispatched = 0
        self._seg_count = 0
        self._hosts = None
        self._arrivals = RunningStats()
        self._last_arrival: Optional[int] = None
        self._batch_arrivals = RunningStats()
        self._batch_first: Optional[int] = None
        self._redirect_lat = RunningStats()
        self.on_policy = {k: RunningStats() for k in self.config.candidates}
        self.routed = [0.0] * m  # decayed count of events actually sent to each host

    # dispatcher protocol
    def policy(self, hosts, now) -> SplittingPolicy:
        return self.policies[self.active]

    def on_complete(self, host_id: int, service_us: int, now: int) -> None:
        pass

    def observe(self, routed, hosts, now) -> None:
        self._hosts = hosts
        hist = self.histogram
        assigned = hist.assigned
        cap = self.capacity
        for kind, pol in self.policies.items():
            if kind is self.active:
                target = routed.target_host
                red = routed.redirected_from is not None
                if red:
                    self._redirect_lat.add(routed.redirect_latency)
                hist.record_assignment(kind, target, red, routed.redirect_latency)
                self.routed[target] += 1
            else:
                target = pol.first_choice(hosts)
                if cap is not None and hosts[target].queue_len >= cap:
                    red = False
                    for h in fallback_order(pol, hosts, target):
                        if hosts[h].queue_len < cap:
                            target, red = h, True
                            break
                    hist.record_assignment(kind, target, red)
                else:
                    row = assigned.get(kind)
                    if row is None:
                        hist.record_assignment(kind, target)
                    else:
                        row[target] += 1
            self.shadow[kind].occupancy[target].add(hosts[target].queue_len)

        t = routed.event.arrival_ts
        if self._last_arrival is not None:
            gap = t - self._last_arrival
            self._arrivals.add(gap)
            self._batch_arrivals.add(gap)
        self._last_arrival = t
        self.n_dispatched += 1
        self._seg_count += 1
        if self._batch_first is None:
            self._batch_first = t
        if self.n_dispatched % self.batch == 0:
            self._close_batch(t)
        if self._seg_count >= self.q * self.batch:
            self._seg_count = 0
            self._close_segment()
        if self.n_dispatched % (self.horizon * self.batch) == 0:
            self._close_epoch()

    # estimation
    def arrival_rate(self) -> float:
        s = self._arrivals
        return 1e6 / s.mean if s.weight > 0 and s.mean > 0 else self.params.lam

    def host_waits(self, kind: PolicyKind, hosts) -> list[float]:
        """Expected time at each host for events routed by ``kind`` (seconds)."""
        p_host = self.histogram.p_host(kind)
        lam = self.arrival_rate()
        routed_total = sum(self.routed)
        out = []
        for i, h in enumerate(hosts):
            mu = h.measured_rate
            if p_host[i] * lam / mu >= 1:
                out.append(INF)
                continue
            occ = self.shadow[kind].occupancy[i]
            n_seen = occ.mean if occ.weight > 0 else 0.0
            rho = n_seen / (1.0 + n_seen)
            # the occupancy was observed under the real routing; rescale it to
            # the share of traffic this policy would send to host i
            if routed_total > 0 and self.routed[i] > 0:
                rho *= (p_host[i] * routed_total) / self.routed[i]
            if rho >= 1:
                out.append(INF)
                continue
            c2a = h.inter_arrival_stats.scv if h.inter_arrival_stats.weight > 0 else 1.0
            c2s = h.service_stats.scv if h.service_stats.weight > 0 else 1.0
            w = kingman_wait(rho, mu, c2a, c2s)
            if self.config.include_service:
                w += 1.0 / mu
            out.append(w)
        return out

    def expected_waits(self, hosts) -> dict[PolicyKind, Optional[float]]:
        red_w = [expected_redirect_time(self.histogram, i) / 1e6 for i in range(self.m)]
        waits: dict[PolicyKind, Optional[float]] = {}
        for kind in self.policies:
            if not self.histogram.observed(kind):
                waits[kind] = None
                continue
            waits[kind] = policy_expected_wait(
                self.histogram.p_host(kind), self.host_waits(kind, hosts),
                self.histogram.p_redirect(kind), red_w,
            )
        return waits

    def _close_batch(self, t: int) -> None:
        hosts = self._hosts
        mu = sum(h.measured_rate for h in hosts) / len(hosts)
        dur = t - (self._batch_first or t)
        lam = (self.batch - 1) * 1e6 / dur if dur > 0 else self.arrival_rate()
        rho = min(lam / (self.m * mu), 0.999)
        c2a = self._batch_arrivals.scv
        c2s = sum(h.service_stats.scv for h in hosts) / len(hosts)
        self.history.append(multiserver_wait(rho, mu, self.m, c2a, c2s))
        self._batch_arrivals = RunningStats()
        self._batch_first = None

    def _close_segment(self) -> None:
        hosts = self._hosts
        self.snapshots.append(self._remembered(self.expected_waits(hosts)))
        # data from segment nu-1-l drives the policy of segment nu
        idx = max(0, len(self.snapshots) - 1 - self.l)
        decision = select_policy(self.snapshots[idx], self.decisions)
        self.active = decision.chosen
        for kind in self.policies:
            w = decision.waits.get(kind)
            self.trace.append(TraceRow(self.decisions, kind.name, INF if w is None else w,
                                       decision.chosen.name, self.q, self.l, self.mse))
        self.decisions += 1
        self._forget()

    def _remembered(self, waits: dict[PolicyKind, Optional[float]]) -> dict[PolicyKind, Optional[float]]:
        """Fold in on-policy history.

        Shadow estimates are open loop: they cannot see how a policy would
        reshape the queues it routes to. The estimate recorded while a policy
        was really active can, so it acts as a floor until it decays away.
        """
        w_act = waits.get(self.active)
        if w_act is not None and math.isfinite(w_act):
            self.on_policy[self.active].add(w_act)
        if not self.config.on_policy_memory:
            return waits
        out = dict(waits)
        for kind, w in waits.items():
            mem = self.on_policy[kind]
            if kind is not self.active and w is not None and mem.weight >= self.config.memory_min_weight:
                out[kind] = max(w, mem.mean)
        return out

    def timing_stats(self) -> TimingStats:
        hosts = self._hosts
        svc = [h.service_stats.mean for h in hosts if h.service_stats.weight > 0]
        t_ps = (sum(svc) / len(svc) if svc else 1e6 / self.params.mu) * self.batch
        t_rd = self._redirect_lat.mean if self._redirect_lat.weight > 0 else 0.0
        t_es = self.config.estimate_cost_per_event * self.batch * len(self.policies)
        c2s = sum(h.service_stats.scv for h in hosts) / len(hosts)
        return TimingStats(t_ps, t_rd, t_es, self._arrivals.scv, c2s)

    def _close_epoch(self) -> None:
        hist = list(self.history)
        if self.beta is None:
            self.beta = default_beta(hist, self.horizon)
        if self.beta is not None:
            res = tradeoff_solve(self.timing_stats(), self.params, self.m, hist, self.beta)
            self.q, self.l, self.mse, self.tradeoff_feasible = res.q, res.l, res.mse, res.feasible

    def _forget(self) -> None:
        """Exponential forgetting, once per segment, so stale data cannot lock in a policy."""
        f = self.config.decay
        self.histogram.decay(f)
        for sh in self.shadow.values():
            for s in sh.occupancy:
                s.decay(f)
        for h in self._hosts:
            h.service_stats.decay(f)
            h.inter_arrival_stats.decay(f)
        self._arrivals.decay(f)
        self._redirect_lat.decay(f)
        self.routed = [c * f for c in self.routed]
        for mem in self.on_policy.values():
            mem.decay(f)


def default_beta(history: Sequence[float], n: int, quantile: float = 0.9) -> Optional[float]:
    """``quantile`` of the MSE over every (q, l) the history supports."""
    values = []
    for q in divisors(n):
        seg = segment_series(history, q, n)
        if seg is None:
            continue
        for l in range(1, n):
            v = _lag_mse(seg, l)
            if v is None:
                break
            values.append(v)
    if not values:
        return None
    b = float(np.quantile(values, quantile))
    # strict "< beta" must still admit a perfectly constant history
    return b if b > 0 else 1e-12
