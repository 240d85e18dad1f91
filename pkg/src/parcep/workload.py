"""
Synthetic workloads and scenario runs
=====================================

Generates timestamped event streams, runs a query through the parallel
runtime under one dispatch method, and summarizes the processing times.

Processing time of an event is ``departure_ts - arrival_ts``, where the
arrival is stamped by the splitter. Service times come from a
:class:`ServiceModel` whose random part is drawn once per event id, so
every method in a comparison sees the same service demand for the same
event (common random numbers).
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .apps import APPSConfig, APPSController, SizingParams, TraceRow
from .events import US_PER_S, PrimitiveEvent, make_primitive
from .policies import PolicyKind
from .query import PatternQuery, parse_query
from .runtime import ParallelRuntime, RunResult, RuntimeConfig, ServiceFn, StaticDispatcher, ThreadedRuntime

METHODS = ("rr", "jsq", "llsf", "apps")


@dataclass(frozen=True)
class RateProfile:
    """Per-stream arrival rate (events/s) in equal-length consecutive phases."""

    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.rates:
            raise ValueError("rate profile needs at least one phase")
        if any(not r > 0 for r in self.rates):
            raise ValueError("rates must be positive")

    @classmethod
    def constant(cls, rate: float) -> "RateProfile":
        return cls((float(rate),))

    @classmethod
    def ramp(cls, start: float, stop: float, phases: int = 4) -> "RateProfile":
        """``phases`` evenly spaced rates from ``start`` to ``stop``."""
        if phases < 2:
            return cls.constant(start)
        return cls(tuple(float(x) for x in np.linspace(start, stop, phases)))

    def rate_at(self, t: float, duration: float) -> float:
        if duration <= 0:
            return self.rates[0]
        k = min(len(self.rates) - 1, int(t / duration * len(self.rates)))
        return self.rates[k]

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.rates))

    def __str__(self) -> str:
        return "/".join(f"{r:g}" for r in self.rates)


@dataclass(frozen=True)
class WorkloadSpec:
    rate_profile: RateProfile = field(default_factory=lambda: RateProfile.constant(100.0))
    inter_arrival: str = "exponential"
    key_cardinality: int = 10
    key_skew: float = 0.0  # Zipf exponent; 0 gives uniform keys
    duration: float = 10.0  # seconds
    seed: int = 0
    types: tuple[str, ...] = ("E1", "E2")
    key: str = "Id"

    def __post_init__(self) -> None:
        if self.inter_arrival not in ("deterministic", "exponential"):
            raise ValueError(f"unknown inter-arrival distribution {self.inter_arrival!r}")
        if self.key_cardinality < 1:
            raise ValueError("key_cardinality must be >= 1")
        if self.key_skew < 0:
            raise ValueError("key_skew must be >= 0")
        if not self.duration >= 0:
            raise ValueError("duration must be >= 0")
        if not self.types:
            raise ValueError("at least one stream type is required")

    def key_probabilities(self) -> np.ndarray:
        w = 1.0 / np.arange(1, self.key_cardinality + 1) ** self.key_skew
        return w / w.sum()


def _arrival_times(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    out = []
    if spec.inter_arrival == "deterministic":
        # each phase restarts its grid at the phase boundary, so the count
        # per phase is exact rather than subject to accumulated rounding
        rates = spec.rate_profile.rates
        span = spec.duration / len(rates)
        for p, rate in enumerate(rates):
            n = math.ceil(span * rate - 1e-9)
            out.extend(p * span + k / rate for k in range(n))
        return np.round(np.asarray(out, dtype=float) * US_PER_S).astype(np.int64)
    t = 0.0
    while True:
        rate = spec.rate_profile.rate_at(t, spec.duration)
        t += rng.exponential(1.0 / rate)
        if t >= spec.duration:
            break
        out.append(t)
    return np.round(np.asarray(out, dtype=float) * US_PER_S).astype(np.int64)


def generate_streams(spec: WorkloadSpec) -> tuple[list[PrimitiveEvent], ...]:
    """One stream per entry of ``spec.types``, in that order.

    Event ids are assigned in merged (timestamp, stream) order, so they are
    unique across the returned streams. Every stream has its own random
    generator spawned from ``spec.seed``.
    """
    seqs = np.random.SeedSequence(spec.seed).spawn(len(spec.types))
    probs = spec.key_probabilities()
    raw = []
    for idx, (name, ss) in enumerate(zip(spec.types, seqs)):
        rng = np.random.default_rng(ss)
        times = _arrival_times(spec, rng)
        keys = rng.choice(spec.key_cardinality, size=len(times), p=probs)
        raw.extend((int(t), idx, int(k)) for t, k in zip(times, keys))
    raw.sort()
    streams: list[list[PrimitiveEvent]] = [[] for _ in spec.types]
    for eid, (t, idx, k) in enumerate(raw):
        streams[idx].append(make_primitive(spec.types[idx], t, ((spec.key, k),), eid=eid))
    return tuple(streams)


def merge_streams(streams: Iterable[Sequence[PrimitiveEvent]]) -> list[PrimitiveEvent]:
    return sorted((e for s in streams for e in s), key=lambda e: (e.start_ts, e.eid))


@dataclass(frozen=True)
class ServiceModel:
    """Service time = (base + per_item * buffered replicas + per_match * matches) * slowdown.

    Costs are in seconds. With ``distribution="exponential"`` the time is
    scaled by a unit-mean exponential draw fixed per event id.
    ``capacity_limit`` (events/s) puts a floor of ``1/capacity_limit`` on
    every service time.
    """

    base: float = 0.005
    per_item: float = 0.0
    per_match: float = 0.0
    distribution: str = "exponential"
    capacity_limit: Optional[float] = None
    slowdown: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.base > 0:
            raise ValueError("base cost must be positive")
        if self.per_item < 0 or self.per_match < 0:
            raise ValueError("costs must be non-negative")
        if self.distribution not in ("deterministic", "exponential"):
            raise ValueError(f"unknown service distribution {self.distribution!r}")
        if self.capacity_limit is not None and not self.capacity_limit > 0:
            raise ValueError("capacity_limit must be positive")
        if any(not s > 0 for s in self.slowdown):
            raise ValueError("slowdown factors must be positive")

    def host_factor(self, host: int) -> float:
        return self.slowdown[host] if host < len(self.slowdown) else 1.0

    def mean_time(self, host: int = 0, buffer_len: int = 0, n_matches: int = 0) -> float:
        t = (self.base + self.per_item * buffer_len + self.per_match * n_matches) * self.host_factor(host)
        if self.capacity_limit is not None:
            t = max(t, 1.0 / self.capacity_limit)
        return t

    def bind(self, n_events: int) -> ServiceFn:
        """Service function for a stream whose event ids lie in ``[0, n_events)``."""
        if self.distribution == "exponential":
            draws = np.random.default_rng(self.seed).exponential(1.0, size=max(n_events, 1))
        else:
            draws = np.ones(max(n_events, 1))
        draws = draws.tolist()
        base, per_item, per_match = self.base, self.per_item, self.per_match
        factors = list(self.slowdown)
        floor = 0.0 if self.capacity_limit is None else 1.0 / self.capacity_limit

        def service(host: int, event: PrimitiveEvent, buffer_len: int, n_matches: int) -> int:
            t = base + per_item * buffer_len + per_match * n_matches
            if host < len(factors):
                t *= factors[host]
            t *= draws[event.eid % len(draws)]
            if t < floor:
                t = floor
            return int(t * US_PER_S)

        return service


@dataclass(frozen=True)
class Calibration:
    """Timing estimates from a probe run of a service model (seconds)."""

    mu: float
    t_ps: float
    t_es: float
    t_rd: float


def calibrate(model: ServiceModel, n: int = 20000, buffer_len: int = 0, estimate_cost: float = 2e-6,
              redirect_latency: float = 0.0) -> Calibration:
    """Estimate the per-host service rate by sampling the model ``n`` times.

    Deterministic given the model's seed.
    """
    fn = model.bind(n)
    samples = np.array([fn(0, _probe(i), buffer_len, 0) for i in range(n)], dtype=float) / US_PER_S
    mean = float(samples.mean())
    return Calibration(mu=1.0 / mean, t_ps=mean, t_es=estimate_cost, t_rd=redirect_latency)


def _probe(eid: int) -> PrimitiveEvent:
    return make_primitive("PROBE", 0, eid=eid)


# -- scenarios --------------------------------------------------------------


@dataclass
class ExperimentReport:
    method: str
    m: int
    n_events: int
    n_matches: int
    mean_ms: float
    median_ms: float
    p99_ms: float
    throughput: float  # partitioned events per second of virtual time
    utilization: list[float]
    redirects: int
    policy_trace: list[TraceRow] = field(default_factory=list)
    processing_times: list[int] = field(default_factory=list, repr=False)
    labels: dict[str, str] = field(default_factory=dict)

    @classmethod
    def empty(cls, method: str, m: int) -> "ExperimentReport":
        nan = math.nan
        return cls(method, m, 0, 0, nan, nan, nan, 0.0, [0.0] * m, 0)

    @classmethod
    def from_run(cls, method: str, m: int, result: RunResult, trace: Sequence[TraceRow] = ()) -> "ExperimentReport":
        pt = np.asarray(result.processing_times, dtype=float)
        if pt.size == 0:
            rep = cls.empty(method, m)
            rep.n_matches = len(result.matches)
            return rep
        ms = pt / 1000.0
        return cls(
            method=method,
            m=m,
            n_events=int(pt.size),
            n_matches=len(result.matches),
            mean_ms=float(ms.mean()),
            median_ms=float(np.median(ms)),
            p99_ms=float(np.percentile(ms, 99)),
            throughput=pt.size * US_PER_S / result.makespan if result.makespan > 0 else 0.0,
            utilization=result.utilization(),
            redirects=sum(1 for r in result.records if r.redirected_from is not None),
            policy_trace=list(trace),
            processing_times=[int(x) for x in pt],
        )


@dataclass
class Scenario:
    """Everything needed to run one cell of an experiment."""

    query: PatternQuery
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    service: ServiceModel = field(default_factory=ServiceModel)
    m: Optional[int] = 2
    methods: tuple[str, ...] = METHODS
    queue_capacity: int = 64
    delta: float = 0.9
    beta: Optional[float] = None
    tau: int = 1000
    mode: str = "virtual"
    time_scale: float = 0.0
    apps: APPSConfig = field(default_factory=APPSConfig)

    def __post_init__(self) -> None:
        if self.m is not None and self.m < 1:
            raise ValueError("m must be >= 1")
        for meth in self.methods:
            if meth not in METHODS:
                raise ValueError(f"unknown method {meth!r}")
        if self.mode not in ("virtual", "wallclock"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def expected_buffer(self) -> int:
        """Replicas a worker holds in steady state: every replicated stream over one window."""
        n_replicated = len(self.query.types) - 1
        return int(n_replicated * self.workload.rate_profile.mean_rate * self.query.window / US_PER_S)

    def sizing(self) -> SizingParams:
        """Sizing inputs: mean stream rate and the service rate calibrated at the expected buffer size."""
        mu = calibrate(self.service, n=2000, buffer_len=self.expected_buffer()).mu
        return SizingParams(self.workload.rate_profile.mean_rate, mu, self.delta, self.beta, self.tau)


def run_scenario(
    query: PatternQuery,
    spec: WorkloadSpec,
    service: ServiceModel,
    method: str,
    m: int,
    *,
    queue_capacity: int = 64,
    params: Optional[SizingParams] = None,
    apps_config: Optional[APPSConfig] = None,
    mode: str = "virtual",
    time_scale: float = 0.0,
    streams: Optional[Sequence[Sequence[PrimitiveEvent]]] = None,
) -> ExperimentReport:
    """Run ``query`` over the generated workload with one dispatch method."""
    method = str(method).lower()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if m < 1:
        raise ValueError("m must be >= 1")
    if spec.duration == 0:
        return ExperimentReport.empty(method, m)
    if streams is None:
        streams = generate_streams(replace(spec, types=tuple(t.name for t in query.types)))
    stream = merge_streams(streams)
    n_ids = max((e.eid for e in stream), default=-1) + 1
    config = RuntimeConfig(m=m, queue_capacity=queue_capacity, mode=mode)
    if method == "apps":
        if params is None:
            mu = calibrate(service, n=2000).mu
            params = SizingParams(spec.rate_profile.mean_rate, mu)
        dispatcher = APPSController(params, m, apps_config)
        dispatcher.capacity = queue_capacity
    else:
        dispatcher = StaticDispatcher(PolicyKind(method), m)
    fn = service.bind(n_ids)
    if mode == "wallclock":
        result = ThreadedRuntime(query, config, dispatcher, fn, time_scale=time_scale).run(stream)
    else:
        result = ParallelRuntime(query, config, dispatcher, fn).run(stream)
    trace = dispatcher.trace if method == "apps" else []
    return ExperimentReport.from_run(method, m, result, trace)


def run_cell(sc: Scenario, labels: Optional[dict[str, str]] = None) -> list[ExperimentReport]:
    """Every method of ``sc`` on the same input streams."""
    m = sc.m
    params = sc.sizing()
    if m is None:
        from .apps import compute_parallel_degree

        m = compute_parallel_degree(params)
    streams = None
    if sc.workload.duration > 0:
        streams = generate_streams(replace(sc.workload, types=tuple(t.name for t in sc.query.types)))
    out = []
    for meth in sc.methods:
        rep = run_scenario(sc.query, sc.workload, sc.service, meth, m, queue_capacity=sc.queue_capacity,
                           params=params, apps_config=sc.apps, mode=sc.mode, time_scale=sc.time_scale,
                           streams=streams)
        rep.labels = dict(labels or {})
        out.append(rep)
    return out


def with_parameter(sc: Scenario, parameter: str, value: float) -> Scenario:
    """Copy of ``sc`` with the window (seconds) or the constant rate (events/s) replaced."""
    if parameter == "window":
        q = sc.query
        return replace(sc, query=PatternQuery(q.pattern, int(round(value * US_PER_S)), q.where_key))
    if parameter == "rate":
        return replace(sc, workload=replace(sc.workload, rate_profile=RateProfile.constant(value)))
    raise ValueError(f"cannot sweep {parameter!r}; use 'window' or 'rate'")


def sweep(parameter: str, values: Sequence[float], base: Scenario) -> list[ExperimentReport]:
    """One report per value per method. The seed is the same in every cell."""
    if not values:
        raise ValueError("sweep needs at least one value")
    out = []
    for v in values:
        out.extend(run_cell(with_parameter(base, parameter, v), {parameter: f"{v:g}"}))
    return out


# -- output -----------------------------------------------------------------

REPORT_COLUMNS = ("parameter", "value", "method", "m", "n_events", "n_matches", "mean_ms", "median_ms",
                  "p99_ms", "throughput", "redirects", "utilization")
TRACE_COLUMNS = ("parameter", "value", "method", "epoch", "candidate", "expected_wait_ms", "chosen", "q", "l", "mse")


def _f(x: Optional[float]) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return "nan" if math.isnan(x) else "inf"
    return f"{x:.6f}"


def _label(rep: ExperimentReport) -> tuple[str, str]:
    if not rep.labels:
        return "", ""
    k, v = next(iter(rep.labels.items()))
    return k, v


def report_rows(reports: Sequence[ExperimentReport]) -> list[list[str]]:
    rows = []
    for r in reports:
        p, v = _label(r)
        rows.append([p, v, r.method, str(r.m), str(r.n_events), str(r.n_matches), _f(r.mean_ms), _f(r.median_ms),
                     _f(r.p99_ms), _f(r.throughput), str(r.redirects), ";".join(f"{u:.4f}" for u in r.utilization)])
    return rows


def trace_rows(reports: Sequence[ExperimentReport]) -> list[list[str]]:
    rows = []
    for r in reports:
        p, v = _label(r)
        for t in r.policy_trace:
            wait = t.expected_wait * 1000.0 if math.isfinite(t.expected_wait) else t.expected_wait
            rows.append([p, v, r.method, str(t.epoch), t.candidate, _f(wait), t.chosen, str(t.q), str(t.l),
                         _f(t.mse)])
    return rows


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_text(reports: Sequence[ExperimentReport]) -> str:
    lines = [f"{'cell':<14} {'method':<6} {'m':>2} {'events':>7} {'mean ms':>10} {'median ms':>10} "
             f"{'p99 ms':>10} {'ev/s':>9}"]
    for r in reports:
        p, v = _label(r)
        cell = f"{p}={v}" if p else "-"
        lines.append(f"{cell:<14} {r.method:<6} {r.m:>2} {r.n_events:>7} {r.mean_ms:>10.3f} {r.median_ms:>10.3f} "
                     f"{r.p99_ms:>10.3f} {r.throughput:>9.2f}")
    return "\n".join(lines) + "\n"


def write_reports(reports: Sequence[ExperimentReport], out_dir: str) -> dict[str, str]:
    """Write ``report.csv``, ``adaptation_trace.csv`` and ``summary.txt``; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "report.csv": _csv_text(REPORT_COLUMNS, report_rows(reports)),
        "adaptation_trace.csv": _csv_text(TRACE_COLUMNS, trace_rows(reports)),
        "summary.txt": summary_text(reports),
    }
    paths = {}
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths[name] = path
    return paths


# -- scenario files ---------------------------------------------------------


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def load_scenario(path_or_text: str) -> Scenario:
    """Read a scenario from an INI file (or INI text).

    Sections and keys (all optional except ``[query] text``)::

        [query]    text = PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s
        [workload] rate = 100 | ramp = 100 200 300 400, inter_arrival, key_cardinality,
                   key_skew, duration (s), seed
        [service]  base_ms, per_item_ms, per_match_ms, distribution, capacity_limit,
                   slowdown = 3 1, seed
        [run]      methods = rr jsq llsf apps, m (or auto), queue_capacity, delta, beta, tau, mode
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        if os.path.exists(path_or_text):
            with open(path_or_text, encoding="utf-8") as fh:
                cp.read_file(fh)
        else:
            cp.read_string(path_or_text)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(str(exc)) from None
    try:
        if not cp.has_option("query", "text"):
            raise ConfigError("missing [query] text")
        query = parse_query(cp.get("query", "text"))
        wl = cp["workload"] if cp.has_section("workload") else {}
        if "ramp" in wl:
            profile = RateProfile(tuple(_floats(wl["ramp"])))
        else:
            profile = RateProfile.constant(float(wl.get("rate", 100)))
        workload = WorkloadSpec(
            rate_profile=profile,
            inter_arrival=wl.get("inter_arrival", "exponential"),
            key_cardinality=int(wl.get("key_cardinality", 10)),
            key_skew=float(wl.get("key_skew", 0.0)),
            duration=float(wl.get("duration", 10.0)),
            seed=int(wl.get("seed", 0)),
        )
        sv = cp["service"] if cp.has_section("service") else {}
        service = ServiceModel(
            base=float(sv.get("base_ms", 5.0)) / 1000.0,
            per_item=float(sv.get("per_item_ms", 0.0)) / 1000.0,
            per_match=float(sv.get("per_match_ms", 0.0)) / 1000.0,
            distribution=sv.get("distribution", "exponential"),
            capacity_limit=float(sv["capacity_limit"]) if "capacity_limit" in sv else None,
            slowdown=tuple(_floats(sv.get("slowdown", ""))),
            seed=int(sv.get("seed", workload.seed)),
        )
        rn = cp["run"] if cp.has_section("run") else {}
        m_text = rn.get("m", "2")
        methods = tuple(x.lower() for x in rn.get("methods", " ".join(METHODS)).replace(",", " ").split())
        return Scenario(
            query=query,
            workload=workload,
            service=service,
            m=None if m_text == "auto" else int(m_text),
            methods=methods,
            queue_capacity=int(rn.get("queue_capacity", 64)),
            delta=float(rn.get("delta", 0.9)),
            beta=float(rn["beta"]) if "beta" in rn else None,
            tau=int(rn.get("tau", 1000)),
            mode=rn.get("mode", "virtual"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
