"""Parallel pattern matching over event streams with adaptive splitting-policy selection."""

from .apps import (
    APPSConfig,
    APPSController,
    AssignHistogram,
    SizingParams,
    TimingStats,
    batch_size,
    compute_parallel_degree,
    expected_redirect_time,
    kingman_wait,
    multiserver_wait,
    record_assignment,
    select_policy,
    tradeoff_solve,
)
from .events import CompositeEvent, EventType, PrimitiveEvent, StreamDescriptor, compose, make_primitive
from .policies import PolicyKind, SplittingPolicy
from .query import PatternQuery, QuerySyntaxError, format_query, parse_query, reference_evaluate
from .runtime import ParallelRuntime, RuntimeConfig, StaticDispatcher, ThreadedRuntime, merge, replicate, split
from .workload import (
    RateProfile,
    Scenario,
    ServiceModel,
    WorkloadSpec,
    generate_streams,
    run_cell,
    run_scenario,
    sweep,
    write_reports,
)

__version__ = "0.1.0"
