"""Run the split/process/merge assembly under each static policy.

The merged output is always the single-operator result; only the timing
changes with the policy.
"""

from parcep import ParallelRuntime, RuntimeConfig, StaticDispatcher, generate_streams, parse_query, reference_evaluate
from parcep.workload import WorkloadSpec, merge_streams, ServiceModel

query = parse_query("PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s")
stream = merge_streams(generate_streams(WorkloadSpec(duration=20, seed=1, key_skew=1.0)))
service = ServiceModel(0.008, per_item=0.0001, slowdown=(2.0, 1.0, 1.0), seed=1).bind(len(stream))
expected = sorted(m.key for m in reference_evaluate(query, stream))

for kind in ("rr", "jsq", "llsf"):
    result = ParallelRuntime(query, RuntimeConfig(m=3, queue_capacity=8), StaticDispatcher(kind, 3), service).run(stream)
    times = sorted(result.processing_times)
    same = sorted(m.key for m in result.matches) == expected
    print(f"{kind:5s} matches={len(result.matches)} same-as-reference={same} "
          f"mean={sum(times) / len(times) / 1000:.1f} ms p99={times[int(0.99 * len(times))] / 1000:.1f} ms "
          f"per-host={result.delivered}")
