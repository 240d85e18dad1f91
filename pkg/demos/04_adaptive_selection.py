"""Baseline comparison of the four dispatch methods and a look at APPS decisions."""

from collections import Counter

from parcep import Scenario, ServiceModel, WorkloadSpec, parse_query, run_cell

scenario = Scenario(
    parse_query("PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s"),
    WorkloadSpec(duration=30, key_skew=1.0, seed=7),
    ServiceModel(0.005, per_item=0.0001, seed=7),
    m=2,
)
for rep in run_cell(scenario):
    print(f"{rep.method:5s} mean={rep.mean_ms:7.2f} ms  p99={rep.p99_ms:7.2f} ms  redirects={rep.redirects}")
    if rep.method == "apps":
        chosen = Counter(row.chosen for row in rep.policy_trace if row.candidate == "RR")
        print("      segments per chosen policy:", dict(chosen))
