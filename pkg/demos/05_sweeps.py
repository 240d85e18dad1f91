"""Window and rate sweeps written to CSV, as the command-line tool would."""

import sys

from parcep import RateProfile, Scenario, ServiceModel, WorkloadSpec, parse_query, sweep, write_reports
from parcep.workload import summary_text

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
base = Scenario(
    parse_query("PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s"),
    WorkloadSpec(RateProfile.constant(100), duration=10, key_cardinality=1000, seed=3),
    ServiceModel(0.002, per_item=0.000005, seed=3),
    m=2,
)
reports = sweep("window", [1, 10, 100], base) + sweep("rate", [100, 200, 300, 400], base)
paths = write_reports(reports, out)
print(summary_text(reports))
print("wrote", ", ".join(sorted(paths.values())))
