"""Parse a pattern query and evaluate it on a hand-written stream."""

from parcep import make_primitive, parse_query, reference_evaluate

query = parse_query("PATTERN SEQ(E1, AND(E2, E3)) WHERE [Id] WITHIN 2 s")
print("query:", query)
print("partitioned stream:", query.partitioned_type)

stream = [
    make_primitive("E1", 0, {"Id": 1}, eid=0),
    make_primitive("E3", 400_000, {"Id": 1}, eid=1),
    make_primitive("E2", 700_000, {"Id": 1}, eid=2),
    make_primitive("E2", 900_000, {"Id": 2}, eid=3),
    make_primitive("E3", 2_500_000, {"Id": 1}, eid=4),
]
for match in reference_evaluate(query, stream):
    print("match", match.key, "spanning", match.start_ts, "..", match.end_ts, "us")
