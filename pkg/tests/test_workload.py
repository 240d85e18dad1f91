import numpy as np
import pytest

from parcep.query import parse_query
from parcep.workload import (
    ConfigError,
    RateProfile,
    Scenario,
    ServiceModel,
    WorkloadSpec,
    calibrate,
    generate_streams,
    load_scenario,
    merge_streams,
    run_cell,
    run_scenario,
    sweep,
    with_parameter,
    write_reports,
)

Q1 = parse_query("PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s")


def test_deterministic_spacing():
    spec = WorkloadSpec(RateProfile.constant(100), inter_arrival="deterministic", duration=10, types=("E1",))
    (s,) = generate_streams(spec)
    assert len(s) == 1000
    assert {b.start_ts - a.start_ts for a, b in zip(s, s[1:])} == {10_000}


def test_ramp_phases():
    p = RateProfile.ramp(100, 400)
    assert p.rates == (100, 200, 300, 400)
    assert [p.rate_at(t, 40) for t in (0, 9.9, 10, 25, 39.9)] == [100, 100, 200, 300, 400]
    spec = WorkloadSpec(p, inter_arrival="deterministic", duration=4, types=("E1",))
    (s,) = generate_streams(spec)
    assert len(s) == 100 + 200 + 300 + 400


def test_same_seed_same_streams():
    spec = WorkloadSpec(duration=3, seed=11, key_skew=1.2)
    assert generate_streams(spec) == generate_streams(spec)
    other = generate_streams(WorkloadSpec(duration=3, seed=12, key_skew=1.2))
    assert other != generate_streams(spec)


def test_event_ids_unique_in_merged_order():
    streams = generate_streams(WorkloadSpec(duration=2, seed=3))
    merged = merge_streams(streams)
    assert [e.eid for e in merged] == list(range(len(merged)))
    assert [e.start_ts for e in merged] == sorted(e.start_ts for e in merged)


def test_zipf_skew_concentrates_keys():
    (s,) = generate_streams(WorkloadSpec(duration=50, key_skew=1.5, key_cardinality=10, types=("E1",)))
    counts = np.bincount([e.get("Id") for e in s], minlength=10)
    assert counts[0] > counts[-1] * 5


def test_exponential_rate_close_to_target():
    (s,) = generate_streams(WorkloadSpec(RateProfile.constant(200), duration=50, types=("E1",), seed=5))
    assert abs(len(s) / 50 - 200) < 200 * 0.05


def test_calibration():
    assert calibrate(ServiceModel(0.001, distribution="deterministic")).mu == pytest.approx(1000)
    exp = ServiceModel(0.002, seed=4)
    a, b = calibrate(exp), calibrate(exp)
    assert a == b
    # standard error of a 20000-sample mean of an exponential is 0.7 %
    assert a.mu == pytest.approx(500, rel=0.03)


def test_service_model_slowdown_and_floor():
    fn = ServiceModel(0.002, distribution="deterministic", slowdown=(3.0, 1.0)).bind(10)
    from parcep.events import make_primitive
    e = make_primitive("E2", 0, eid=1)
    assert fn(0, e, 0, 0) == 6000 and fn(1, e, 0, 0) == 2000
    floored = ServiceModel(0.0001, distribution="deterministic", capacity_limit=500).bind(1)
    assert floored(0, e, 0, 0) == 2000


def test_zero_duration_gives_empty_report():
    rep = run_scenario(Q1, WorkloadSpec(duration=0), ServiceModel(), "apps", 2)
    assert rep.n_events == 0 and rep.n_matches == 0 and rep.policy_trace == []
    assert np.isnan(rep.mean_ms)


def test_baseline_cell_produces_four_reports():
    sc = Scenario(Q1, WorkloadSpec(duration=5, seed=1), ServiceModel(0.005, seed=1))
    reps = run_cell(sc)
    assert [r.method for r in reps] == ["rr", "jsq", "llsf", "apps"]
    assert len({r.n_events for r in reps}) == 1
    assert len({r.n_matches for r in reps}) == 1


def test_sweeps():
    base = Scenario(Q1, WorkloadSpec(duration=2, seed=2), ServiceModel(0.002, seed=2))
    assert len(sweep("window", [1, 10, 100], base)) == 12
    assert len(sweep("rate", [100, 200, 300, 400], base)) == 16
    assert len(sweep("rate", [150], base)) == 4
    assert with_parameter(base, "window", 10).query.window == 10_000_000
    with pytest.raises(ValueError):
        with_parameter(base, "colour", 1)


def test_reports_written(tmp_path):
    sc = Scenario(Q1, WorkloadSpec(duration=2, seed=2), ServiceModel(0.002, seed=2), methods=("jsq", "apps"))
    paths = write_reports(run_cell(sc), str(tmp_path))
    report = (tmp_path / "report.csv").read_text().splitlines()
    assert report[0].startswith("parameter,value,method,m,n_events")
    assert len(report) == 3
    assert (tmp_path / "adaptation_trace.csv").read_text().startswith("parameter,value,method,epoch,candidate")
    assert "summary.txt" in paths


INI = """
[query]
text = PATTERN AND(E1, E2) WHERE [Id] WITHIN 500 ms
[workload]
ramp = 100 200
duration = 3
key_cardinality = 7
seed = 9
[service]
base_ms = 2
slowdown = 2 1
[run]
methods = rr apps
m = 3
tau = 500
"""


def test_load_scenario_from_text():
    sc = load_scenario(INI)
    assert sc.query.window == 500_000 and sc.m == 3 and sc.methods == ("rr", "apps")
    assert sc.workload.rate_profile.rates == (100.0, 200.0) and sc.workload.key_cardinality == 7
    assert sc.service.base == 0.002 and sc.service.slowdown == (2.0, 1.0) and sc.service.seed == 9
    assert sc.tau == 500


@pytest.mark.parametrize("text", ["[workload]\nrate = 100\n", "[query]\ntext = PATTERN SEQ(E1\n",
                                  "[query]\ntext = PATTERN SEQ(E1, E2) WITHIN 1 s\n[run]\nm = many\n", "not ini"])
def test_load_scenario_errors(text):
    with pytest.raises(ValueError):
        load_scenario(text)


def test_config_error_is_value_error():
    assert issubclass(ConfigError, ValueError)


def test_inline_comments_in_scenario_file():
    sc = load_scenario("[query]\ntext = PATTERN SEQ(E1, E2) WITHIN 1 s\n[workload]\nrate = 250 ; per stream\n"
                       "[run]\nm = auto   # sized at run time\n")
    assert sc.workload.rate_profile.rates == (250.0,) and sc.m is None
