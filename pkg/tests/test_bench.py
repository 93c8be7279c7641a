import json
import math
import random

import pytest
from hypothesis import given, strategies as st

from oracles import two_pass_mean_std
from pqchannel import bench
from pqchannel.bench import Aggregate, RawSample, RunPlan, aggregate, format_cell, render_report
from pqchannel.errors import EmptyInput, SchemaError
from pqchannel.probes import Metric, Role


def test_scenario_sizes():
    assert [s.payload_len for s in bench.default_scenarios()] == [208, 731, 1235, 2328]
    assert bench.make_payload(731, seed=1) == bench.make_payload(731, seed=1)
    assert bench.make_payload(731, seed=1) != bench.make_payload(731, seed=2)


def test_default_plan_is_36_sessions():
    plan = RunPlan()
    assert len(plan.manifest()) == 36
    assert plan.session_duration == 300 and plan.rest_duration == 300


def test_plan_validation():
    with pytest.raises(ValueError):
        RunPlan(session_duration=0)
    with pytest.raises(ValueError):
        RunPlan(rest_duration=-1)
    with pytest.raises(ValueError):
        RunPlan(paramsets=[])


def test_aggregate_small_cases():
    a = aggregate([1, 2, 3])
    assert (a.mean, a.std, a.n) == (2.0, 1.0, 3)
    assert format_cell(Metric.EXEC_TIME, a) == "2.000 ± 1.000"
    assert aggregate([5.0]) == Aggregate(5.0, 0.0, 1)
    with pytest.raises(EmptyInput):
        aggregate([])


def test_aggregate_matches_two_pass_oracle():
    rng = random.Random(5)
    for _ in range(1000):
        xs = [rng.uniform(-1e3, 1e3) * 10 ** rng.randint(-3, 3) for _ in range(rng.randint(2, 200))]
        a = aggregate(xs)
        m, s = two_pass_mean_std(xs)
        assert math.isclose(a.mean, m, rel_tol=1e-9, abs_tol=1e-12)
        assert math.isclose(a.std, s, rel_tol=1e-9, abs_tol=1e-12)


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=100))
def test_aggregate_property(xs):
    a = aggregate(xs)
    m, s = two_pass_mean_std(xs)
    assert math.isclose(a.mean, m, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(a.std, s, rel_tol=1e-7, abs_tol=1e-6)


def test_constant_series_has_zero_std():
    assert aggregate([0.1] * 10_000) == Aggregate(0.1, 0.0, 10_000)


@pytest.mark.parametrize("metric,agg,text", [
    (Metric.EXEC_TIME, Aggregate(0.0412, 0.0041, 10), "0.041 ± 0.004"),
    (Metric.MEMORY_KB, Aggregate(5632.0, 0.0, 10), "5632.00 ± 0.00"),
    (Metric.POWER_W, Aggregate(3.14159, 0.01, 10), "3.142 ± 0.010"),
    (Metric.TEMP_C, Aggregate(48.37, 0.5, 10), "48.37 ± 0.50"),
])
def test_cell_format(metric, agg, text):
    assert format_cell(metric, agg) == text


def _samples():
    rows = []
    for ps in ("Kyber-768", "BIKE-L1", "Mock"):
        for sc in ("networkSim2", "networkSim10", "networkSim1"):
            for i in range(3):
                rows.append(RawSample(1000.0 + i, Role.CLIENT, Metric.EXEC_TIME, 0.01 * (i + 1), ps, sc))
                rows.append(RawSample(1000.0 + i, Role.SERVER, Metric.MEMORY_KB, 5632.0, ps, sc))
    return rows


def test_report_ordering_and_layout():
    text = render_report(bench.reports_from_samples(_samples()), "table")
    lines = text.splitlines()
    assert lines[0] == "Execution Time (s) [client]"
    assert lines[1].split(" | ")[1:] == ["networkSim1  ", "networkSim2  ", "networkSim10 "]
    algos = [l.split(" | ")[0].strip() for l in lines[3:8]]
    assert algos[0] == "Mock" and algos[2] == "BIKE-L1" and algos[4] == "Kyber-768"
    assert "0.020 ± 0.010" in text and "5632.00 ± 0.00" in text


def test_report_missing_cell_is_na():
    rows = [RawSample(1.0, Role.CLIENT, Metric.EXEC_TIME, 0.5, "Mock", "networkSim1"),
            RawSample(1.0, Role.CLIENT, Metric.EXEC_TIME, 0.5, "Kyber-512", "networkSim2")]
    assert "n/a" in render_report(bench.reports_from_samples(rows))


def test_report_json_and_csv():
    reports = bench.reports_from_samples(_samples())
    data = json.loads(render_report(reports, "json"))
    assert {"paramset", "scenario", "metric", "role", "mean", "std", "n"} == set(data[0])
    csv_text = render_report(reports, "csv")
    assert csv_text.splitlines()[0] == "paramset,scenario,metric,role,mean,std,n"
    with pytest.raises(ValueError):
        render_report(reports, "xml")
    with pytest.raises(EmptyInput):
        render_report([])


def test_raw_csv_round_trip_is_exact(tmp_path):
    rng = random.Random(3)
    rows = [RawSample(rng.random() * 1e9, Role.CLIENT, Metric.EXEC_TIME, rng.random() / 7, "Mock", "networkSim1")
            for _ in range(200)]
    path = bench.write_raw_csv(tmp_path / "a.csv", rows)
    assert bench.read_raw_csv(path) == rows


def test_recompute_independent_of_file_split(tmp_path):
    rows = _samples()
    random.Random(1).shuffle(rows)
    whole = bench.write_raw_csv(tmp_path / "all.csv", rows)
    parts = [bench.write_raw_csv(tmp_path / f"p{i}.csv", rows[i::3]) for i in range(3)]
    a = render_report(bench.reports_from_csv([whole]))
    b = render_report(bench.reports_from_csv(parts))
    assert a == b


@pytest.mark.parametrize("body,line", [
    ("timestamp,role,metric,value,paramset,scenario\n1,client,ExecTime,0.1,Mock,s\n1,client,ExecTime,abc,Mock,s\n", 3),
    ("timestamp,role,metric,value,paramset,scenario\n1,client,Bogus,0.1,Mock,s\n", 2),
    ("timestamp,role,metric,value,paramset,scenario\n1,client,ExecTime,-1,Mock,s\n", 2),
    ("timestamp,role,metric,value,paramset,scenario\n1,client,ExecTime,0.1,Kyber-9,s\n", 2),
    ("timestamp,role,metric,value,paramset,scenario\n1,client,ExecTime,0.1,Mock\n", 2),
    ("ts,role\n", 1),
])
def test_schema_errors_carry_line_numbers(tmp_path, body, line):
    f = tmp_path / "bad.csv"
    f.write_text(body)
    with pytest.raises(SchemaError) as info:
        bench.read_raw_csv(f)
    assert info.value.line == line


def test_run_plan_against_local_server(tmp_path, kem_server, mock_registry):
    srv = kem_server(registry=mock_registry)
    plan = RunPlan(["Mock"], bench.default_scenarios(["networkSim1", "networkSim4"]),
                   session_duration=0.3, rest_duration=0.1)
    reports = bench.run_plan(plan, srv.address, (), tmp_path, registry=mock_registry,
                             session_counter=lambda: srv.stats.started)
    assert [r.status for r in reports] == ["ok", "ok"]
    assert all(r.handshakes > 5 and r.rest_clean for r in reports[1:])
    assert (tmp_path / "report.txt").read_text() == render_report(
        bench.reports_from_csv(sorted((tmp_path / "raw").glob("*__r1.csv"))))
    plan_json = json.loads((tmp_path / "plan.json").read_text())
    assert [s["payload_len"] for s in plan_json["sessions"]] == [208, 2328]


def test_run_plan_flags_traffic_during_rest(tmp_path, kem_server, mock_registry):
    srv = kem_server(registry=mock_registry)
    plan = RunPlan(["Mock"], bench.default_scenarios(["networkSim1", "networkSim2"]),
                   session_duration=0.2, rest_duration=0.2)
    calls = iter(range(100, 10_000, 7))  # counter that always moves
    reports = bench.run_plan(plan, srv.address, (), tmp_path, registry=mock_registry,
                             session_counter=lambda: next(calls))
    assert reports[1].rest_clean is False


def test_run_plan_partial_failure(tmp_path, kem_server, real_registry):
    srv = kem_server(registry=real_registry, allowed=["Mock"])
    plan = RunPlan(["Mock", "Kyber-512"], bench.default_scenarios(["networkSim1"]),
                   session_duration=0.2, rest_duration=0)
    if not real_registry.lookup("Kyber-512").enabled:
        pytest.skip("needs an enabled paramset the server refuses")
    reports = bench.run_plan(plan, srv.address, (), tmp_path, registry=real_registry)
    status = {r.paramset: r.status for r in reports}
    assert status == {"Mock": "ok", "Kyber-512": "failed"}
    sessions = json.loads((tmp_path / "sessions.json").read_text())
    assert {s["paramset"]: s["failures"] > 0 for s in sessions} == {"Mock": False, "Kyber-512": True}
