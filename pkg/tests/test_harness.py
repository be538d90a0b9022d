import pytest

from oracles import NS, hysteresis_trace
from vpfmu import harness, refvp
from vpfmu.harness import (Expectation, InputRow, Scenario, ScenarioError, ScenarioMismatch,
                           coverage_report, format_ticks, parse_scenario, plan, read_trace)
from vpfmu.refvp import reference_model_description

MD = reference_model_description()


def test_format_ticks():
    assert format_ticks(3_010_000_000) == "3.01"
    assert format_ticks(5 * NS) == "5.0"
    assert format_ticks(1) == "0.000000001"


def test_scenario_round_trip():
    sc = harness.hysteresis_scenario(expectations=[Expectation(7.0, refvp.GPIO_KEY, "1")])
    back = parse_scenario(sc.render())
    assert back.step_size == 0.01 and back.stop_time == 20.0 and back.start_time == 0.0
    assert [(r.time, r.name, r.value) for r in back.inputs] == \
        [(r.time, r.name, r.value) for r in sc.inputs]
    assert back.expectations[0].equal and back.expectations[0].value == "1"


def test_scenario_syntax_errors():
    with pytest.raises(ScenarioError):
        parse_scenario("time,name\n")
    with pytest.raises(ScenarioError):
        parse_scenario("kind,time,name,value,cmp\nparam,,step_size,0.01,\n")
    with pytest.raises(ScenarioError):
        parse_scenario("kind,time,name,value,cmp\nparam,,stop_time,1,\nparam,,step_size,x,\n")
    with pytest.raises(ScenarioError):
        parse_scenario("kind,time,name,value,cmp\nparam,,stop_time,1,\n"
                       "param,,step_size,0.1,\nexpect,0,a,1,<\n")


def test_scenario_comments_and_not_equal():
    sc = parse_scenario("# demo\nkind,time,name,value,cmp\nparam,,step_size,0.5,\n"
                        "param,,stop_time,1,\nexpect,1,system.gpio.data,1,≠\n")
    assert sc.expectations[0].equal is False


def test_plan_checks():
    base = dict(step_size=0.01, stop_time=1.0, start_time=0.0)
    p = plan(Scenario(**base, inputs=[InputRow(0.5, refvp.TEMP_KEY, "20")]), MD)
    assert (p.start, p.step, p.n_steps) == (0, 10_000_000, 100)
    with pytest.raises(ScenarioMismatch):
        plan(Scenario(**base, inputs=[InputRow(0.5, "system.nope", "1")]), MD)
    with pytest.raises(ScenarioMismatch):
        plan(Scenario(**base, inputs=[InputRow(0.5, refvp.GPIO_KEY, "1")]), MD)
    with pytest.raises(ScenarioMismatch):
        plan(Scenario(**base, expectations=[Expectation(0.5, refvp.TEMP_KEY, "1")]), MD)
    with pytest.raises(ScenarioError, match="grid"):
        plan(Scenario(**base, inputs=[InputRow(0.505, refvp.TEMP_KEY, "20")]), MD)
    with pytest.raises(ScenarioError, match="non-decreasing"):
        plan(Scenario(**base, inputs=[InputRow(0.5, refvp.TEMP_KEY, "20"),
                                      InputRow(0.4, refvp.TEMP_KEY, "20")]), MD)
    with pytest.raises(ScenarioError):
        plan(Scenario(**base, inputs=[InputRow(0.5, refvp.TEMP_KEY, "warm")]), MD)
    with pytest.raises(ScenarioError):
        plan(Scenario(step_size=0.0, stop_time=1.0), MD)
    # start time falls back to the model's default experiment
    assert plan(Scenario(step_size=0.01, stop_time=5.0), MD).start == 3 * NS


def run(kit, tmp_path, scenario, name="t.csv", **kw):
    path = tmp_path / name
    return harness.run(None, path, fmu=kit["fmu"], scenario=scenario, **kw), path


@pytest.fixture
def kit(fmu_kit):
    return fmu_kit


def test_hysteresis_run_matches_oracle(kit, tmp_path):
    sc = harness.hysteresis_scenario()
    verdict, path = run(kit, tmp_path, sc)
    assert verdict.passed
    header, rows = read_trace(path)
    assert header == ["time", refvp.GPIO_KEY, refvp.TEMP_KEY]
    p = plan(sc, reference_model_description())
    inputs = [(t, float(v.value)) for t, _, v in p.inputs]
    expected, transitions = hysteresis_trace(inputs, p.start, p.step, p.n_steps)
    assert [(r[0], int(r[1])) for r in rows] == [(format_ticks(t), pin) for t, pin in expected]
    assert transitions == [7 * NS, 15_500_000_000]
    assert verdict.coverage.set_count == 1 and verdict.coverage.clear_count == 1


def test_trace_time_column_is_exact(kit, tmp_path):
    sc = Scenario(step_size=0.01, stop_time=5.0, start_time=3.0,
                  inputs=[InputRow(3.0, refvp.TEMP_KEY, "20.0")])
    _, path = run(kit, tmp_path, sc)
    _, rows = read_trace(path)
    assert [r[0] for r in rows] == [format_ticks(3 * NS + k * 10_000_000) for k in range(1, 201)]


def test_constant_run_and_failed_expectation(kit, tmp_path):
    sc = harness.constant_scenario(expectations=[
        Expectation(0.0, refvp.GPIO_KEY, "1", line=9),
        Expectation(10.0, refvp.GPIO_KEY, "1", equal=False)])
    verdict, path = run(kit, tmp_path, sc)
    assert not verdict.passed
    assert verdict.checked == 2 and len(verdict.failures) == 1
    assert "line 9" in verdict.render() and "FAIL" in verdict.render()
    _, rows = read_trace(path)
    assert {r[1] for r in rows} == {"0"}
    cov = verdict.coverage
    assert cov.set_count == 0 and cov.branches_hit == 0 and cov.percent == 0.0


def test_no_polls_observed():
    cov = harness.CoverageReport(0, 0, 0)
    assert cov.no_polls and "no polls observed" in cov.render()


def test_zero_length_run_has_no_polls(kit, tmp_path):
    sc = Scenario(step_size=0.01, stop_time=0.0, start_time=0.0)
    verdict, path = run(kit, tmp_path, sc)
    assert verdict.records == [] and verdict.coverage.no_polls
    assert read_trace(path)[1] == []


def test_runs_are_byte_identical(kit, tmp_path):
    sc = harness.hysteresis_scenario(duration=4.0)
    _, a = run(kit, tmp_path, sc, "a.csv")
    _, b = run(kit, tmp_path, sc, "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_requires_exactly_one_model(tmp_path):
    with pytest.raises(harness.HarnessError):
        harness.run(None, tmp_path / "t.csv", scenario=harness.constant_scenario())


def test_adapter_failure_is_wrapped(tmp_path):
    md = tmp_path / "md.xml"
    from vpfmu.modeldesc import serialize
    md.write_bytes(serialize(reference_model_description(port=9, host="127.0.0.1",
                                                         executable=None)))
    with pytest.raises(harness.AdapterFailure):
        harness.run(None, tmp_path / "t.csv", md_path=md, scenario=harness.constant_scenario(),
                    port=9)


def test_plot_written(kit, tmp_path):
    from vpfmu.plotting import plot_trace
    _, path = run(kit, tmp_path, harness.hysteresis_scenario(duration=2.0))
    png = plot_trace(path, tmp_path / "t.png")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
