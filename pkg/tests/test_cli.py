import pytest

from vpfmu import cli, harness, refvp
from vpfmu.harness import Expectation


def test_pack_and_inspect(fmu_kit, tmp_path, capsys):
    out = tmp_path / "x.fmu"
    rc = cli.main(["pack", "--md", str(fmu_kit["md"]), "--lib", f"x86_64-linux={fmu_kit['lib']}",
                   "--vp", str(fmu_kit["vp"]), "--resource", f"{fmu_kit['md']}=extra/md.xml",
                   "--out", str(out)])
    assert rc == 0 and out.exists()
    assert cli.main(["inspect", str(out)]) == 0
    text = capsys.readouterr().out
    assert "resources/extra/md.xml" in text and "layout OK" in text


def test_pack_error_exit(fmu_kit, tmp_path, capsys):
    rc = cli.main(["pack", "--md", str(fmu_kit["md"]), "--out", str(tmp_path / "x.fmu")])
    assert rc == cli.EXIT_ERROR
    assert "MissingVpBinary" in capsys.readouterr().err


def test_run_pass_writes_trace_and_figure(fmu_kit, tmp_path, capsys):
    sc = harness.hysteresis_scenario(duration=4.0).save(tmp_path / "s.csv")
    trace = tmp_path / "out" / "trace.csv"
    trace.parent.mkdir()
    rc = cli.main(["run", "--fmu", str(fmu_kit["fmu"]), "--scenario", str(sc),
                   "--trace", str(trace)])
    assert rc == cli.EXIT_PASS
    assert trace.exists() and trace.with_suffix(".png").exists()
    assert "verdict PASS" in capsys.readouterr().out


def test_run_fail_exit(fmu_kit, tmp_path):
    sc = harness.constant_scenario(duration=1.0, expectations=[
        Expectation(0.5, refvp.GPIO_KEY, "1")]).save(tmp_path / "s.csv")
    rc = cli.main(["run", "--fmu", str(fmu_kit["fmu"]), "--scenario", str(sc),
                   "--trace", str(tmp_path / "t.csv"), "--no-plot"])
    assert rc == cli.EXIT_FAIL


def test_run_error_exit(fmu_kit, tmp_path, capsys):
    bad = tmp_path / "s.csv"
    bad.write_text("kind,time,name,value,cmp\nparam,,step_size,0.01,\nparam,,stop_time,1,\n"
                   "param,,start_time,0,\n"
                   "input,0,system.bogus,1,\n")
    rc = cli.main(["run", "--fmu", str(fmu_kit["fmu"]), "--scenario", str(bad),
                   "--trace", str(tmp_path / "t.csv")])
    assert rc == cli.EXIT_ERROR
    assert "ScenarioMismatch" in capsys.readouterr().err


def test_scenario_and_plot_commands(fmu_kit, tmp_path):
    assert cli.main(["scenario", "constant", "--out", str(tmp_path / "c.csv"),
                     "--duration", "1"]) == 0
    harness.run(tmp_path / "c.csv", tmp_path / "t.csv", fmu=fmu_kit["fmu"])
    assert cli.main(["plot", str(tmp_path / "t.csv"), "--out", str(tmp_path / "t.png")]) == 0
    assert (tmp_path / "t.png").stat().st_size > 0


def test_vp_subcommand_flag_errors():
    with pytest.raises(SystemExit) as e:
        cli.main(["vp", "--port", "70000"])
    assert e.value.code == 2


def test_demo(tmp_path):
    assert cli.main(["demo", str(tmp_path / "d"), "--port", "18001"]) == 0
    for name in ("myVP.fmu", "myVP-remote.fmu", "hysteresis.csv", "constant.csv"):
        assert (tmp_path / "d" / name).exists()
