"""Scenario-driven import harness.

A scenario is a CSV file with a ``kind,time,name,value,cmp`` header:

* ``param`` rows set ``step_size``, ``stop_time`` and optionally ``start_time``
  (the value column, in seconds);
* ``input`` rows assign an input variable at a communication point;
* ``expect`` rows compare an output at a communication point using ``=``
  or ``!=``.

The harness drives an adapter instance in the usual order (set inputs,
step, read outputs), writes one trace line per communication point and
reports a verdict plus branch coverage of the Schmitt-trigger application.
"""

from __future__ import annotations

import csv
import io
import logging
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import adapter, refvp
from .kernel import TICKS_PER_SECOND
from .modeldesc import Causality, ModelDescription, SubsetWarning, load
from .packager import MD_NAME, unpack
from .values import BadValue, PropertyValue

log = logging.getLogger(__name__)

SCENARIO_HEADER = ["kind", "time", "name", "value", "cmp"]
COMPARATORS = {"=": True, "==": True, "!=": False, "≠": False}


class HarnessError(Exception):
    pass


class ScenarioError(HarnessError):
    pass


class ScenarioMismatch(HarnessError):
    pass


class AdapterFailure(HarnessError):
    pass


# -- scenario -----------------------------------------------------------------

@dataclass(frozen=True)
class InputRow:
    time: float
    name: str
    value: str
    line: int = 0


@dataclass(frozen=True)
class Expectation:
    time: float
    name: str
    value: str
    equal: bool = True
    line: int = 0

    @property
    def cmp(self) -> str:
        return "=" if self.equal else "!="


@dataclass
class Scenario:
    step_size: float
    stop_time: float
    start_time: Optional[float] = None
    inputs: List[InputRow] = field(default_factory=list)
    expectations: List[Expectation] = field(default_factory=list)

    def render(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCENARIO_HEADER)
        w.writerow(["param", "", "step_size", _fmt_seconds_float(self.step_size), ""])
        w.writerow(["param", "", "stop_time", _fmt_seconds_float(self.stop_time), ""])
        if self.start_time is not None:
            w.writerow(["param", "", "start_time", _fmt_seconds_float(self.start_time), ""])
        for r in self.inputs:
            w.writerow(["input", _fmt_seconds_float(r.time), r.name, r.value, ""])
        for e in self.expectations:
            w.writerow(["expect", _fmt_seconds_float(e.time), e.name, e.value, e.cmp])
        return buf.getvalue()

    def save(self, path) -> Path:
        Path(path).write_text(self.render())
        return Path(path)


def _fmt_seconds_float(x: float) -> str:
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def format_ticks(ticks: int) -> str:
    """Exact decimal seconds from integer nanoseconds, e.g. ``3.01``."""
    whole, frac = divmod(ticks, TICKS_PER_SECOND)
    digits = f"{frac:09d}".rstrip("0")
    return f"{whole}.{digits or '0'}"


def parse_scenario(text: str) -> Scenario:
    rows = [r for r in csv.reader(io.StringIO(text))]
    body = []
    header_seen = False
    for lineno, row in enumerate(rows, 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if not header_seen:
            if [c.strip() for c in row] != SCENARIO_HEADER:
                raise ScenarioError(f"line {lineno}: header must be {','.join(SCENARIO_HEADER)}")
            header_seen = True
            continue
        row = [c.strip() for c in row] + [""] * (5 - len(row))
        body.append((lineno, row[:5]))
    params: Dict[str, float] = {}
    inputs, expects = [], []
    for lineno, (kind, t, name, value, cmp) in body:
        if kind == "param":
            if name not in ("step_size", "stop_time", "start_time"):
                raise ScenarioError(f"line {lineno}: unknown parameter {name!r}")
            params[name] = _float(value, lineno)
        elif kind == "input":
            inputs.append(InputRow(_float(t, lineno), name, value, lineno))
        elif kind == "expect":
            if cmp not in COMPARATORS:
                raise ScenarioError(f"line {lineno}: comparison must be = or !=, got {cmp!r}")
            expects.append(Expectation(_float(t, lineno), name, value, COMPARATORS[cmp], lineno))
        else:
            raise ScenarioError(f"line {lineno}: unknown row kind {kind!r}")
    for required in ("step_size", "stop_time"):
        if required not in params:
            raise ScenarioError(f"missing param {required}")
    return Scenario(params["step_size"], params["stop_time"], params.get("start_time"),
                    inputs, expects)


def _float(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ScenarioError(f"line {lineno}: not a number: {text!r}") from None


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


@dataclass
class Plan:
    """A scenario resolved against a model: everything in integer ticks."""
    start: int
    step: int
    n_steps: int
    inputs: List[Tuple[int, InputRow, PropertyValue]]
    expectations: List[Tuple[int, Expectation, PropertyValue]]


def _on_grid(t: float, start: int, step: int, what: str) -> int:
    try:
        ticks = adapter.to_ticks(t, what)
    except adapter.BadStepSize as e:
        raise ScenarioError(str(e)) from None
    k, rem = divmod(ticks - start, step)
    if rem > 1 and step - rem > 1:
        raise ScenarioError(f"{what} {t} s is not on the {step} ns communication grid")
    if rem > 1:
        k += 1
    return start + k * step


def plan(scenario: Scenario, md: ModelDescription) -> Plan:
    """Check a scenario against a model and convert it to ticks."""
    if not scenario.step_size > 0:
        raise ScenarioError("step_size must be positive")
    try:
        step = adapter.to_ticks(scenario.step_size, "step_size")
        start_s = scenario.start_time
        if start_s is None:
            ex = md.default_experiment
            start_s = ex.start_time if ex is not None and ex.start_time is not None else 0.0
        start = adapter.to_ticks(start_s, "start_time")
    except adapter.BadStepSize as e:
        raise ScenarioError(str(e)) from None
    stop = _on_grid(scenario.stop_time, start, step, "stop_time")
    if stop < start:
        raise ScenarioError("stop_time before start_time")
    n_steps = (stop - start) // step

    by_name = {v.name: v for v in md.variables}
    inputs = []
    last = start
    for r in scenario.inputs:
        var = by_name.get(r.name)
        if var is None or var.causality is not Causality.INPUT:
            raise ScenarioMismatch(f"line {r.line}: {r.name!r} is not an input of the model")
        t = _on_grid(r.time, start, step, f"line {r.line}: time")
        if t < last:
            raise ScenarioError(f"line {r.line}: input times must be non-decreasing and >= start")
        last = t
        try:
            inputs.append((t, r, PropertyValue.decode(var.type, r.value)))
        except BadValue as e:
            raise ScenarioError(f"line {r.line}: {e}") from None
    expectations = []
    last = start
    for e in scenario.expectations:
        var = by_name.get(e.name)
        if var is None or var.causality is not Causality.OUTPUT:
            raise ScenarioMismatch(f"line {e.line}: {e.name!r} is not an output of the model")
        t = _on_grid(e.time, start, step, f"line {e.line}: time")
        if t < last or t > stop:
            raise ScenarioError(f"line {e.line}: expectation time outside the run or out of order")
        last = t
        try:
            expectations.append((t, e, PropertyValue.decode(var.type, e.value)))
        except BadValue as err:
            raise ScenarioError(f"line {e.line}: {err}") from None
    return Plan(start, step, n_steps, inputs, expectations)


# -- trace --------------------------------------------------------------------

@dataclass
class TraceRecord:
    ticks: int
    outputs: Dict[str, PropertyValue]
    inputs: Dict[str, PropertyValue]


def render_trace(records: Sequence[TraceRecord], outputs: Sequence[str],
                 inputs: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *outputs, *inputs])
    for r in records:
        w.writerow([format_ticks(r.ticks)] + [r.outputs[n].encode() for n in outputs]
                   + [r.inputs[n].encode() for n in inputs])
    return buf.getvalue()


def read_trace(path) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# -- coverage -----------------------------------------------------------------

@dataclass
class CoverageReport:
    set_count: int
    clear_count: int
    poll_count: int

    @property
    def branches_hit(self) -> int:
        return (self.set_count > 0) + (self.clear_count > 0)

    @property
    def percent(self) -> float:
        return 100.0 * self.branches_hit / 2

    @property
    def no_polls(self) -> bool:
        return self.poll_count == 0

    def render(self) -> str:
        lines = [f"branch coverage {self.branches_hit}/2 ({self.percent:.1f} %)",
                 f"  set-pin branch    {'hit' if self.set_count else 'MISSED'} ({self.set_count})",
                 f"  clear-pin branch  {'hit' if self.clear_count else 'MISSED'} ({self.clear_count})",
                 f"  polls             {self.poll_count}"]
        if self.no_polls:
            lines.append("  no polls observed")
        return "\n".join(lines)


def coverage_report(inst) -> Optional[CoverageReport]:
    """Read the application's branch counters from a live instance."""
    try:
        counts = [inst.remote_get(k).value for k in
                  (refvp.SET_COUNT_KEY, refvp.CLEAR_COUNT_KEY, refvp.POLL_COUNT_KEY)]
    except (NotImplementedError, adapter.RemoteError):
        return None
    return CoverageReport(*counts)


# -- run ----------------------------------------------------------------------

@dataclass
class Failure:
    expectation: Expectation
    ticks: int
    actual: PropertyValue

    def render(self) -> str:
        e = self.expectation
        return (f"line {e.line}: t={format_ticks(self.ticks)} {e.name} expected "
                f"{e.cmp} {e.value}, got {self.actual.encode()}")


@dataclass
class Verdict:
    records: List[TraceRecord]
    failures: List[Failure]
    checked: int
    coverage: Optional[CoverageReport]
    wall_time: float
    transcript: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def render(self) -> str:
        lines = [f"verdict {'PASS' if self.passed else 'FAIL'}",
                 f"  communication points {len(self.records)}",
                 f"  expectations checked {self.checked}, failed {len(self.failures)}",
                 f"  wall clock {self.wall_time:.2f} s"]
        lines += ["  " + f.render() for f in self.failures]
        if self.coverage is not None:
            lines.append(self.coverage.render())
        return "\n".join(lines)


def simulate(inst, md: ModelDescription, scenario_plan: Plan) -> Tuple[List[TraceRecord],
                                                                         List[Failure], int]:
    """Run the set/step/get loop on an instantiated adapter."""
    p = scenario_plan
    outputs = md.outputs()
    out_vrs = [v.value_reference for v in outputs]
    current_inputs = {v.name: v.start for v in md.inputs()}
    vr_of = {v.name: v.value_reference for v in md.variables}

    def read_outputs() -> Dict[str, PropertyValue]:
        values = inst.get_values(out_vrs)
        return {v.name: PropertyValue(v.type, x) for v, x in zip(outputs, values)}

    failures: List[Failure] = []
    checked = 0
    exp_i = 0

    def check(ticks, observed):
        nonlocal exp_i, checked
        while exp_i < len(p.expectations) and p.expectations[exp_i][0] == ticks:
            _, e, expected = p.expectations[exp_i]
            actual = observed[e.name]
            checked += 1
            if (actual == expected) != e.equal:
                failures.append(Failure(e, ticks, actual))
            exp_i += 1

    inst.enter_initialization_mode(p.start / TICKS_PER_SECOND)
    inst.exit_initialization_mode()
    if p.expectations and p.expectations[0][0] == p.start:
        check(p.start, read_outputs())

    records: List[TraceRecord] = []
    in_i = 0
    for k in range(p.n_steps):
        t = p.start + k * p.step
        while in_i < len(p.inputs) and p.inputs[in_i][0] <= t:
            _, row, value = p.inputs[in_i]
            inst.set_values([vr_of[row.name]], [value.value])
            current_inputs[row.name] = value
            in_i += 1
        inst.do_step(t / TICKS_PER_SECOND, p.step / TICKS_PER_SECOND)
        observed = read_outputs()
        records.append(TraceRecord(t + p.step, observed, dict(current_inputs)))
        check(t + p.step, observed)
    return records, failures, checked


def _resolve_model(fmu: Optional[str], md_path: Optional[str], workdir: Path):
    """Return ``(model, resources dir or None, unpacked root or None)``."""
    if fmu is not None:
        root = unpack(fmu, workdir / "fmu")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SubsetWarning)
            md = load(root / MD_NAME)
        return md, root / "resources", root
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SubsetWarning)
        md = load(md_path)
    return md, Path(md_path).resolve().parent / "resources", None


def run(scenario_path, trace_path, fmu: Optional[str] = None, md_path: Optional[str] = None,
        host: Optional[str] = None, port: Optional[int] = None,
        via_library: bool = False, scenario: Optional[Scenario] = None) -> Verdict:
    """Execute a scenario and write its trace. Expectation failures do not raise."""
    if (fmu is None) == (md_path is None):
        raise HarnessError("give exactly one of an FMU or a model description")
    if scenario is None:
        scenario = load_scenario(scenario_path)
    began = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="vpfmu-") as tmp:
        md, resources, root = _resolve_model(fmu, md_path, Path(tmp))
        scenario_plan = plan(scenario, md)
        try:
            if via_library:
                if root is None:
                    raise HarnessError("library mode needs an FMU")
                from .fmi3host import LibraryInstance
                inst = LibraryInstance(root, md)
            else:
                inst = adapter.instantiate(md, resources, host=host, port=port)
        except HarnessError:
            raise
        except Exception as e:
            raise AdapterFailure(f"instantiate failed: {e}") from e
        coverage = None
        try:
            records, failures, checked = simulate(inst, md, scenario_plan)
            coverage = coverage_report(inst)
            transcript = inst.transcript() if hasattr(inst, "transcript") else []
            inst.terminate()
        except Exception as e:
            raise AdapterFailure(str(e)) from e
        finally:
            inst.free()
    text = render_trace(records, [v.name for v in md.outputs()], [v.name for v in md.inputs()])
    Path(trace_path).write_text(text)
    return Verdict(records, failures, checked, coverage, time.monotonic() - began, transcript)


# -- canned scenarios ---------------------------------------------------------

def ramp_temperature(t: float, low: float = 10.0, high: float = 70.0,
                     duration: float = 20.0) -> float:
    """Triangle: ``low`` -> ``high`` at ``duration/2`` -> ``low``."""
    half = duration / 2
    slope = (high - low) / half
    return low + slope * t if t <= half else high - slope * (t - half)


def hysteresis_scenario(step_size: float = 0.01, duration: float = 20.0,
                        sample: float = 0.25, expectations=()) -> Scenario:
    """Triangle ramp 10 -> 70 -> 10 degC sampled every ``sample`` seconds."""
    n = int(round(duration / sample))
    rows = [InputRow(i * sample, refvp.TEMP_KEY,
                     PropertyValue.float32(ramp_temperature(i * sample, duration=duration)).encode())
            for i in range(n + 1)]
    return Scenario(step_size, duration, 0.0, rows, list(expectations))


def constant_scenario(temp: float = 10.0, step_size: float = 0.01, duration: float = 20.0,
                      expectations=()) -> Scenario:
    rows = [InputRow(0.0, refvp.TEMP_KEY, PropertyValue.float32(temp).encode())]
    return Scenario(step_size, duration, 0.0, rows, list(expectations))
