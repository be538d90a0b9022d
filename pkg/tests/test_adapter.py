import os
import sys
import time
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from vpfmu import adapter, refvp
from vpfmu.adapter import (BadCommunicationPoint, BadStepSize, MissingProperty, SpawnFailure,
                           State, StateError, UnknownVr, WrongCausality, instantiate, to_ticks)
from vpfmu.client import ConnectTimeout, SessionLost
from vpfmu.modeldesc import Causality, ModelVariable
from vpfmu.packager import unpack
from vpfmu.proxy import FaultProxy
from vpfmu.values import PropertyValue, ValueType
from dataclasses import replace

TEMP_VR, GPIO_VR, TIME_VR = 1, 2, 0
SRC_ROOT = str(Path(adapter.__file__).resolve().parents[1])


def attach_md(host, port, **kw):
    return refvp.reference_model_description(port=port, host=host, executable=None, **kw)


@pytest.fixture
def attached(served):
    """Instantiate against a freshly served reference VP; returns (inst, served)."""
    made = []

    def make(overrides=None, **md_kw):
        sp = served(overrides)
        inst = instantiate(attach_md(sp.host, sp.port, **md_kw))
        made.append(inst)
        return inst, sp

    yield make
    for inst in made:
        if inst.state is not State.FREED:
            inst.free()


# -- time conversion ----------------------------------------------------------

def test_to_ticks():
    assert to_ticks(3) == 3_000_000_000
    assert to_ticks(0.01) == 10_000_000
    assert to_ticks(1e-9) == 1
    with pytest.raises(BadStepSize):
        to_ticks(1e-10)
    with pytest.raises(BadStepSize):
        to_ticks(float("nan"))


@given(st.integers(0, 10**12))
def test_to_ticks_exact_for_whole_nanoseconds(n):
    assert to_ticks(n / 1e9) == n


# -- lifecycle ----------------------------------------------------------------

def test_start_time_skip(attached):
    inst, sp = attached()
    inst.enter_initialization_mode()
    assert inst.remote_time() == 3_000_000_000
    assert inst.communication_point == 3.0
    # start value applied before the skip, so the polls during it saw 10 degC
    assert inst.remote_get(refvp.POLL_COUNT_KEY).value == 7
    assert [c for c, _ in inst.transcript()][1:] == [
        "set,system.max31855.temp,10.0", "step,3000000000", "time", "get,system.app.poll_count"]


def test_start_zero_sends_no_step(attached):
    inst, sp = attached()
    inst.enter_initialization_mode(0.0)
    assert not any(c.startswith("step") for c, _ in inst.transcript())
    assert inst.remote_time() == 0


def test_two_hundred_steps_no_drift(attached):
    inst, _ = attached()
    inst.enter_initialization_mode()
    inst.exit_initialization_mode()
    t = 3.0
    for _ in range(200):
        inst.do_step(t, 0.01)
        t += 0.01
    assert inst.remote_time() == 5_000_000_000
    assert inst.communication_ticks == 5_000_000_000


@settings(max_examples=10, deadline=None)
@given(st.lists(st.integers(1, 10**9), min_size=1, max_size=20))
def test_time_sync_property(steps):
    from conftest import ServedPlatform
    sp = ServedPlatform()
    inst = instantiate(attach_md(sp.host, sp.port))
    try:
        inst.enter_initialization_mode(0.0)
        inst.exit_initialization_mode()
        for n in steps:
            inst.do_step(inst.communication_point, n / 1e9)
        assert inst.remote_time() == sum(steps)
    finally:
        inst.free()


def test_variable_step_sizes(attached):
    inst, _ = attached()
    inst.enter_initialization_mode(0.0)
    inst.exit_initialization_mode()
    inst.do_step(0.0, 0.5)
    inst.do_step(0.5, 0.25)
    assert inst.remote_time() == 750_000_000


def test_communication_point_checks(attached):
    inst, _ = attached()
    inst.enter_initialization_mode(0.0)
    inst.exit_initialization_mode()
    with pytest.raises(BadCommunicationPoint):
        inst.do_step(0.1, 0.01)
    inst.do_step(1e-9, 0.01)  # one tick off is tolerated
    with pytest.raises(BadStepSize):
        inst.do_step(0.01, 0.0)
    with pytest.raises(BadStepSize):
        inst.do_step(0.01, 1e-10)
    assert inst.state is State.STEP_MODE and inst.remote_time() == 10_000_000


def test_get_set_translation(attached):
    inst, sp = attached()
    inst.enter_initialization_mode(0.0)
    inst.set_values([TEMP_VR], [55.0])
    assert sp.kernel.get_property(refvp.TEMP_KEY) == PropertyValue.float32(55.0)
    inst.exit_initialization_mode()
    inst.do_step(0.0, 0.01)
    assert inst.get_values([GPIO_VR, TIME_VR]) == [1, 0.01]
    with pytest.raises(WrongCausality):
        inst.set_values([GPIO_VR], [1])
    with pytest.raises(WrongCausality):
        inst.get_values([TEMP_VR])
    with pytest.raises(UnknownVr):
        inst.get_values([42])
    with pytest.raises(adapter.TypeMismatch):
        inst.set_values([TEMP_VR], ["hot"])


def test_missing_property(served):
    sp = served()
    md = attach_md(sp.host, sp.port)
    bogus = ModelVariable("system.bogus.x", 3, ValueType.UINT32, Causality.OUTPUT)
    md = replace(md, variables=md.variables + (bogus,))
    with pytest.raises(MissingProperty):
        instantiate(md)


def test_type_disagreement(served):
    sp = served()
    md = attach_md(sp.host, sp.port)
    wrong = replace(md.variables[2], type=ValueType.FLOAT64)
    md = replace(md, variables=md.variables[:2] + (wrong,))
    with pytest.raises(adapter.TypeMismatch):
        instantiate(md)


def test_connect_timeout():
    md = attach_md("127.0.0.1", 9)
    with pytest.raises(ConnectTimeout):
        instantiate(md, connect_attempts=2, connect_interval=0.05)


# -- state machine --------------------------------------------------------------

OPS = {
    "enter_initialization_mode": lambda i: i.enter_initialization_mode(0.0),
    "exit_initialization_mode": lambda i: i.exit_initialization_mode(),
    "get_values": lambda i: i.get_values([GPIO_VR]),
    "set_values": lambda i: i.set_values([TEMP_VR], [20.0]),
    "do_step": lambda i: i.do_step(i.communication_point, 0.01),
    "terminate": lambda i: i.terminate(),
    "free": lambda i: i.free(),
}
LEGAL = {
    State.INSTANTIATED: {"enter_initialization_mode", "terminate", "free"},
    State.INITIALIZATION_MODE: {"exit_initialization_mode", "get_values", "set_values",
                                "terminate", "free"},
    State.STEP_MODE: {"get_values", "set_values", "do_step", "terminate", "free"},
    State.TERMINATED: {"free"},
    State.ERROR: {"free"},
    State.FREED: set(),
}


def drive_to(state, make):
    inst, sp = make()
    if state is State.INSTANTIATED:
        return inst, sp
    inst.enter_initialization_mode(0.0)
    if state is State.INITIALIZATION_MODE:
        return inst, sp
    inst.exit_initialization_mode()
    if state is State.STEP_MODE:
        return inst, sp
    if state is State.TERMINATED:
        inst.terminate()
    elif state is State.ERROR:
        inst.session.close()
        with pytest.raises(SessionLost):
            inst.get_values([GPIO_VR])
    elif state is State.FREED:
        inst.free()
    return inst, sp


def snapshot(inst, sp):
    return (inst.state, inst.communication_ticks, len(sp.server.transcript),
            sp.kernel.now(), sp.kernel.get_property(refvp.TEMP_KEY))


@pytest.mark.parametrize("state", list(LEGAL))
def test_illegal_calls_change_nothing(attached, state):
    inst, sp = drive_to(state, attached)
    assert inst.state is state
    illegal = [name for name in OPS if name not in LEGAL[state]]
    for name in illegal:
        before = snapshot(inst, sp)
        with pytest.raises(StateError):
            OPS[name](inst)
        time.sleep(0.01)
        assert snapshot(inst, sp) == before, name


@pytest.mark.parametrize("state, op", [(s, op) for s in LEGAL for op in sorted(LEGAL[s])
                                       if s not in (State.TERMINATED, State.ERROR)])
def test_legal_calls_succeed(attached, state, op):
    inst, _ = drive_to(state, attached)
    OPS[op](inst)


@pytest.mark.parametrize("state", [State.TERMINATED, State.ERROR])
def test_free_after_terminal_states(attached, state):
    inst, _ = drive_to(state, attached)
    inst.free()
    assert inst.state is State.FREED


def test_exit_initialization_is_wire_silent(served):
    sp = served()
    proxy = FaultProxy((sp.host, sp.port)).start()
    inst = instantiate(attach_md(*proxy.address))
    inst.enter_initialization_mode(0.0)
    before = len(proxy.client_frames)
    inst.exit_initialization_mode()
    assert len(proxy.client_frames) == before
    inst.free()


def test_wire_names_come_from_model(served):
    sp = served()
    proxy = FaultProxy((sp.host, sp.port)).start()
    md = attach_md(*proxy.address)
    inst = instantiate(md)
    inst.enter_initialization_mode()
    inst.exit_initialization_mode()
    for k in range(5):
        inst.set_values([TEMP_VR], [20.0 + k])
        inst.do_step(inst.communication_point, 0.01)
        inst.get_values([GPIO_VR, TIME_VR])
    inst.terminate()
    inst.free()
    proxy.join()
    declared = {v.name for v in md.variables}
    used = {f.decode().split(",")[1] for f in proxy.client_frames
            if f.startswith((b"get,", b"set,"))}
    assert used and used <= declared
    assert "time" not in used


def test_terminate_leaves_remote_server_to_shut_down(attached):
    inst, sp = attached()
    inst.terminate()
    assert sp.join() and sp.result == 0
    assert sp.server.transcript[-1] == ("quit", "OK")


# -- spawn mode -------------------------------------------------------------------

@pytest.fixture
def unpacked(fmu_kit, tmp_path):
    return unpack(fmu_kit["fmu"], tmp_path / "fmu")


def spawn_md(root, port, **kw):
    from vpfmu.modeldesc import load
    md = load(root / "modelDescription.xml")
    return replace(md, vcml=replace(md.vcml, port=port, **kw))


def test_spawn_and_reap(unpacked):
    from conftest import free_port
    inst = instantiate(spawn_md(unpacked, free_port()), unpacked / "resources")
    assert inst.spawned
    inst.enter_initialization_mode()
    assert inst.remote_time() == 3_000_000_000
    child = inst.child
    inst.terminate()
    assert child.returncode == 0
    inst.free()


def test_spawn_with_explicit_port_passes_it(unpacked):
    from conftest import free_port
    port = free_port()
    inst = instantiate(spawn_md(unpacked, 1), unpacked / "resources", port=port)
    assert inst.child.args[-2:] == ["--port", str(port)]
    inst.free()
    assert inst.child.returncode == 0


def test_spawn_args_come_before_port(unpacked):
    from conftest import free_port
    port = free_port()
    md = spawn_md(unpacked, port, args="--config system.app.t_up=45.0")
    inst = instantiate(md, unpacked / "resources")
    assert inst.child.args[1:] == ["--config", "system.app.t_up=45.0", "--port", str(port)]
    assert inst.remote_get(refvp.T_UP_KEY).value == 45.0
    inst.free()


def test_spawn_missing_executable(unpacked):
    (unpacked / "resources" / "vp").unlink()
    with pytest.raises(SpawnFailure):
        instantiate(spawn_md(unpacked, 4000), unpacked / "resources")


def test_spawn_vp_that_dies(tmp_path):
    res = tmp_path / "resources"
    res.mkdir()
    exe = res / "vp"
    exe.write_text("#!/bin/sh\nexit 7\n")
    exe.chmod(0o755)
    md = refvp.reference_model_description(port=4001, host="127.0.0.1")
    began = time.monotonic()
    with pytest.raises(SpawnFailure, match="status 7"):
        instantiate(md, res, connect_attempts=10, connect_interval=0.2)
    assert time.monotonic() - began < 3


def test_env_override_forces_attach(served, unpacked, monkeypatch):
    sp = served()
    monkeypatch.setenv(adapter.ENV_REMOTE, f"{sp.host}:{sp.port}")
    inst = instantiate(spawn_md(unpacked, 1), unpacked / "resources")
    assert not inst.spawned and inst.port == sp.port
    inst.free()


HANGING_VP = """#!{python}
import sys, time
sys.path.insert(0, {src!r})
from vpfmu import refvp
from vpfmu.server import VspServer
port = int(sys.argv[sys.argv.index("--port") + 1])
VspServer(refvp.build_platform().kernel, "127.0.0.1", port).serve()
time.sleep(600)
"""


def test_hanging_vp_is_killed(tmp_path, monkeypatch):
    from conftest import free_port
    monkeypatch.setattr(adapter, "REAP_GRACE", 0.5)
    res = tmp_path / "resources"
    res.mkdir()
    exe = res / "vp"
    exe.write_text(HANGING_VP.format(python=sys.executable, src=SRC_ROOT))
    exe.chmod(0o755)
    md = refvp.reference_model_description(port=free_port(), host="127.0.0.1")
    inst = instantiate(md, res)
    child = inst.child
    began = time.monotonic()
    inst.terminate()
    assert child.returncode == -9
    assert time.monotonic() - began < 3
    with pytest.raises(ChildProcessError):
        os.waitpid(child.pid, os.WNOHANG)  # already reaped, no zombie left
    inst.free()
