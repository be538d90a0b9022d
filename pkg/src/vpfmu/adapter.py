"""FMI 3.0 co-simulation adapter.

An :class:`AdapterInstance` translates FMI lifecycle calls into remote-control
commands for a VP process. When the model description names an executable
the instance spawns it; otherwise it attaches to ``host:port`` from the
VCML annotation (overridable with the ``VPFMU_REMOTE`` environment variable).
"""

from __future__ import annotations

import enum
import logging
import math
import os
import signal
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import commands as C
from .client import ClientError, ConnectTimeout, SessionLost, VspSession, connect
from .client import CONNECT_ATTEMPTS, CONNECT_INTERVAL
from .kernel import TICKS_PER_SECOND
from .modeldesc import Causality, ModelDescription, VarInfo, load, parse, vr_map
from .values import BadValue, PropertyValue, ValueType

log = logging.getLogger(__name__)

ENV_REMOTE = "VPFMU_REMOTE"
PORT_FLAG = "--port"
REAP_GRACE = 5.0
TICK_TOLERANCE = 1e-3


class AdapterError(Exception):
    pass


class StateError(AdapterError):
    pass


class SpawnFailure(AdapterError):
    pass


class MissingProperty(AdapterError):
    pass


class UnknownVr(AdapterError):
    pass


class WrongCausality(AdapterError):
    pass


class TypeMismatch(AdapterError):
    pass


class RemoteError(AdapterError):
    pass


class BadCommunicationPoint(AdapterError):
    pass


class BadStepSize(AdapterError):
    pass


class State(enum.Enum):
    INSTANTIATED = "Instantiated"
    INITIALIZATION_MODE = "InitializationMode"
    STEP_MODE = "StepMode"
    TERMINATED = "Terminated"
    ERROR = "Error"
    FREED = "Freed"


def to_ticks(seconds: float, what: str = "time") -> int:
    """Seconds to integer nanoseconds, rounding half away from zero.

    Raises :class:`BadStepSize` if the value is more than 1e-3 ns away from
    a whole nanosecond.
    """
    if not math.isfinite(seconds):
        raise BadStepSize(f"{what} {seconds!r} is not finite")
    exact = seconds * TICKS_PER_SECOND
    ticks = int(math.copysign(math.floor(abs(exact) + 0.5), exact))
    if abs(exact - ticks) > TICK_TOLERANCE:
        raise BadStepSize(f"{what} {seconds!r} s is not a whole number of nanoseconds")
    return ticks


@dataclass
class SpawnSpec:
    executable: Path
    args: List[str]

    @classmethod
    def from_model(cls, md: ModelDescription, fmu_root: Path, port: int) -> "SpawnSpec":
        exe = (fmu_root / md.vcml.executable).resolve()
        extra = md.vcml.args.split() if md.vcml.args else []
        return cls(exe, extra + [PORT_FLAG, str(port)])

    def argv(self) -> List[str]:
        return [str(self.executable)] + self.args


def _remote_override() -> Tuple[Optional[str], Optional[int]]:
    raw = os.environ.get(ENV_REMOTE)
    if not raw:
        return None, None
    host, sep, port = raw.rpartition(":")
    if not sep:
        return raw, None
    if not port.isdigit():
        raise AdapterError(f"{ENV_REMOTE}={raw!r}: bad port")
    return host or None, int(port)


def _load_md(source) -> ModelDescription:
    if isinstance(source, ModelDescription):
        return source
    if isinstance(source, (bytes, bytearray)):
        return parse(bytes(source))
    return load(source)


class AdapterInstance:
    """One FMU instance bound to one VP session."""

    def __init__(self, md: ModelDescription, resource_path: Optional[Union[str, Path]] = None):
        self.md = md
        self.vrmap: Dict[int, VarInfo] = vr_map(md)
        self.state = State.INSTANTIATED
        self.session: Optional[VspSession] = None
        self.child: Optional[subprocess.Popen] = None
        self.resource_path = Path(resource_path) if resource_path is not None else None
        self.host: Optional[str] = None
        self.port: Optional[int] = None
        self._point = 0
        self._remote_time: Optional[int] = None

    # -- bookkeeping --------------------------------------------------------

    @property
    def communication_point(self) -> float:
        return self._point / TICKS_PER_SECOND

    @property
    def communication_ticks(self) -> int:
        return self._point

    @property
    def spawned(self) -> bool:
        return self.child is not None

    def transcript(self) -> List[Tuple[str, str]]:
        return list(self.session.transcript) if self.session is not None else []

    def _require(self, *states: State) -> None:
        if self.state not in states:
            allowed = ", ".join(s.value for s in states)
            raise StateError(f"call not allowed in state {self.state.value} (needs {allowed})")

    def _call(self, cmd: C.Command) -> C.Response:
        try:
            return self.session.call(cmd)
        except ClientError:
            self.state = State.ERROR
            raise

    def _info(self, vr: int) -> VarInfo:
        try:
            return self.vrmap[vr]
        except KeyError:
            raise UnknownVr(f"unknown valueReference {vr}") from None

    # -- lifecycle ----------------------------------------------------------

    def _connect(self, host: str, port: int, attempts: int, interval: float) -> None:
        if self.child is None:
            self.session = connect(host, port, attempts=attempts, interval=interval)
            return
        for i in range(attempts):
            code = self.child.poll()
            if code is not None:
                raise SpawnFailure(f"VP exited with status {code} before accepting a connection")
            try:
                self.session = connect(host, port, attempts=1, interval=0)
                return
            except ConnectTimeout:
                if i + 1 == attempts:
                    raise
                time.sleep(interval)

    def _spawn(self, port: int) -> None:
        if self.resource_path is None:
            raise SpawnFailure("model names an executable but no resource path was given")
        spec = SpawnSpec.from_model(self.md, self.resource_path.parent, port)
        if not spec.executable.is_file():
            raise SpawnFailure(f"VP executable {spec.executable} not found")
        log.info("spawning %s", " ".join(spec.argv()))
        try:
            self.child = subprocess.Popen(spec.argv(), stdin=subprocess.DEVNULL,
                                          stdout=subprocess.DEVNULL, start_new_session=True)
        except OSError as e:
            raise SpawnFailure(f"cannot start {spec.executable}: {e}") from e

    def _cross_check(self) -> None:
        resp = self._call(C.List())
        if isinstance(resp, C.Err):
            raise RemoteError(f"list failed: {resp.message}")
        remote = dict(resp.entries)
        missing = [v.name for v in self.md.variables
                   if v.causality is not Causality.INDEPENDENT and v.name not in remote]
        if missing:
            raise MissingProperty(", ".join(missing))
        for v in self.md.variables:
            if v.causality is not Causality.INDEPENDENT and remote[v.name] is not v.type:
                raise TypeMismatch(
                    f"{v.name} is {remote[v.name].value} on the VP, {v.type.value} in the model")

    def enter_initialization_mode(self, start_time: Optional[float] = None) -> None:
        self._require(State.INSTANTIATED)
        if start_time is None:
            ex = self.md.default_experiment
            start_time = ex.start_time if ex is not None and ex.start_time is not None else 0.0
        if start_time < 0:
            raise BadCommunicationPoint(f"negative start time {start_time}")
        start = to_ticks(start_time, "start time")
        for v in self.md.inputs():
            self._expect_ok(self._call(C.Set(v.name, v.start.encode())), v.name)
        if start > 0:
            self._step_remote(start)
        self._point = start
        self.state = State.INITIALIZATION_MODE

    def exit_initialization_mode(self) -> None:
        self._require(State.INITIALIZATION_MODE)
        self.state = State.STEP_MODE

    def _expect_ok(self, resp: C.Response, name: str) -> None:
        if isinstance(resp, C.Err):
            if resp.code is C.ErrorCode.TYPE_MISMATCH:
                raise TypeMismatch(f"{name}: {resp.message}")
            raise RemoteError(f"{name}: {resp.message}")

    def _step_remote(self, ticks: int) -> None:
        resp = self._call(C.Step(ticks))
        if isinstance(resp, C.Err):
            self.state = State.ERROR
            raise RemoteError(f"step failed: {resp.message}")
        if self._remote_time is not None and resp.ticks != self._remote_time + ticks:
            self.state = State.ERROR
            raise RemoteError(
                f"VP time drifted: expected {self._remote_time + ticks}, got {resp.ticks}")
        self._remote_time = resp.ticks

    def get_values(self, vrs: Sequence[int]) -> list:
        self._require(State.INITIALIZATION_MODE, State.STEP_MODE)
        infos = [self._info(vr) for vr in vrs]
        for vr, info in zip(vrs, infos):
            if info.causality is Causality.INPUT:
                raise WrongCausality(f"valueReference {vr} ({info.name}) is an input")
        out = []
        for info in infos:
            if info.causality is Causality.INDEPENDENT:
                out.append(self.communication_point)
                continue
            resp = self._call(C.Get(info.name))
            if isinstance(resp, C.Err):
                raise RemoteError(f"get {info.name}: {resp.message}")
            if resp.type is not info.type:
                raise TypeMismatch(f"{info.name}: VP returned {resp.type.value}")
            try:
                out.append(PropertyValue.decode(info.type, resp.value).value)
            except BadValue as e:
                raise TypeMismatch(f"{info.name}: {e}") from None
        return out

    def set_values(self, vrs: Sequence[int], values: Sequence) -> None:
        self._require(State.INITIALIZATION_MODE, State.STEP_MODE)
        if len(vrs) != len(values):
            raise ValueError("vrs and values differ in length")
        encoded = []
        for vr, value in zip(vrs, values):
            info = self._info(vr)
            if info.causality is not Causality.INPUT:
                raise WrongCausality(
                    f"valueReference {vr} ({info.name}) has causality {info.causality.value}")
            try:
                encoded.append((info.name, PropertyValue(info.type, value).encode()))
            except BadValue as e:
                raise TypeMismatch(f"{info.name}: {e}") from None
        for name, text in encoded:
            self._expect_ok(self._call(C.Set(name, text)), name)

    def do_step(self, current_point: float, step_size: float) -> None:
        self._require(State.STEP_MODE)
        if not step_size > 0:
            raise BadStepSize(f"step size must be positive, got {step_size}")
        ticks = to_ticks(step_size, "step size")
        if abs(current_point * TICKS_PER_SECOND - self._point) > 1:
            raise BadCommunicationPoint(
                f"current point {current_point} s != instance point {self.communication_point} s")
        self._step_remote(ticks)
        self._point += ticks

    def remote_time(self) -> int:
        """Ask the VP for its current time in ticks (diagnostic, not part of FMI)."""
        self._require(State.INSTANTIATED, State.INITIALIZATION_MODE, State.STEP_MODE)
        return self._call(C.GetTime()).ticks

    def remote_get(self, name: str) -> PropertyValue:
        """Read any VP property by path, declared in the model or not."""
        self._require(State.INSTANTIATED, State.INITIALIZATION_MODE, State.STEP_MODE)
        resp = self._call(C.Get(name))
        if isinstance(resp, C.Err):
            raise RemoteError(f"get {name}: {resp.message}")
        return PropertyValue.decode(resp.type, resp.value)

    def terminate(self) -> None:
        self._require(State.INSTANTIATED, State.INITIALIZATION_MODE, State.STEP_MODE)
        self._teardown()
        self.state = State.TERMINATED

    def free(self) -> None:
        if self.state is State.FREED:
            raise StateError("instance already freed")
        self._teardown()
        self.state = State.FREED

    def _teardown(self) -> None:
        if self.session is not None and not self.session.closed:
            self.session.quit()
        elif self.child is not None and self.child.poll() is None:
            # never got a session, so the VP would wait for a client forever
            self.child.terminate()
        self._reap()

    def _reap(self) -> None:
        child = self.child
        if child is None or child.returncode is not None:
            return
        try:
            child.wait(timeout=REAP_GRACE)
        except subprocess.TimeoutExpired:
            log.warning("VP pid %d did not exit, killing it", child.pid)
            try:
                os.killpg(child.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            child.wait()


def instantiate(md_source, resource_path: Optional[Union[str, Path]] = None,
                host: Optional[str] = None, port: Optional[int] = None,
                connect_attempts: int = CONNECT_ATTEMPTS,
                connect_interval: float = CONNECT_INTERVAL) -> AdapterInstance:
    """Create an instance and connect it to its VP.

    ``resource_path`` is the unpacked FMU's ``resources`` directory; the
    executable named in the VCML annotation is resolved against its parent.
    A ``host`` override (argument or environment) forces remote attach.
    """
    md = _load_md(md_source)
    inst = AdapterInstance(md, resource_path)
    env_host, env_port = _remote_override()
    host = host or env_host
    port = port or env_port or md.vcml.port
    try:
        if md.vcml.executable is not None and host is None:
            inst._spawn(port)
            host = md.vcml.host
        host = host or md.vcml.host
        inst.host, inst.port = host, port
        inst._connect(host, port, connect_attempts, connect_interval)
        inst._cross_check()
    except BaseException:
        inst.free()
        raise
    return inst
