import socket
import threading
from pathlib import Path

import pytest

from vpfmu import harness, packager, refvp
from vpfmu.modeldesc import serialize
from vpfmu.native import build_library, find_compiler, host_platform, library_extension
from vpfmu.server import VspServer

DATA = Path(__file__).parent / "data"


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class ServedPlatform:
    """Reference VP served from a background thread."""

    def __init__(self, overrides=None, read_timeout=10.0):
        self.platform = refvp.build_platform(overrides)
        self.kernel = self.platform.kernel
        self.server = VspServer(self.kernel, "127.0.0.1", 0, read_timeout=read_timeout)
        self.host, self.port = self.server.address
        self.result = None
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        self.result = self.server.serve(accept_timeout=20)

    def join(self, timeout=10):
        self._thread.join(timeout)
        return not self._thread.is_alive()


@pytest.fixture
def served():
    started = []

    def start(overrides=None, **kw):
        sp = ServedPlatform(overrides, **kw)
        started.append(sp)
        return sp

    yield start
    for sp in started:
        sp.server.close()


@pytest.fixture(scope="session")
def shim_lib(tmp_path_factory):
    if find_compiler() is None:
        pytest.skip("no C compiler")
    out = tmp_path_factory.mktemp("lib") / f"myVP{library_extension(host_platform())}"
    return build_library(out)


@pytest.fixture(scope="session")
def fmu_kit(tmp_path_factory, shim_lib):
    """Spawn-mode and remote-attach FMUs of the reference VP, plus the md files."""
    d = tmp_path_factory.mktemp("kit")
    port = free_port()
    vp = refvp.write_launcher(d / "vp")
    md = d / "myVP.xml"
    md.write_bytes(serialize(refvp.reference_model_description(port=port, host="127.0.0.1")))
    md_remote = d / "myVP-remote.xml"
    md_remote.write_bytes(serialize(refvp.reference_model_description(
        port=port, host="127.0.0.1", executable=None)))
    plat = host_platform()
    spawn = packager.pack(md, {plat: shim_lib}, vp, out=d / "myVP.fmu")
    remote = packager.pack(md_remote, {plat: shim_lib}, out=d / "myVP-remote.fmu")
    hyst = harness.hysteresis_scenario().save(d / "hysteresis.csv")
    const = harness.constant_scenario().save(d / "constant.csv")
    return {"dir": d, "vp": Path(vp), "md": md, "md_remote": md_remote, "lib": shim_lib,
            "fmu": spawn, "fmu_remote": remote, "hysteresis": hyst, "constant": const}


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
