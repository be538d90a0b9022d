import ctypes
import shutil
import subprocess
from pathlib import Path

import pytest

from vpfmu import fmi3api
from vpfmu.fmi3host import FmiCallFailed, LibraryInstance
from vpfmu.modeldesc import load
from vpfmu.native import host_platform, library_extension
from vpfmu.packager import unpack

FMI3_ERROR = 3
EXPORTED = ["fmi3GetVersion", "fmi3InstantiateCoSimulation", "fmi3EnterInitializationMode",
            "fmi3ExitInitializationMode", "fmi3GetFloat32", "fmi3GetFloat64", "fmi3GetUInt32",
            "fmi3SetFloat32", "fmi3SetFloat64", "fmi3SetUInt32", "fmi3DoStep", "fmi3Terminate",
            "fmi3FreeInstance"]


@pytest.fixture
def root(fmu_kit, tmp_path):
    return unpack(fmu_kit["fmu"], tmp_path / "fmu")


def test_symbols_exported(shim_lib):
    lib = ctypes.CDLL(str(shim_lib))
    for name in EXPORTED:
        assert hasattr(lib, name), name


def test_library_instance_drives_vp(root):
    md = load(root / "modelDescription.xml")
    inst = LibraryInstance(root, md)
    assert inst.version == "3.0"
    inst.enter_initialization_mode()
    inst.exit_initialization_mode()
    for k in range(200):
        if k == 100:
            inst.set_values([1], [55.0])
        inst.do_step(3.0 + k * 0.01, 0.01)
    assert inst.get_values([2, 0]) == [1, pytest.approx(5.0, abs=1e-12)]
    inst.terminate()
    inst.free()


def test_library_reports_state_errors(root):
    md = load(root / "modelDescription.xml")
    inst = LibraryInstance(root, md)
    with pytest.raises(FmiCallFailed) as e:
        inst.do_step(0.0, 0.01)
    assert e.value.status == FMI3_ERROR
    with pytest.raises(FmiCallFailed):
        inst.get_values([1])  # input, not readable
    inst.enter_initialization_mode(0.0)
    inst.exit_initialization_mode()
    inst.do_step(0.0, 0.01)  # still usable afterwards
    inst.terminate()
    inst.free()
    assert inst.messages  # the failures were logged through the callback


def test_library_instantiate_failure_returns_null(root, tmp_path):
    md = load(root / "modelDescription.xml")
    (root / "resources" / "vp").unlink()
    with pytest.raises(FmiCallFailed):
        LibraryInstance(root, md)


def test_dispatch_never_raises():
    assert fmi3api.dispatch("do_step", 999, 0.0, 0.01, 0, 0, 0, 0) == FMI3_ERROR
    assert fmi3api.dispatch("no_such_call") == FMI3_ERROR


def test_c_host_program(root, tmp_path, shim_lib):
    cc = shutil.which("cc") or shutil.which("gcc")
    if cc is None:
        pytest.skip("no C compiler")
    exe = tmp_path / "fmi3_host"
    src = Path(__file__).parent / "data" / "fmi3_host.c"
    subprocess.run([cc, "-O1", "-o", str(exe), str(src), "-ldl"], check=True)
    lib = root / "binaries" / host_platform() / ("myVP" + library_extension(host_platform()))
    proc = subprocess.run([str(exe), str(lib), (root / "resources").as_uri() + "/"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    out = dict(line.split(" ", 1) for line in proc.stdout.splitlines())
    assert out["version"] == "3.0"
    assert out["exit_init_before_enter"] == str(FMI3_ERROR)
    assert out["status"] == "0"
    assert out["pin"] == "1"
    assert out["time"] == "5.000000000"
    assert out["set_output"] == str(FMI3_ERROR)
    assert out["terminate"] == "0"
    assert out["step_after_terminate"] == str(FMI3_ERROR)
