"""Load an FMU's shared library with ctypes and drive it through ``fmi3*`` calls.

This is a minimal FMI 3.0 importer, used for smoke-testing packed FMUs the
way a third-party tool would load them.
"""

from __future__ import annotations

import ctypes
from pathlib import Path
from typing import Sequence

from .modeldesc import ModelDescription, vr_map
from .native import host_platform, library_extension
from .values import ValueType

FMI3_STATUS = ("OK", "Warning", "Discard", "Error", "Fatal")

_c_vr = ctypes.c_uint32
_CTYPES = {ValueType.FLOAT64: ctypes.c_double, ValueType.FLOAT32: ctypes.c_float,
           ValueType.UINT32: ctypes.c_uint32}

LogMessage = ctypes.CFUNCTYPE(None, ctypes.c_void_p, ctypes.c_int,
                              ctypes.c_char_p, ctypes.c_char_p)


class FmiCallFailed(Exception):
    def __init__(self, func, status):
        name = FMI3_STATUS[status] if 0 <= status < len(FMI3_STATUS) else str(status)
        super().__init__(f"{func} returned fmi3{name}")
        self.status = status


def library_path(fmu_root, md: ModelDescription) -> Path:
    plat = host_platform()
    return (Path(fmu_root) / "binaries" / plat /
            (md.co_simulation.model_identifier + library_extension(plat)))


class LibraryInstance:
    """Same surface as :class:`vpfmu.adapter.AdapterInstance`, backed by the C ABI."""

    def __init__(self, fmu_root, md: ModelDescription, name: str = "instance"):
        self.md = md
        self.vrmap = vr_map(md)
        self.messages = []
        self.lib = ctypes.CDLL(str(library_path(fmu_root, md)))
        self._declare()
        self._logger = LogMessage(self._on_log)
        resources = str(Path(fmu_root).resolve() / "resources") + "/"
        handle = self.lib.fmi3InstantiateCoSimulation(
            name.encode(), b"", resources.encode(), False, False, False, False,
            None, 0, None, self._logger, None)
        if not handle:
            raise FmiCallFailed("fmi3InstantiateCoSimulation", 3)
        self.handle = ctypes.c_void_p(handle)
        self._point = 0.0

    def _on_log(self, env, status, category, message):
        self.messages.append((status, (message or b"").decode("utf-8", "replace")))

    def _declare(self):
        L = self.lib
        inst, b, f64, sz = ctypes.c_void_p, ctypes.c_bool, ctypes.c_double, ctypes.c_size_t
        L.fmi3GetVersion.restype = ctypes.c_char_p
        L.fmi3InstantiateCoSimulation.restype = inst
        L.fmi3InstantiateCoSimulation.argtypes = [
            ctypes.c_char_p, ctypes.c_char_p, ctypes.c_char_p, b, b, b, b,
            ctypes.POINTER(_c_vr), sz, ctypes.c_void_p, LogMessage, ctypes.c_void_p]
        L.fmi3EnterInitializationMode.argtypes = [inst, b, f64, f64, b, f64]
        L.fmi3ExitInitializationMode.argtypes = [inst]
        L.fmi3Terminate.argtypes = [inst]
        L.fmi3FreeInstance.argtypes = [inst]
        L.fmi3FreeInstance.restype = None
        L.fmi3DoStep.argtypes = [inst, f64, f64, b, ctypes.POINTER(b), ctypes.POINTER(b),
                                 ctypes.POINTER(b), ctypes.POINTER(f64)]
        for vt, ct in _CTYPES.items():
            for op in ("Get", "Set"):
                fn = getattr(L, f"fmi3{op}{vt.value}")
                fn.argtypes = [inst, ctypes.POINTER(_c_vr), sz, ctypes.POINTER(ct), sz]

    def _check(self, func, status):
        if status != 0:
            raise FmiCallFailed(func, status)

    @property
    def version(self) -> str:
        return self.lib.fmi3GetVersion().decode()

    @property
    def communication_point(self) -> float:
        return self._point

    def enter_initialization_mode(self, start_time=None):
        if start_time is None:
            ex = self.md.default_experiment
            start_time = ex.start_time if ex and ex.start_time is not None else 0.0
        self._check("fmi3EnterInitializationMode", self.lib.fmi3EnterInitializationMode(
            self.handle, False, 0.0, start_time, False, 0.0))
        self._point = start_time

    def exit_initialization_mode(self):
        self._check("fmi3ExitInitializationMode",
                    self.lib.fmi3ExitInitializationMode(self.handle))

    def get_values(self, vrs: Sequence[int]) -> list:
        out = []
        for vr in vrs:
            vt = self.vrmap[vr].type
            ct = _CTYPES[vt]
            vra = (_c_vr * 1)(vr)
            vals = (ct * 1)()
            self._check(f"fmi3Get{vt.value}",
                        getattr(self.lib, f"fmi3Get{vt.value}")(self.handle, vra, 1, vals, 1))
            out.append(vals[0])
        return out

    def set_values(self, vrs: Sequence[int], values: Sequence) -> None:
        for vr, v in zip(vrs, values):
            vt = self.vrmap[vr].type
            ct = _CTYPES[vt]
            vra = (_c_vr * 1)(vr)
            vals = (ct * 1)(v)
            self._check(f"fmi3Set{vt.value}",
                        getattr(self.lib, f"fmi3Set{vt.value}")(self.handle, vra, 1, vals, 1))

    def do_step(self, current_point: float, step_size: float) -> None:
        ev, term, early = ctypes.c_bool(), ctypes.c_bool(), ctypes.c_bool()
        last = ctypes.c_double()
        self._check("fmi3DoStep", self.lib.fmi3DoStep(
            self.handle, current_point, step_size, True,
            ctypes.byref(ev), ctypes.byref(term), ctypes.byref(early), ctypes.byref(last)))
        self._point = last.value

    def remote_get(self, name):
        raise NotImplementedError("arbitrary property reads are not part of the FMI surface")

    def terminate(self):
        self._check("fmi3Terminate", self.lib.fmi3Terminate(self.handle))

    def free(self):
        if self.handle is not None:
            self.lib.fmi3FreeInstance(self.handle)
            self.handle = None
