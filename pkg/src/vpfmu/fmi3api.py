"""Python side of the ``fmi3*`` C entry points in ``native/fmi3_shim.c``.

The shim passes instance handles as integers and arrays as raw addresses;
everything here returns an ``fmi3Status`` code (or a handle from
``instantiate``).
"""

from __future__ import annotations

import ctypes
import itertools
import logging
from pathlib import Path
from typing import Dict

from . import adapter
from .client import SessionLost
from .values import ValueType

log = logging.getLogger(__name__)

OK, WARNING, DISCARD, ERROR, FATAL = range(5)

_CTYPES = {
    "Float64": ctypes.c_double,
    "Float32": ctypes.c_float,
    "UInt32": ctypes.c_uint32,
}

_LogCallback = ctypes.CFUNCTYPE(None, ctypes.c_void_p, ctypes.c_int,
                                ctypes.c_char_p, ctypes.c_char_p)


class _Slot:
    def __init__(self, inst, logger, env):
        self.inst = inst
        self.logger = logger
        self.env = env

    def log(self, status, message):
        if self.logger is not None:
            self.logger(self.env, status, b"logStatusError", message.encode("utf-8", "replace"))


_instances: Dict[int, _Slot] = {}
_handles = itertools.count(1)


def _array(ptr, ctype, n):
    if n == 0:
        return []
    return (ctype * n).from_address(ptr)


def instantiate(name, resource_path, log_ptr, env_ptr):
    logger = _LogCallback(log_ptr) if log_ptr else None
    if resource_path.startswith("file://"):
        resource_path = resource_path[len("file://"):]
    res = Path(resource_path.rstrip("/")) if resource_path else None
    try:
        if res is None:
            raise adapter.AdapterError("no resource path")
        md_path = res.parent / "modelDescription.xml"
        inst = adapter.instantiate(md_path, res)
    except Exception as e:  # any failure means a NULL instance
        log.error("instantiate %s failed: %s", name, e)
        if logger is not None:
            logger(env_ptr, ERROR, b"logStatusError", str(e).encode("utf-8", "replace"))
        return 0
    handle = next(_handles)
    _instances[handle] = _Slot(inst, logger, env_ptr)
    return handle


def enter_initialization_mode(h, start_time):
    _instances[h].inst.enter_initialization_mode(start_time)
    return OK


def exit_initialization_mode(h):
    _instances[h].inst.exit_initialization_mode()
    return OK


def get(h, type_name, vr_ptr, nvr, val_ptr, nval):
    inst = _instances[h].inst
    if nvr != nval:
        raise adapter.AdapterError("array length mismatch")
    vrs = list(_array(vr_ptr, ctypes.c_uint32, nvr))
    for vr in vrs:
        if inst._info(vr).type is not ValueType(type_name):
            raise adapter.TypeMismatch(f"valueReference {vr} is not {type_name}")
    out = _array(val_ptr, _CTYPES[type_name], nval)
    for i, v in enumerate(inst.get_values(vrs)):
        out[i] = v
    return OK


def set(h, type_name, vr_ptr, nvr, val_ptr, nval):  # noqa: A001
    inst = _instances[h].inst
    if nvr != nval:
        raise adapter.AdapterError("array length mismatch")
    vrs = list(_array(vr_ptr, ctypes.c_uint32, nvr))
    for vr in vrs:
        if inst._info(vr).type is not ValueType(type_name):
            raise adapter.TypeMismatch(f"valueReference {vr} is not {type_name}")
    values = list(_array(val_ptr, _CTYPES[type_name], nval))
    inst.set_values(vrs, values)
    return OK


def do_step(h, current, step, event_ptr, term_ptr, early_ptr, last_ptr):
    inst = _instances[h].inst
    for ptr in (event_ptr, term_ptr, early_ptr):
        if ptr:
            ctypes.c_bool.from_address(ptr).value = False
    inst.do_step(current, step)
    if last_ptr:
        ctypes.c_double.from_address(last_ptr).value = inst.communication_point
    return OK


def terminate(h):
    _instances[h].inst.terminate()
    return OK


def free(h):
    slot = _instances.pop(h, None)
    if slot is not None and slot.inst.state is not adapter.State.FREED:
        slot.inst.free()
    return OK


def dispatch(name, *args):
    """Entry point called from C. Never raises."""
    try:
        if name == "instantiate":
            return instantiate(*args)
        handle = args[0]
        if handle not in _instances:
            return ERROR
        try:
            return globals()[name](*args)
        except Exception as e:
            status = FATAL if isinstance(e, SessionLost) else ERROR
            log.error("%s: %s", name, e)
            slot = _instances.get(handle)
            if slot is not None:
                slot.log(status, f"{name}: {e}")
            return status
    except Exception:  # pragma: no cover - last line of defence
        log.exception("dispatch %s", name)
        return ERROR
