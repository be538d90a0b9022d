"""Build the ``fmi3*`` shared library that fronts :mod:`vpfmu.fmi3api`."""

from __future__ import annotations

import os
import platform
import shutil
import subprocess
import sysconfig
from pathlib import Path
from typing import Optional

SHIM_SOURCE = Path(__file__).with_name("fmi3_shim.c")

_ARCH = {"x86_64": "x86_64", "amd64": "x86_64", "aarch64": "aarch64", "arm64": "aarch64",
         "i386": "x86", "i686": "x86"}
_OS = {"linux": "linux", "darwin": "darwin", "windows": "windows"}
EXTENSIONS = {"linux": ".so", "darwin": ".dylib", "windows": ".dll"}


class BuildError(Exception):
    pass


def host_platform() -> str:
    """FMI platform tuple of this machine, e.g. ``x86_64-linux``."""
    arch = _ARCH.get(platform.machine().lower(), platform.machine().lower())
    system = _OS.get(platform.system().lower(), platform.system().lower())
    return f"{arch}-{system}"


def library_extension(platform_tuple: str) -> str:
    system = platform_tuple.rpartition("-")[2]
    try:
        return EXTENSIONS[system]
    except KeyError:
        raise ValueError(f"unknown FMI platform {platform_tuple!r}") from None


def libpython_path() -> str:
    libdir = sysconfig.get_config_var("LIBDIR") or ""
    name = sysconfig.get_config_var("INSTSONAME") or sysconfig.get_config_var("LDLIBRARY")
    candidate = os.path.join(libdir, name) if name else ""
    if candidate and os.path.exists(candidate):
        return candidate
    return name or "libpython3.so"


def find_compiler() -> Optional[str]:
    for cc in (os.environ.get("CC"), "cc", "gcc", "clang"):
        if cc and shutil.which(cc):
            return cc
    return None


def build_library(out, cc: Optional[str] = None) -> Path:
    """Compile the shim for the host platform into ``out``."""
    if not host_platform().endswith("-linux"):
        raise BuildError("the shim build is only supported on Linux hosts")
    cc = cc or find_compiler()
    if cc is None:
        raise BuildError("no C compiler found (set CC)")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    src_root = str(Path(__file__).resolve().parents[2])
    cmd = [
        cc, "-shared", "-fPIC", "-O2", "-std=gnu11", "-fvisibility=hidden",
        f'-DVPFMU_LIBPYTHON="{libpython_path()}"',
        f'-DVPFMU_SYSPATH="{src_root}"',
        "-o", str(out), str(SHIM_SOURCE), "-ldl",
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise BuildError(f"{' '.join(cmd)} failed:\n{proc.stderr}")
    return out
