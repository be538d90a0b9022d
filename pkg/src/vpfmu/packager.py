"""Assemble and inspect FMU archives.

Archives are deterministic: entries are sorted, timestamps fixed to
1980-01-01 and permissions normalized to 0644/0755.
"""

from __future__ import annotations

import io
import os
import re
import stat
import tempfile
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .modeldesc import ModelDescription, ModelDescriptionError, SubsetWarning, parse
from .native import library_extension

MD_NAME = "modelDescription.xml"
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
_PLATFORM = re.compile(r"[a-z0-9_]+-[a-z0-9_]+\Z")


class PackagerError(Exception):
    pass


class ValidationFailure(PackagerError):
    pass


class MissingVpBinary(PackagerError):
    pass


class IoFailure(PackagerError):
    pass


class CorruptArchive(PackagerError):
    pass


class LayoutViolation(PackagerError):
    pass


def _read(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e


def _is_executable(path) -> bool:
    return bool(os.stat(path).st_mode & stat.S_IXUSR)


def _check_member_path(name: str) -> str:
    p = PurePosixPath(name)
    if p.is_absolute() or ".." in p.parts or not name or name != str(p):
        raise ValidationFailure(f"bad archive path {name!r}")
    return name


def _load_md(data: bytes) -> ModelDescription:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SubsetWarning)
            return parse(data)
    except ModelDescriptionError as e:
        raise ValidationFailure(f"{MD_NAME}: {e}") from e


def _zipinfo(name: str, executable: bool) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.create_system = 3  # unix, so external_attr carries the mode
    info.external_attr = ((0o100755 if executable else 0o100644) & 0xFFFF) << 16
    return info


def build_archive(entries: Mapping[str, Tuple[bytes, bool]]) -> bytes:
    """Zip ``{name: (data, executable)}`` deterministically."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name in sorted(entries):
            data, exe = entries[name]
            zf.writestr(_zipinfo(name, exe), data)
    return buf.getvalue()


def pack(md_path, libs: Optional[Mapping[str, str]] = None, vp: Optional[str] = None,
         resources: Sequence[Tuple[str, str]] = (), out=None) -> Path:
    """Write an FMU archive to ``out``.

    ``libs`` maps FMI platform tuples (``x86_64-linux``) to shared library
    files; ``resources`` is a list of ``(source file, path under resources/)``.
    """
    if out is None:
        raise ValueError("an output path is required")
    md_bytes = _read(md_path)
    md = _load_md(md_bytes)
    entries: Dict[str, Tuple[bytes, bool]] = {MD_NAME: (md_bytes, False)}

    ident = md.co_simulation.model_identifier
    for plat, lib in sorted((libs or {}).items()):
        if not _PLATFORM.match(plat):
            raise ValidationFailure(f"bad platform tuple {plat!r}")
        try:
            ext = library_extension(plat)
        except ValueError as e:
            raise ValidationFailure(str(e)) from None
        entries[f"binaries/{plat}/{ident}{ext}"] = (_read(lib), True)

    exe = md.vcml.executable
    if exe is not None:
        if not exe.startswith("resources/"):
            raise ValidationFailure(f"VCML executable {exe!r} must live under resources/")
        if vp is None:
            raise MissingVpBinary(f"model names executable {exe!r} but no VP binary was given")
        entries[exe] = (_read(vp), True)
    elif vp is not None:
        raise ValidationFailure("a VP binary was given but the model has no VCML executable")

    for src, dst in resources:
        name = _check_member_path("resources/" + dst.lstrip("/"))
        if name in entries:
            raise ValidationFailure(f"duplicate archive entry {name}")
        entries[name] = (_read(src), _is_executable(src))

    data = build_archive(entries)
    out = Path(out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=".fmu-")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, out)
    except OSError as e:
        raise IoFailure(f"cannot write {out}: {e}") from e
    return out


@dataclass
class Entry:
    name: str
    size: int
    mode: int

    @property
    def executable(self) -> bool:
        return bool(self.mode & 0o111)


@dataclass
class Manifest:
    path: Path
    md: ModelDescription
    entries: List[Entry]
    platforms: List[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [f"FMU {self.path}",
                 f"  model {self.md.model_name} ({self.md.co_simulation.model_identifier})",
                 f"  platforms {', '.join(self.platforms) or '-'}",
                 f"  VP executable {self.md.vcml.executable or '- (remote attach)'}",
                 f"  VP address {self.md.vcml.host}:{self.md.vcml.port}"]
        for e in self.entries:
            lines.append(f"  {oct(e.mode)[2:]:>4} {e.size:>9} {e.name}")
        lines.append("  layout OK")
        return "\n".join(lines)


def inspect(path) -> Manifest:
    """Re-validate an FMU. Raises :class:`LayoutViolation` on any inconsistency."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as e:
        raise CorruptArchive(f"{path}: {e}") from e
    with zf:
        bad = zf.testzip()
        if bad is not None:
            raise CorruptArchive(f"{path}: CRC error in {bad}")
        infos = zf.infolist()
        entries = [Entry(i.filename, i.file_size, (i.external_attr >> 16) & 0o777)
                   for i in infos if not i.is_dir()]
        by_name = {e.name: e for e in entries}
        if MD_NAME not in by_name:
            raise LayoutViolation(f"{MD_NAME} missing from archive root")
        try:
            md = _load_md(zf.read(MD_NAME))
        except ValidationFailure as e:
            raise LayoutViolation(str(e)) from e
    for e in entries:
        p = PurePosixPath(e.name)
        if p.is_absolute() or ".." in p.parts:
            raise LayoutViolation(f"unsafe entry name {e.name!r}")

    platforms = []
    ident = md.co_simulation.model_identifier
    for e in entries:
        parts = e.name.split("/")
        if parts[0] != "binaries":
            continue
        if len(parts) != 3:
            raise LayoutViolation(f"unexpected binaries entry {e.name}")
        plat, fname = parts[1], parts[2]
        try:
            expected = ident + library_extension(plat)
        except ValueError:
            raise LayoutViolation(f"unknown platform directory {plat}") from None
        if fname != expected:
            raise LayoutViolation(f"{e.name}: expected binaries/{plat}/{expected}")
        platforms.append(plat)

    exe = md.vcml.executable
    if exe is not None:
        entry = by_name.get(exe)
        if entry is None:
            raise LayoutViolation(f"VCML executable {exe} not in archive")
        if not entry.executable:
            raise LayoutViolation(f"{exe} lost its executable bit")
    return Manifest(path, md, entries, sorted(platforms))


def unpack(path, dest) -> Path:
    """Extract an FMU, restoring executable bits. Returns ``dest``."""
    dest = Path(dest)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as e:
        raise CorruptArchive(f"{path}: {e}") from e
    with zf:
        for info in zf.infolist():
            p = PurePosixPath(info.filename)
            if p.is_absolute() or ".." in p.parts:
                raise LayoutViolation(f"unsafe entry name {info.filename!r}")
            target = dest.joinpath(*p.parts)
            if info.is_dir():
                target.mkdir(parents=True, exist_ok=True)
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(zf.read(info))
            mode = (info.external_attr >> 16) & 0o777
            if mode:
                os.chmod(target, mode)
    return dest


def repack(path, out) -> Path:
    """Rebuild an archive from an existing one (used to check byte stability)."""
    with zipfile.ZipFile(path) as zf:
        entries = {i.filename: (zf.read(i), bool((i.external_attr >> 16) & 0o111))
                   for i in zf.infolist() if not i.is_dir()}
    Path(out).write_bytes(build_archive(entries))
    return Path(out)
