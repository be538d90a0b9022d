"""Textual command/response vocabulary carried inside frames.

Commands::

    list | time | get,<path> | set,<path>,<value> | step,<ticks> | quit

Responses::

    OK | OK,<ticks> | OK,<type>,<value> | OK,<path>:<type>[;...] | E,<code>,<message>
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Tuple, Union

from .kernel import SIMTIME_MAX, is_valid_key
from .values import ValueType


class BadCommand(Exception):
    pass


class ErrorCode(enum.IntEnum):
    UNKNOWN_KEY = 1
    TYPE_MISMATCH = 2
    BAD_COMMAND = 3
    OVERFLOW = 4


# -- commands -----------------------------------------------------------------

@dataclass(frozen=True)
class List:
    pass


@dataclass(frozen=True)
class GetTime:
    pass


@dataclass(frozen=True)
class Get:
    key: str


@dataclass(frozen=True)
class Set:
    key: str
    value: str


@dataclass(frozen=True)
class Step:
    ticks: int


@dataclass(frozen=True)
class Quit:
    pass


Command = Union[List, GetTime, Get, Set, Step, Quit]


# -- responses ----------------------------------------------------------------

@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class OkTime:
    ticks: int


@dataclass(frozen=True)
class OkValue:
    type: ValueType
    value: str


@dataclass(frozen=True)
class OkList:
    entries: Tuple[Tuple[str, ValueType], ...]


@dataclass(frozen=True)
class Err:
    code: ErrorCode
    message: str


Response = Union[Ok, OkTime, OkValue, OkList, Err]


def _parse_ticks(text: str) -> int:
    # canonical decimal only, so render(parse(x)) == x
    if not text.isascii() or not text.isdigit() or (len(text) > 1 and text[0] == "0"):
        raise BadCommand(f"bad tick count {text!r}")
    n = int(text)
    if n > SIMTIME_MAX:
        raise BadCommand(f"tick count {text} exceeds 64 bits")
    return n


def _key(text: str) -> str:
    if not is_valid_key(text):
        raise BadCommand(f"bad property path {text!r}")
    return text


def _as_text(payload) -> str:
    if isinstance(payload, (bytes, bytearray)):
        try:
            return bytes(payload).decode("ascii")
        except UnicodeDecodeError:
            raise BadCommand("non-ASCII payload") from None
    return payload


def parse_command(payload) -> Command:
    text = _as_text(payload)
    verb, sep, rest = text.partition(",")
    if verb == "list" and not sep:
        return List()
    if verb == "time" and not sep:
        return GetTime()
    if verb == "quit" and not sep:
        return Quit()
    if verb == "get" and sep and "," not in rest:
        return Get(_key(rest))
    if verb == "set" and sep:
        key, sep2, value = rest.partition(",")
        if sep2:
            return Set(_key(key), value)
    if verb == "step" and sep:
        return Step(_parse_ticks(rest))
    raise BadCommand(f"unrecognized command {text!r}")


def render_command(cmd: Command) -> str:
    if isinstance(cmd, List):
        return "list"
    if isinstance(cmd, GetTime):
        return "time"
    if isinstance(cmd, Quit):
        return "quit"
    if isinstance(cmd, Get):
        return f"get,{cmd.key}"
    if isinstance(cmd, Set):
        return f"set,{cmd.key},{cmd.value}"
    if isinstance(cmd, Step):
        return f"step,{cmd.ticks}"
    raise TypeError(f"not a command: {cmd!r}")


_TYPE_NAMES = {t.value: t for t in ValueType}


def parse_response(payload) -> Response:
    text = _as_text(payload)
    if text == "OK":
        return Ok()
    if text.startswith("E,"):
        code, sep, message = text[2:].partition(",")
        if not sep or not code.isdigit():
            raise BadCommand(f"bad error response {text!r}")
        try:
            return Err(ErrorCode(int(code)), message)
        except ValueError:
            raise BadCommand(f"unknown error code {code}") from None
    if not text.startswith("OK,"):
        raise BadCommand(f"unrecognized response {text!r}")
    body = text[3:]
    if body.isascii() and body.isdigit():
        return OkTime(_parse_ticks(body))
    head, sep, value = body.partition(",")
    if sep and head in _TYPE_NAMES:
        return OkValue(_TYPE_NAMES[head], value)
    if body == "":
        return OkList(())
    entries = []
    for item in body.split(";"):
        path, sep, tname = item.partition(":")
        if not sep or tname not in _TYPE_NAMES or not is_valid_key(path):
            raise BadCommand(f"bad list entry {item!r}")
        entries.append((path, _TYPE_NAMES[tname]))
    return OkList(tuple(entries))


def render_response(resp: Response) -> str:
    if isinstance(resp, Ok):
        return "OK"
    if isinstance(resp, OkTime):
        return f"OK,{resp.ticks}"
    if isinstance(resp, OkValue):
        return f"OK,{resp.type.value},{resp.value}"
    if isinstance(resp, OkList):
        return "OK," + ";".join(f"{p}:{t.value}" for p, t in resp.entries)
    if isinstance(resp, Err):
        return f"E,{int(resp.code)},{resp.message}"
    raise TypeError(f"not a response: {resp!r}")


# which response kinds each command may legally produce
EXPECTED_RESPONSES = {
    List: (OkList, Err),
    GetTime: (OkTime,),
    Get: (OkValue, Err),
    Set: (Ok, Err),
    Step: (OkTime, Err),
    Quit: (Ok,),
}


def classifies(cmd: Command, resp: Response) -> bool:
    return isinstance(resp, EXPECTED_RESPONSES[type(cmd)])
