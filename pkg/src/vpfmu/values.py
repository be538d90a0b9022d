"""Typed scalar values shared by the kernel, the wire protocol and the FMU adapter."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import Union

UINT32_MAX = 0xFFFFFFFF


class BadValue(ValueError):
    pass


class ValueType(str, enum.Enum):
    FLOAT64 = "Float64"
    FLOAT32 = "Float32"
    UINT32 = "UInt32"
    BOOL = "Bool"
    STRING = "String"

    @classmethod
    def parse(cls, text: str) -> "ValueType":
        try:
            return cls(text)
        except ValueError:
            raise BadValue(f"unknown value type {text!r}") from None


def to_float32(x: float) -> float:
    """Round a Python float to the nearest IEEE single. Overflow becomes +-inf."""
    try:
        return struct.unpack("<f", struct.pack("<f", x))[0]
    except OverflowError:
        return math.copysign(math.inf, x)


def _format_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _format_float32(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return _format_float(x)
    # shortest decimal that survives a float32 round trip
    for digits in range(1, 10):
        text = f"{x:.{digits}g}"
        if to_float32(float(text)) == x:
            return repr(float(text))
    return repr(x)


Payload = Union[float, int, bool, str]


@dataclass(frozen=True, eq=False)
class PropertyValue:
    """A tagged scalar. Equality compares the canonical text, so NaN == NaN."""

    type: ValueType
    value: Payload

    def __post_init__(self):
        t, v = self.type, self.value
        if t in (ValueType.FLOAT64, ValueType.FLOAT32):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise BadValue(f"{t.value} needs a number, got {v!r}")
            v = float(v)
            if t is ValueType.FLOAT32:
                v = to_float32(v)
        elif t is ValueType.UINT32:
            if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= UINT32_MAX:
                raise BadValue(f"UInt32 out of range: {v!r}")
        elif t is ValueType.BOOL:
            if not isinstance(v, bool):
                raise BadValue(f"Bool needs True/False, got {v!r}")
        elif t is ValueType.STRING:
            if not isinstance(v, str):
                raise BadValue(f"String needs str, got {v!r}")
        object.__setattr__(self, "value", v)

    @classmethod
    def float64(cls, v: float) -> "PropertyValue":
        return cls(ValueType.FLOAT64, v)

    @classmethod
    def float32(cls, v: float) -> "PropertyValue":
        return cls(ValueType.FLOAT32, v)

    @classmethod
    def uint32(cls, v: int) -> "PropertyValue":
        return cls(ValueType.UINT32, v)

    @classmethod
    def boolean(cls, v: bool) -> "PropertyValue":
        return cls(ValueType.BOOL, v)

    @classmethod
    def string(cls, v: str) -> "PropertyValue":
        return cls(ValueType.STRING, v)

    def encode(self) -> str:
        t, v = self.type, self.value
        if t is ValueType.FLOAT64:
            return _format_float(v)
        if t is ValueType.FLOAT32:
            return _format_float32(v)
        if t is ValueType.UINT32:
            return str(v)
        if t is ValueType.BOOL:
            return "true" if v else "false"
        return v

    @classmethod
    def decode(cls, type_: ValueType, text: str) -> "PropertyValue":
        if type_ in (ValueType.FLOAT64, ValueType.FLOAT32):
            try:
                v = float(text)
            except ValueError:
                raise BadValue(f"not a {type_.value}: {text!r}") from None
            if text.strip() != text or "_" in text:
                raise BadValue(f"not a {type_.value}: {text!r}")
            return cls(type_, v)
        if type_ is ValueType.UINT32:
            if not text.isdigit() or not text.isascii():
                raise BadValue(f"not a UInt32: {text!r}")
            return cls(type_, int(text))
        if type_ is ValueType.BOOL:
            if text not in ("true", "false"):
                raise BadValue(f"not a Bool: {text!r}")
            return cls(type_, text == "true")
        return cls(type_, text)

    def __eq__(self, other):
        if not isinstance(other, PropertyValue):
            return NotImplemented
        return self.type is other.type and self.encode() == other.encode()

    def __hash__(self):
        return hash((self.type, self.encode()))

    def __repr__(self):
        return f"{self.type.value}({self.encode()})"
