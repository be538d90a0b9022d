"""``$payload#hh`` frame codec with ``+``/``-`` acknowledgements.

Payloads are restricted to printable ASCII without ``$`` and ``#``, so no
escaping or run-length encoding is needed. The checksum is the byte sum
modulo 256 written as two lowercase hex digits.
"""

from __future__ import annotations

from typing import Iterator, List, Optional, Tuple, Union

ACK = b"+"
NAK = b"-"
MAX_NAKS = 3
MAX_PAYLOAD = 4096
MAX_BUFFER = 65536

_HEX = b"0123456789abcdef"


class FramingError(Exception):
    pass


class IllegalByte(FramingError):
    pass


class Incomplete(FramingError):
    pass


class BadChecksum(FramingError):
    def __init__(self, msg, consumed=0):
        super().__init__(msg)
        self.consumed = consumed


class Malformed(FramingError):
    def __init__(self, msg, consumed=0):
        super().__init__(msg)
        self.consumed = consumed


def _as_bytes(payload: Union[str, bytes]) -> bytes:
    if isinstance(payload, str):
        try:
            return payload.encode("ascii")
        except UnicodeEncodeError:
            raise IllegalByte(f"non-ASCII payload {payload!r}") from None
    return bytes(payload)


def is_legal_byte(b: int) -> bool:
    return 0x20 <= b <= 0x7E and b != 0x24 and b != 0x23


def check_payload(payload: Union[str, bytes]) -> bytes:
    data = _as_bytes(payload)
    for i, b in enumerate(data):
        if not is_legal_byte(b):
            raise IllegalByte(f"illegal byte 0x{b:02x} at offset {i}")
    return data


def checksum(payload: Union[str, bytes]) -> int:
    return sum(check_payload(payload)) % 256


def encode_frame(payload: Union[str, bytes]) -> bytes:
    data = check_payload(payload)
    return b"$" + data + b"#" + b"%02x" % (sum(data) % 256)


def decode_frame(buf: bytes) -> Tuple[bytes, int]:
    """Decode one frame from the start of ``buf``.

    Returns ``(payload, consumed)``. Raises :class:`Incomplete` when more
    bytes are needed; :class:`BadChecksum` and :class:`Malformed` carry the
    number of bytes the caller should discard.
    """
    if not buf:
        raise Incomplete("empty buffer")
    if buf[0:1] != b"$":
        raise Malformed("frame must start with '$'", consumed=1)
    for i in range(1, len(buf)):
        b = buf[i]
        if b == 0x23:  # '#'
            end = i
            break
        if not is_legal_byte(b):
            # resynchronize on the offending '$' so a following frame survives
            skip = i if b == 0x24 else i + 1
            raise Malformed(f"illegal byte 0x{b:02x} in payload", consumed=skip)
    else:
        raise Incomplete("no '#' yet")
    if len(buf) < end + 3:
        raise Incomplete("checksum digits missing")
    digits = buf[end + 1:end + 3]
    consumed = end + 3
    if any(d not in _HEX for d in digits):
        raise Malformed(f"bad checksum digits {digits!r}", consumed=consumed)
    payload = bytes(buf[1:end])
    if int(digits, 16) != sum(payload) % 256:
        raise BadChecksum(
            f"checksum {digits.decode()} != {sum(payload) % 256:02x}", consumed=consumed)
    return payload, consumed


class StreamDecoder:
    """Incremental decoder for a byte stream mixing frames and ack bytes.

    ``feed`` buffers input; iterate :meth:`events` to drain it. Each event is
    one of ``("ack", None)``, ``("nak", None)``, ``("frame", payload)``,
    ``("bad", reason)`` (checksum failure, sender should be NAKed) or
    ``("junk", bytes)`` (unframed noise, skipped).
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf += data

    def buffered(self) -> int:
        return len(self._buf)

    def next_event(self) -> Optional[Tuple[str, object]]:
        buf = self._buf
        if not buf:
            return None
        head = buf[0]
        if head == 0x2B:
            del buf[:1]
            return ("ack", None)
        if head == 0x2D:
            del buf[:1]
            return ("nak", None)
        if head != 0x24:
            n = 1
            while n < len(buf) and buf[n] not in (0x24, 0x2B, 0x2D):
                n += 1
            junk = bytes(buf[:n])
            del buf[:n]
            return ("junk", junk)
        try:
            payload, consumed = decode_frame(bytes(buf))
        except Incomplete:
            if len(buf) > MAX_BUFFER:
                junk = bytes(buf)
                buf.clear()
                return ("junk", junk)
            return None
        except BadChecksum as e:
            del buf[:e.consumed]
            return ("bad", str(e))
        except Malformed as e:
            del buf[:max(e.consumed, 1)]
            return ("bad", str(e))
        del buf[:consumed]
        return ("frame", payload)

    def events(self) -> Iterator[Tuple[str, object]]:
        while True:
            ev = self.next_event()
            if ev is None:
                return
            yield ev


def decode_stream(data: bytes) -> List[bytes]:
    """Decode every complete frame in ``data``; ignores ack bytes."""
    dec = StreamDecoder()
    dec.feed(data)
    return [p for kind, p in dec.events() if kind == "frame"]
