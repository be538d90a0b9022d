"""Single-session TCP server that remote-controls a :class:`~vpfmu.kernel.Kernel`.

Simulation time only advances inside ``step`` commands; between commands
the kernel is frozen.
"""

from __future__ import annotations

import enum
import errno
import logging
import socket
from typing import List, Optional, Tuple

from . import commands as C
from .framing import ACK, MAX_NAKS, MAX_PAYLOAD, NAK, StreamDecoder, encode_frame
from .kernel import Kernel, Overflow, SIMTIME_MAX, TypeMismatch, UnknownKey
from .values import BadValue, PropertyValue

log = logging.getLogger(__name__)

DEFAULT_HOST = "127.0.0.1"
READ_TIMEOUT = 30.0


class ServerError(Exception):
    pass


class PortInUse(ServerError):
    pass


class BindDenied(ServerError):
    pass


class ProtocolError(ServerError):
    pass


class SessionState(enum.Enum):
    AWAITING_CLIENT = "AwaitingClient"
    SERVING = "Serving"
    CLOSED = "Closed"


def execute(kernel: Kernel, cmd: C.Command) -> C.Response:
    """Apply one command to the kernel. Failures become ``Err`` responses."""
    try:
        if isinstance(cmd, C.List):
            return C.OkList(tuple(kernel.properties.listing()))
        if isinstance(cmd, C.GetTime):
            return C.OkTime(kernel.now())
        if isinstance(cmd, C.Get):
            v = kernel.get_property(cmd.key)
            return C.OkValue(v.type, v.encode())
        if isinstance(cmd, C.Set):
            prop = kernel.properties.lookup(cmd.key)
            try:
                value = PropertyValue.decode(prop.type, cmd.value)
            except BadValue as e:
                return C.Err(C.ErrorCode.TYPE_MISMATCH, str(e))
            prop.set(value)
            return C.Ok()
        if isinstance(cmd, C.Step):
            target = kernel.now() + cmd.ticks
            if target > SIMTIME_MAX:
                return C.Err(C.ErrorCode.OVERFLOW, "time overflow")
            kernel.run_until(target)
            return C.OkTime(kernel.now())
        if isinstance(cmd, C.Quit):
            return C.Ok()
    except UnknownKey as e:
        return C.Err(C.ErrorCode.UNKNOWN_KEY, f"unknown key {e}")
    except TypeMismatch as e:
        return C.Err(C.ErrorCode.TYPE_MISMATCH, str(e))
    except Overflow as e:
        return C.Err(C.ErrorCode.OVERFLOW, str(e))
    return C.Err(C.ErrorCode.BAD_COMMAND, "unsupported command")


def _sanitize(message: str) -> str:
    return "".join(ch if 0x20 <= ord(ch) <= 0x7E and ch not in "$#" else "?"
                   for ch in message)


class VspServer:
    """Bind on construction, then :meth:`serve` exactly one client."""

    def __init__(self, kernel: Kernel, host: str = DEFAULT_HOST, port: int = 0,
                 read_timeout: float = READ_TIMEOUT):
        if not 0 <= port <= 65535:
            raise ValueError(f"port out of range: {port}")
        self.kernel = kernel
        self.read_timeout = read_timeout
        self.state = SessionState.AWAITING_CLIENT
        # (command payload, response payload) in execution order
        self.transcript: List[Tuple[str, str]] = []
        self.executed: List[C.Command] = []
        self.naks_sent = 0
        self.naks_received = 0
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind((host, port))
        except OSError as e:
            self._listener.close()
            if e.errno == errno.EADDRINUSE:
                raise PortInUse(f"{host}:{port} already in use") from e
            if e.errno in (errno.EACCES, errno.EPERM, errno.EADDRNOTAVAIL):
                raise BindDenied(f"cannot bind {host}:{port}: {e}") from e
            raise
        self._listener.listen(1)

    @property
    def address(self) -> Tuple[str, int]:
        return self._listener.getsockname()[:2]

    def close(self) -> None:
        self._listener.close()
        self.state = SessionState.CLOSED

    def serve(self, accept_timeout: Optional[float] = None) -> int:
        """Accept one client and run its session. Returns 0 on clean shutdown."""
        self._listener.settimeout(accept_timeout)
        try:
            conn, peer = self._listener.accept()
        except socket.timeout:
            self.close()
            return 1
        finally:
            # one session per lifetime: later clients are refused
            self._listener.close()
        log.info("client connected from %s:%d", *peer[:2])
        self.state = SessionState.SERVING
        try:
            return self._session(conn)
        except OSError as e:
            log.error("session aborted: %s", e)
            return 1
        finally:
            conn.close()
            self.state = SessionState.CLOSED

    def _session(self, conn: socket.socket) -> int:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(self.read_timeout)
        dec = StreamDecoder()
        unacked: Optional[bytes] = None
        naks = 0
        while True:
            for kind, data in dec.events():
                if kind == "ack":
                    unacked = None
                elif kind == "nak":
                    self.naks_received += 1
                    if unacked is None:
                        continue
                    naks += 1
                    if naks >= MAX_NAKS:
                        log.error("reply NAKed %d times, closing session", naks)
                        return 1
                    conn.sendall(unacked)
                elif kind == "bad":
                    self.naks_sent += 1
                    conn.sendall(NAK)
                elif kind == "frame":
                    conn.sendall(ACK)
                    cmd, resp = self._handle(data)
                    reply = encode_frame(C.render_response(resp))
                    conn.sendall(reply)
                    unacked, naks = reply, 0
                    if isinstance(cmd, C.Quit):
                        return 0
            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                log.error("no traffic for %.0f s, closing session", self.read_timeout)
                return 1
            except OSError:
                return 0
            if not chunk:
                return 0
            dec.feed(chunk)

    def _handle(self, payload: bytes):
        text = payload.decode("ascii")
        if len(payload) > MAX_PAYLOAD:
            resp = C.Err(C.ErrorCode.BAD_COMMAND, "frame too large")
            self.transcript.append((text[:64], C.render_response(resp)))
            return None, resp
        try:
            cmd = C.parse_command(text)
        except C.BadCommand as e:
            resp = C.Err(C.ErrorCode.BAD_COMMAND, _sanitize(str(e)))
            self.transcript.append((text, C.render_response(resp)))
            return None, resp
        resp = execute(self.kernel, cmd)
        if isinstance(resp, C.Err):
            resp = C.Err(resp.code, _sanitize(resp.message))
        self.executed.append(cmd)
        self.transcript.append((text, C.render_response(resp)))
        return cmd, resp


def serve(kernel: Kernel, host: str = DEFAULT_HOST, port: int = 0, **kw) -> int:
    return VspServer(kernel, host, port, **kw).serve()
