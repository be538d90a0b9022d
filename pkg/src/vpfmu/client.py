"""Client side of the VP remote-control protocol."""

from __future__ import annotations

import logging
import socket
import time
from typing import List, Optional, Tuple

from . import commands as C
from .framing import ACK, MAX_NAKS, NAK, StreamDecoder, encode_frame

log = logging.getLogger(__name__)

CONNECT_ATTEMPTS = 10
CONNECT_INTERVAL = 0.5
CALL_TIMEOUT = 30.0
QUIT_TIMEOUT = 2.0


class ClientError(Exception):
    pass


class ConnectTimeout(ClientError):
    pass


class Refused(ClientError):
    pass


class SessionLost(ClientError):
    pass


class ProtocolError(ClientError):
    pass


class VspSession:
    """An open connection to a VP server.

    Every call is recorded in :attr:`transcript` as a pair of payload
    strings, which makes sessions easy to diff against each other.
    """

    def __init__(self, sock: socket.socket, call_timeout: float = CALL_TIMEOUT):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock: Optional[socket.socket] = sock
        self._dec = StreamDecoder()
        self.call_timeout = call_timeout
        self.transcript: List[Tuple[str, str]] = []
        self.retransmits = 0

    @property
    def closed(self) -> bool:
        return self._sock is None

    def _recv(self, deadline: float) -> None:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise socket.timeout
        self._sock.settimeout(remaining)
        chunk = self._sock.recv(65536)
        if not chunk:
            raise SessionLost("server closed the connection")
        self._dec.feed(chunk)

    def call(self, cmd: C.Command, timeout: Optional[float] = None) -> C.Response:
        if self._sock is None:
            raise SessionLost("session is closed")
        text = C.render_command(cmd)
        frame = encode_frame(text)
        deadline = time.monotonic() + (self.call_timeout if timeout is None else timeout)
        naks = 0
        try:
            self._sock.sendall(frame)
            while True:
                for kind, data in self._dec.events():
                    if kind == "nak":
                        naks += 1
                        if naks >= MAX_NAKS:
                            raise ProtocolError(f"{text!r} NAKed {naks} times")
                        self.retransmits += 1
                        self._sock.sendall(frame)
                    elif kind == "bad":
                        self._sock.sendall(NAK)
                    elif kind == "frame":
                        self._sock.sendall(ACK)
                        resp_text = data.decode("ascii")
                        try:
                            resp = C.parse_response(resp_text)
                        except C.BadCommand as e:
                            raise ProtocolError(str(e)) from None
                        if not C.classifies(cmd, resp):
                            raise ProtocolError(f"{resp_text!r} does not answer {text!r}")
                        self.transcript.append((text, resp_text))
                        return resp
                self._recv(deadline)
        except socket.timeout:
            self._abort()
            raise SessionLost(f"no reply to {text!r}") from None
        except OSError as e:
            self._abort()
            raise SessionLost(str(e)) from e
        except ClientError:
            self._abort()
            raise

    def _abort(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def quit(self) -> None:
        """Send ``quit`` and close. Never raises; repeated calls are no-ops."""
        if self._sock is None:
            return
        try:
            self.call(C.Quit(), timeout=QUIT_TIMEOUT)
        except ClientError as e:
            log.debug("quit: %s", e)
        finally:
            self._abort()

    close = _abort

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.quit()


def connect(host: str, port: int, timeout: float = 2.0,
            attempts: int = CONNECT_ATTEMPTS, interval: float = CONNECT_INTERVAL,
            call_timeout: float = CALL_TIMEOUT) -> VspSession:
    """Open a session, retrying up to ``attempts`` times ``interval`` apart."""
    last: Optional[Exception] = None
    for i in range(attempts):
        if i:
            time.sleep(interval)
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except socket.gaierror as e:
            raise Refused(f"cannot resolve {host}: {e}") from e
        except (ConnectionRefusedError, socket.timeout, OSError) as e:
            last = e
            continue
        return VspSession(sock, call_timeout=call_timeout)
    raise ConnectTimeout(f"{host}:{port} unreachable after {attempts} attempts: {last}")
