"""Frame-aware TCP tap for testing: records traffic and can corrupt checksums.

Sits between one client and one server. Frames travelling client -> server
are re-emitted with a wrong checksum with probability ``corrupt_rate``
(seeded, so runs are reproducible); everything else is forwarded verbatim.
"""

from __future__ import annotations

import random
import socket
import threading
from typing import List, Optional, Tuple

from .framing import BadChecksum, Incomplete, Malformed, decode_frame, encode_frame


class FaultProxy:
    def __init__(self, upstream: Tuple[str, int], corrupt_rate: float = 0.0,
                 seed: int = 0, host: str = "127.0.0.1"):
        self.upstream = upstream
        self.corrupt_rate = corrupt_rate
        self._rng = random.Random(seed)
        self._listener = socket.create_server((host, 0))
        self.address = self._listener.getsockname()[:2]
        self.client_frames: List[bytes] = []   # as the client sent them
        self.server_frames: List[bytes] = []
        self.corrupted = 0
        self.client_bytes = bytearray()
        self._thread: Optional[threading.Thread] = None
        self._lock = threading.Lock()

    def start(self) -> "FaultProxy":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def join(self, timeout: float = 10.0) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def _run(self) -> None:
        try:
            down, _ = self._listener.accept()
        finally:
            self._listener.close()
        up = socket.create_connection(self.upstream)
        for s in (down, up):
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        t = threading.Thread(target=self._pump, args=(up, down, False), daemon=True)
        t.start()
        self._pump(down, up, True)
        t.join()

    def _pump(self, src: socket.socket, dst: socket.socket, from_client: bool) -> None:
        buf = bytearray()
        try:
            while True:
                data = src.recv(4096)
                if not data:
                    break
                if from_client:
                    self.client_bytes += data
                buf += data
                out = self._process(buf, from_client)
                if out:
                    dst.sendall(out)
        except OSError:
            pass
        finally:
            for s in (dst, src):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
            src.close()

    def _process(self, buf: bytearray, from_client: bool) -> bytes:
        out = bytearray()
        while buf:
            if buf[0:1] != b"$":
                out += buf[0:1]
                del buf[:1]
                continue
            try:
                payload, n = decode_frame(bytes(buf))
            except Incomplete:
                break
            except (BadChecksum, Malformed) as e:
                out += buf[:e.consumed or 1]
                del buf[:e.consumed or 1]
                continue
            del buf[:n]
            frame = encode_frame(payload)
            with self._lock:
                if from_client:
                    self.client_frames.append(payload)
                    if self._rng.random() < self.corrupt_rate:
                        self.corrupted += 1
                        bad = (int(frame[-2:], 16) + 1) % 256
                        frame = frame[:-2] + b"%02x" % bad
                else:
                    self.server_frames.append(payload)
            out += frame
        return bytes(out)
