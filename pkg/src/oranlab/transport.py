"""Message-boundary-preserving transport between RIC and E2 nodes.

Plays the role SCTP plays in a real deployment: reliable, ordered,
bidirectional message delivery. Two interchangeable implementations:

  * LoopbackHub    in-process queues, usable from a single-threaded
                   deterministic scheduler (try_recv) or from threads (recv)
  * TCP            real sockets carrying the framed byte stream

Frame layout (bit-exact): 4-byte big-endian payload length, then payload.
Maximum payload is 2**24 bytes. A single stream per association; no
multi-streaming.
"""

from __future__ import annotations

import socket
import struct
import threading
from collections import deque
from typing import Optional

from .errors import Closed, Oversize, Refused, Unreachable

MAX_FRAME = 2**24
_LEN = struct.Struct(">I")


class _ClosedMarker:
    def __repr__(self) -> str:
        return "CLOSED"


#: Returned by recv()/try_recv() once the peer has closed and the queue drained.
CLOSED = _ClosedMarker()


def frame(payload: bytes) -> bytes:
    """Wrap a payload in the wire framing."""
    if len(payload) > MAX_FRAME:
        raise Oversize(f"payload {len(payload)} exceeds max frame {MAX_FRAME}")
    return _LEN.pack(len(payload)) + payload


class FrameDecoder:
    """Incremental decoder for a framed byte stream (feed bytes, pop frames)."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                return out
            (length,) = _LEN.unpack(bytes(self._buf[:4]))
            if length > MAX_FRAME:
                raise Oversize(f"frame length {length} exceeds max {MAX_FRAME}")
            if len(self._buf) < 4 + length:
                return out
            out.append(bytes(self._buf[4:4 + length]))
            del self._buf[:4 + length]

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# --- in-process loopback ------------------------------------------------------


class LoopbackConnection:
    """One end of a loopback association. FIFO, exactly-once, intact."""

    def __init__(self, name: str) -> None:
        self.name = name
        self._rx: deque[bytes] = deque()
        self._cond = threading.Condition()
        self._peer: Optional[LoopbackConnection] = None
        self._closed = False
        self._peer_closed = False

    def send(self, payload: bytes) -> None:
        if len(payload) > MAX_FRAME:
            raise Oversize(f"payload {len(payload)} exceeds max frame {MAX_FRAME}")
        peer = self._peer
        if self._closed or peer is None:
            raise Closed(f"send on closed connection {self.name}")
        with peer._cond:
            if peer._closed:
                raise Closed(f"peer of {self.name} is closed")
            peer._rx.append(bytes(payload))
            peer._cond.notify()

    def recv(self, timeout: Optional[float] = None):
        """Block until a message arrives; returns CLOSED after the peer
        closes and the queue is drained."""
        with self._cond:
            while not self._rx:
                if self._closed or self._peer_closed:
                    return CLOSED
                if not self._cond.wait(timeout=timeout):
                    raise TimeoutError(f"recv timeout on {self.name}")
            return self._rx.popleft()

    def try_recv(self):
        """Non-blocking receive: bytes, CLOSED, or None when nothing pending."""
        with self._cond:
            if self._rx:
                return self._rx.popleft()
            if self._closed or self._peer_closed:
                return CLOSED
            return None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        peer = self._peer
        if peer is not None:
            with peer._cond:
                peer._peer_closed = True
                peer._cond.notify_all()


class LoopbackListener:
    def __init__(self, hub: "LoopbackHub", name: str) -> None:
        self._hub = hub
        self.name = name
        self._pending: deque[LoopbackConnection] = deque()
        self._cond = threading.Condition()

    def accept(self, timeout: Optional[float] = None) -> LoopbackConnection:
        with self._cond:
            while not self._pending:
                if not self._cond.wait(timeout=timeout):
                    raise TimeoutError(f"accept timeout on {self.name}")
            return self._pending.popleft()

    def try_accept(self) -> Optional[LoopbackConnection]:
        with self._cond:
            return self._pending.popleft() if self._pending else None

    def _offer(self, conn: LoopbackConnection) -> None:
        with self._cond:
            self._pending.append(conn)
            self._cond.notify()


class LoopbackHub:
    """Named in-process listeners; connect() yields the client end."""

    def __init__(self) -> None:
        self._listeners: dict[str, LoopbackListener] = {}
        self._lock = threading.Lock()

    def listen(self, name: str) -> LoopbackListener:
        with self._lock:
            listener = LoopbackListener(self, name)
            self._listeners[name] = listener
            return listener

    def connect(self, name: str) -> LoopbackConnection:
        with self._lock:
            listener = self._listeners.get(name)
        if listener is None:
            raise Unreachable(f"no listener named {name!r}")
        client = LoopbackConnection(f"{name}:client")
        server = LoopbackConnection(f"{name}:server")
        client._peer = server
        server._peer = client
        listener._offer(server)
        return client


# --- TCP --------------------------------------------------------------------


class TcpConnection:
    """Framed messages over a connected TCP socket."""

    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock
        self._send_lock = threading.Lock()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, payload: bytes) -> None:
        data = frame(payload)
        with self._send_lock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise Closed(f"send failed: {exc}") from exc

    def _read_exact(self, n: int) -> Optional[bytes]:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except OSError as exc:
                raise Closed(f"recv failed: {exc}") from exc
            if not chunk:
                if buf:
                    raise Closed("stream ended mid-frame")
                return None
            buf.extend(chunk)
        return bytes(buf)

    def recv(self):
        head = self._read_exact(4)
        if head is None:
            return CLOSED
        (length,) = _LEN.unpack(head)
        if length > MAX_FRAME:
            raise Oversize(f"frame length {length} exceeds max {MAX_FRAME}")
        body = self._read_exact(length)
        if body is None and length > 0:
            raise Closed("stream ended mid-frame")
        return body if body is not None else b""

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def fileno(self) -> int:
        return self._sock.fileno()


class TcpListener:
    def __init__(self, host: str, port: int) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(16)

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def accept(self) -> TcpConnection:
        sock, _ = self._sock.accept()
        return TcpConnection(sock)

    def close(self) -> None:
        self._sock.close()


def tcp_listen(host: str, port: int = 0) -> TcpListener:
    return TcpListener(host, port)


def tcp_connect(host: str, port: int, timeout: float = 5.0) -> TcpConnection:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except ConnectionRefusedError as exc:
        raise Refused(f"{host}:{port} refused the connection") from exc
    except OSError as exc:
        raise Unreachable(f"{host}:{port} unreachable: {exc}") from exc
    sock.settimeout(None)
    return TcpConnection(sock)
