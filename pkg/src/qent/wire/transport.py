"""Byte transports: an in-process loopback pair and TCP sockets.

Both expose the same three calls, ``send_bytes``, ``recv_bytes`` (blocking,
``b""`` at end of stream) and ``close``.  Framing is done above this layer by
:class:`~qent.wire.codec.FrameReader`, so the two carry identical bytes.
"""

from __future__ import annotations

import queue
import socket
import threading

_EOF = b""


class LoopbackEndpoint:
    def __init__(self, inbox: queue.SimpleQueue, outbox: queue.SimpleQueue, name: str):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = threading.Event()
        self.name = name

    def send_bytes(self, data: bytes) -> None:
        if self._closed.is_set():
            raise ConnectionError(f"loopback endpoint {self.name} is closed")
        if data:
            self._outbox.put(bytes(data))

    def recv_bytes(self) -> bytes:
        return self._inbox.get()

    def close(self) -> None:
        if not self._closed.is_set():
            self._closed.set()
            # wake both readers
            self._outbox.put(_EOF)
            self._inbox.put(_EOF)

    def __repr__(self):
        return f"LoopbackEndpoint({self.name})"


def loopback_transport() -> tuple[LoopbackEndpoint, LoopbackEndpoint]:
    """Two connected in-process endpoints; FIFO per direction, no loss."""
    a_to_b: queue.SimpleQueue = queue.SimpleQueue()
    b_to_a: queue.SimpleQueue = queue.SimpleQueue()
    return LoopbackEndpoint(b_to_a, a_to_b, "a"), LoopbackEndpoint(a_to_b, b_to_a, "b")


class SocketEndpoint:
    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._send_lock = threading.Lock()
        self.name = "%s:%d" % sock.getpeername()[:2]

    def send_bytes(self, data: bytes) -> None:
        with self._send_lock:
            self._sock.sendall(data)

    def recv_bytes(self) -> bytes:
        try:
            return self._sock.recv(1 << 16)
        except OSError:
            return _EOF

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __repr__(self):
        return f"SocketEndpoint({self.name})"


class Listener:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._sock = socket.create_server((host, port))
        self.address = self._sock.getsockname()[:2]

    def accept(self, timeout: float | None = None) -> SocketEndpoint:
        self._sock.settimeout(timeout)
        conn, _ = self._sock.accept()
        conn.settimeout(None)
        return SocketEndpoint(conn)

    def close(self) -> None:
        self._sock.close()


def listen(host: str = "127.0.0.1", port: int = 0) -> Listener:
    return Listener(host, port)


def connect(host: str, port: int, timeout: float = 10.0) -> SocketEndpoint:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return SocketEndpoint(sock)


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) < 65536:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)
