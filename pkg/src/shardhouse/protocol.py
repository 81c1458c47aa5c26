"""Wire protocol and transports.

Frames are a 4-byte big-endian length prefix followed by a UTF-8 JSON
object.  Requests carry ``{"seq", "op", "table", "payload"}``; responses
echo the sequence number with ``{"seq", "status", ...}``.  Share integers
travel as decimal strings, so frames never lose precision.

Two transports implement the same request/response contract: a TCP client
for real provider processes and an in-process transport that round-trips
every message through JSON before handing it to an embedded store.  The
in-process path exists so tests and benchmarks can capture exactly the
bytes a provider would see.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading
import time

from .errors import ProtocolError, StoreError, TransportError
from .store import CspStore

__all__ = [
    "encode_frame",
    "decode_frame",
    "read_frame",
    "Transport",
    "TcpTransport",
    "LocalTransport",
    "TcpStoreServer",
    "serve_store",
]

MAX_FRAME = 256 * 1024 * 1024

_HEADER = struct.Struct(">I")


def encode_frame(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds limit")
    return _HEADER.pack(len(body)) + body


def decode_frame(body: bytes) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}")
    if not isinstance(obj, dict):
        raise ProtocolError("frame payload must be a JSON object")
    return obj


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return buf


def read_frame(sock: socket.socket) -> dict:
    header = _read_exact(sock, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME:
        raise ProtocolError(f"incoming frame of {length} bytes exceeds limit")
    return decode_frame(_read_exact(sock, length))


class Transport:
    """Base request/response channel to one provider."""

    csp_id = None

    def __init__(self):
        self._seq = 0
        self._lock = threading.Lock()

    def _next_seq(self) -> int:
        with self._lock:
            self._seq += 1
            return self._seq

    def request(self, op: str, table: str = None, payload: dict = None) -> dict:
        req = {"seq": self._next_seq(), "op": op, "table": table, "payload": payload or {}}
        resp = self._roundtrip(req)
        if resp.get("seq") != req["seq"]:
            raise ProtocolError(
                f"sequence mismatch: sent {req['seq']}, got {resp.get('seq')}"
            )
        status = resp.get("status")
        if status == "ok":
            return resp
        if status == "error":
            err = resp.get("error") or {}
            raise StoreError(err.get("message", "store error"))
        raise ProtocolError(f"unknown response status {status!r}")

    def _roundtrip(self, req: dict) -> dict:
        raise NotImplementedError

    def ping(self) -> float:
        """HEALTH round trip; returns elapsed seconds."""
        start = time.perf_counter()
        self.request("health")
        return time.perf_counter() - start

    def close(self):
        pass


class TcpTransport(Transport):
    def __init__(self, host: str, port: int, csp_id: int = None, timeout: float = 30.0):
        super().__init__()
        self.host = host
        self.port = port
        self.csp_id = csp_id
        self.timeout = timeout
        self._sock = None

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(
                    (self.host, self.port), timeout=self.timeout
                )
            except OSError as exc:
                raise TransportError(f"cannot reach {self.host}:{self.port}: {exc}")
        return self._sock

    def _roundtrip(self, req: dict) -> dict:
        with self._lock:
            try:
                sock = self._connect()
                sock.sendall(encode_frame(req))
                return read_frame(sock)
            except (OSError, ConnectionError) as exc:
                self.close()
                raise TransportError(f"{self.host}:{self.port}: {exc}")

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


class LocalTransport(Transport):
    """In-process transport around an embedded store.

    Every request and response is serialized to a frame and parsed back,
    so the store sees exactly the objects a remote one would, and an
    optional recorder observes the raw bytes for traffic audits.  ``kill``
    makes the transport behave like an unreachable host.
    """

    def __init__(self, store: CspStore, recorder=None):
        super().__init__()
        self.store = store
        self.csp_id = store.csp_id
        self.recorder = recorder
        self._dead = False

    def kill(self):
        self._dead = True

    def revive(self):
        self._dead = False

    def _roundtrip(self, req: dict) -> dict:
        if self._dead:
            raise TransportError(f"provider {self.csp_id} is unreachable")
        frame = encode_frame(req)
        if self.recorder is not None:
            self.recorder.record("request", self.csp_id, frame)
        resp = self.store.handle_request(decode_frame(frame[_HEADER.size:]))
        out = encode_frame(resp)
        if self.recorder is not None:
            self.recorder.record("response", self.csp_id, out)
        return decode_frame(out[_HEADER.size:])


class Recorder:
    """Collects raw frames exchanged with providers."""

    def __init__(self):
        self.frames = []
        self._lock = threading.Lock()

    def record(self, direction: str, csp_id: int, frame: bytes):
        with self._lock:
            self.frames.append((direction, csp_id, frame))

    def all_bytes(self) -> bytes:
        with self._lock:
            return b"".join(f for _, _, f in self.frames)


class _StoreHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        while True:
            try:
                req = read_frame(sock)
            except (ConnectionError, OSError):
                return
            except ProtocolError as exc:
                try:
                    sock.sendall(
                        encode_frame(
                            {
                                "seq": None,
                                "status": "error",
                                "error": {"type": "ProtocolError", "message": str(exc)},
                            }
                        )
                    )
                except OSError:
                    pass
                return
            resp = self.server.store.handle_request(req)
            try:
                sock.sendall(encode_frame(resp))
            except OSError:
                return


class TcpStoreServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, store: CspStore, host: str = "127.0.0.1", port: int = 0):
        self.store = store
        super().__init__((host, port), _StoreHandler)

    @property
    def address(self):
        return self.server_address[:2]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve_store(store: CspStore, host: str, port: int) -> TcpStoreServer:
    server = TcpStoreServer(store, host, port)
    server.serve_background()
    return server
