"""Line-delimited JSON wire transport.

Implements the protocol frozen in the host package's docs/protocol.md:
one UTF-8 JSON object per LF-terminated line; requests carry ``op`` and
a client-chosen ``id``, responses echo the ``id`` and set ``ok``; bulk
payloads follow their request header as ``count`` bare lines. This is an
independent implementation — the document, not the host's code, is the
contract.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from typing import Protocol

PROTOCOL_VERSION = 1


class TransportError(ConnectionError):
    """Endpoint unreachable, connection dropped, or stream cut short."""


class ProtocolError(RuntimeError):
    """Well-formed transport, bad content: schema, id mismatch, ok=false."""


def parse_endpoint(endpoint: str) -> tuple:
    """Accepts `tcp:host:port` and `unix:/path/to.sock`."""
    scheme, _, rest = endpoint.partition(":")
    if scheme == "tcp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp endpoint: {endpoint!r}")
        return ("tcp", host, int(port))
    if scheme == "unix":
        if not rest:
            raise ValueError(f"bad unix endpoint: {endpoint!r}")
        return ("unix", rest)
    raise ValueError(f"unknown endpoint scheme: {endpoint!r}")


def _encode(obj: dict) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8") + b"\n"


class Connection:
    """One duplex socket, record at a time."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def read_record(self) -> dict | None:
        try:
            line = self._rfile.readline()
        except OSError as exc:
            raise TransportError(f"read failed: {exc}") from exc
        if not line:
            return None
        try:
            record = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"bad record: {exc}") from exc
        if not isinstance(record, dict):
            raise ProtocolError(f"record must be an object, got {type(record).__name__}")
        return record

    def read_stream(self, count: int) -> list[dict]:
        out = []
        for _ in range(count):
            record = self.read_record()
            if record is None:
                raise TransportError("stream cut short")
            out.append(record)
        return out

    def write_record(self, obj: dict) -> None:
        try:
            self._sock.sendall(_encode(obj))
        except OSError as exc:
            raise TransportError(f"write failed: {exc}") from exc

    def close(self) -> None:
        try:
            self._rfile.close()
        finally:
            self._sock.close()


def _connect(endpoint: str, timeout: float) -> socket.socket:
    parsed = parse_endpoint(endpoint)
    try:
        if parsed[0] == "tcp":
            return socket.create_connection((parsed[1], parsed[2]), timeout=timeout)
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        sock.connect(parsed[1])
        return sock
    except OSError as exc:
        raise TransportError(f"cannot reach {endpoint}: {exc}") from exc


class Client:
    """Sequential request/response client; one request in flight."""

    def __init__(self, endpoint: str, timeout: float = 300.0):
        self.endpoint = endpoint
        self._conn = Connection(_connect(endpoint, timeout))
        self._next_id = 0

    def rpc(self, op: str, payload: dict | None = None,
            stream: list[dict] | None = None) -> dict:
        request_id = self._next_id
        self._next_id += 1
        record = {"op": op, "id": request_id}
        if payload:
            record.update(payload)
        if stream is not None:
            record["count"] = len(stream)
        self._conn.write_record(record)
        for item in stream or ():
            self._conn.write_record(item)
        response = self._conn.read_record()
        if response is None:
            raise TransportError(f"{self.endpoint} closed the connection mid-request")
        if response.get("id") != request_id:
            raise ProtocolError(
                f"response id {response.get('id')} != request id {request_id}")
        if not response.get("ok"):
            raise ProtocolError(str(response.get("error", "unspecified error")))
        return response

    def hello(self) -> dict:
        response = self.rpc("hello", {"version": PROTOCOL_VERSION})
        if response.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: server {response.get('version')}, "
                f"client {PROTOCOL_VERSION}")
        return response

    def close(self) -> None:
        self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Service(Protocol):
    """Handle one parsed request, using the connection for any streamed
    lines; return the response record (server fills id/ok). Raise to fail
    the request; the session survives."""

    def handle(self, record: dict, conn: Connection) -> dict: ...


class Server:
    """Threaded JSONL server: one thread per connection, requests within
    a connection served strictly in order."""

    def __init__(self, service: Service, endpoint: str = "tcp:127.0.0.1:0"):
        self.service = service
        parsed = parse_endpoint(endpoint)
        handler = self._make_handler()
        if parsed[0] == "tcp":
            self._server = socketserver.ThreadingTCPServer(
                (parsed[1], parsed[2]), handler, bind_and_activate=True)
            host, port = self._server.server_address[:2]
            self.endpoint = f"tcp:{host}:{port}"
        else:
            self._server = socketserver.ThreadingUnixStreamServer(
                parsed[1], handler, bind_and_activate=True)
            self.endpoint = f"unix:{parsed[1]}"
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    def _make_handler(self):
        service = self.service

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                conn = Connection(self.request)
                while True:
                    try:
                        record = conn.read_record()
                    except (TransportError, ProtocolError):
                        break
                    if record is None:
                        break
                    request_id = record.get("id")
                    try:
                        response = service.handle(record, conn)
                        response.setdefault("ok", True)
                    except Exception as exc:  # noqa: BLE001 - reported over the wire
                        response = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
                    response["id"] = request_id
                    try:
                        conn.write_record(response)
                    except TransportError:
                        break

        return Handler

    def start(self) -> "Server":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)
