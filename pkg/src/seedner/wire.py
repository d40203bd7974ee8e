"""Line-delimited JSON transport shared by the MLM backend and tagger
plugin protocols.

One record per line, UTF-8, LF-terminated. Requests carry ``op`` and a
client-chosen ``id``; responses echo the ``id`` and set ``ok``. Streamed
payloads (training segments, sentences to predict) follow their header
record as bare JSON lines, ``count`` of them. docs/protocol.md freezes the
schema; this module only moves records around.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from typing import Callable, Protocol

PROTOCOL_VERSION = 1


class TransportError(ConnectionError):
    """Endpoint unreachable, connection dropped, or stream cut short."""


class ProtocolError(RuntimeError):
    """Well-formed transport, bad content: schema, id mismatch, ok=false."""


def parse_endpoint(endpoint: str) -> tuple[str, ...]:
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


def encode_record(obj: dict) -> bytes:
    line = json.dumps(obj, ensure_ascii=False, separators=(",", ":"))
    if "\n" in line:  # cannot happen with json.dumps, kept as a guard
        raise ProtocolError("record would contain a newline")
    return line.encode("utf-8") + b"\n"


class Session:
    """One duplex connection, record-at-a-time."""

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

    def write_record(self, obj: dict) -> None:
        try:
            self._sock.sendall(encode_record(obj))
        except OSError as exc:
            raise TransportError(f"write failed: {exc}") from exc

    def close(self) -> None:
        try:
            self._rfile.close()
        finally:
            self._sock.close()


class WireClient:
    """Sequential request/response client. Not thread-safe; one in-flight
    request per connection, per the protocol."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.endpoint = endpoint
        self._session = Session(_connect(endpoint, timeout))
        self._next_id = 0

    def rpc(self, op: str, payload: dict | None = None, stream: list[dict] | None = None) -> dict:
        request_id = self._next_id
        self._next_id += 1
        record = {"op": op, "id": request_id}
        if payload:
            record.update(payload)
        if stream is not None:
            record["count"] = len(stream)
        self._session.write_record(record)
        for item in stream or ():
            self._session.write_record(item)
        response = self._session.read_record()
        if response is None:
            raise TransportError(f"{self.endpoint} closed the connection mid-request")
        if response.get("id") != request_id:
            raise ProtocolError(f"response id {response.get('id')} != request id {request_id}")
        if not response.get("ok"):
            raise ProtocolError(str(response.get("error", "unspecified backend error")))
        return response

    def read_stream(self, count: int) -> list[dict]:
        out = []
        for _ in range(count):
            record = self._session.read_record()
            if record is None:
                raise TransportError("stream cut short")
            out.append(record)
        return out

    def hello(self) -> dict:
        response = self.rpc("hello", {"version": PROTOCOL_VERSION})
        if response.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: server {response.get('version')}, "
                f"client {PROTOCOL_VERSION}"
            )
        return response

    def close(self) -> None:
        self._session.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Service(Protocol):
    """What a server exposes: handle one request (already parsed), using
    the session for any streamed lines, and return the response record
    (without id; the server fills it in). Raise to signal an error."""

    def handle(self, record: dict, session: Session) -> dict: ...


class WireServer:
    """Threaded JSONL server for tests and in-host serving."""

    def __init__(self, service: Service, endpoint: str = "tcp:127.0.0.1:0"):
        self.service = service
        parsed = parse_endpoint(endpoint)
        handler = self._make_handler()
        if parsed[0] == "tcp":
            self._server = socketserver.ThreadingTCPServer(
                (parsed[1], parsed[2]), handler, bind_and_activate=True
            )
            host, port = self._server.server_address[:2]
            self.endpoint = f"tcp:{host}:{port}"
        else:
            self._server = socketserver.ThreadingUnixStreamServer(
                parsed[1], handler, bind_and_activate=True
            )
            self.endpoint = f"unix:{parsed[1]}"
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    def _make_handler(self):
        service = self.service

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                session = Session(self.request)
                while True:
                    try:
                        record = session.read_record()
                    except (TransportError, ProtocolError):
                        break
                    if record is None:
                        break
                    request_id = record.get("id")
                    try:
                        response = service.handle(record, session)
                        response.setdefault("ok", True)
                    except Exception as exc:  # noqa: BLE001 - reported over the wire
                        response = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
                    response["id"] = request_id
                    try:
                        session.write_record(response)
                    except TransportError:
                        break

        return Handler

    def start(self) -> "WireServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)


def hello_payload(role: str, **extra) -> dict:
    return {"version": PROTOCOL_VERSION, "role": role, **extra}
