"""Two-server service: framing over TCP, an in-process loopback network
for tests, persistence of keys and encrypted models, and the per-link
ledger that substantiates the zero server-to-server-traffic property.

A server's configuration has no peer endpoint at all, so no code path can
even address the other server; the ledger's server0-server1 row exists
only to be asserted zero.
"""

from __future__ import annotations

import hashlib
import secrets
import socket
import socketserver
import threading
import time
from pathlib import Path

from . import wire
from .errors import DecodeError, DomainError, HssTreeError, TransportError
from .hss import EvalKey, MetricsLedger, PaillierHss, PublicKey
from .protocol import ClientQuery, ServerResponse, server_evaluate

LINK_CLIENT_S0 = "client-server0"
LINK_CLIENT_S1 = "client-server1"
LINK_PROVIDER = "provider-servers"
LINK_S2S = "server0-server1"
LINKS = (LINK_CLIENT_S0, LINK_CLIENT_S1, LINK_PROVIDER, LINK_S2S)

CLIENT_LINKS = (LINK_CLIENT_S0, LINK_CLIENT_S1)


class ServerErrorReply(HssTreeError):
    """A server answered with an Error frame."""

    def __init__(self, code: int, detail: str):
        super().__init__(f"server error {code}: {detail}")
        self.code = code
        self.detail = detail


class LinkLedger:
    """Message and byte counters per link, with injected-RTT bookkeeping."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counters = {link: {"messages": 0, "bytes": 0} for link in LINKS}
        self._rtt_ms = {link: 0.0 for link in LINKS}

    def record(self, link: str, nbytes: int) -> None:
        with self._lock:
            entry = self._counters[link]
            entry["messages"] += 1
            entry["bytes"] += nbytes

    def set_rtt(self, link: str, ms: float) -> None:
        with self._lock:
            self._rtt_ms[link] = ms

    def rtt(self, link: str) -> float:
        with self._lock:
            return self._rtt_ms[link]

    def snapshot(self) -> dict:
        with self._lock:
            return {
                link: dict(entry, simulated_rtt_ms=self._rtt_ms[link])
                for link, entry in self._counters.items()
            }

    @property
    def s2s_messages(self) -> int:
        with self._lock:
            return self._counters[LINK_S2S]["messages"]

    @property
    def s2s_bytes(self) -> int:
        with self._lock:
            return self._counters[LINK_S2S]["bytes"]


class ModelStore:
    """Content-addressed blob store: id = sha256 of the payload."""

    CATEGORIES = ("models", "maps", "keys")

    def __init__(self, base: str | Path):
        self.base = Path(base)
        for category in self.CATEGORIES:
            (self.base / category).mkdir(parents=True, exist_ok=True)

    def put(self, category: str, blob: bytes) -> str:
        if category not in self.CATEGORIES:
            raise DomainError(f"unknown store category {category!r}")
        blob_id = hashlib.sha256(blob).hexdigest()
        path = self.base / category / blob_id
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(blob)
            tmp.replace(path)
        return blob_id

    def get(self, category: str, blob_id: str) -> bytes:
        path = self.base / category / blob_id
        if not path.exists():
            raise KeyError(f"{category}/{blob_id} not in store")
        return path.read_bytes()

    def has(self, category: str, blob_id: str) -> bool:
        return (self.base / category / blob_id).exists()

    def list(self, category: str) -> list[str]:
        return sorted(p.name for p in (self.base / category).iterdir())


class ServerNode:
    """One server's request handler, independent of the transport used."""

    def __init__(
        self,
        role: int,
        pk: PublicKey,
        ek: EvalKey,
        store: ModelStore | None = None,
    ):
        if role not in (0, 1):
            raise DomainError("role must be 0 or 1")
        if ek.sigma != role:
            raise DomainError("evaluation key does not match the role")
        self.role = role
        self.hss = PaillierHss(pk, ledger=MetricsLedger())
        self.ek = ek
        self.store = store
        self._models: dict[bytes, object] = {}
        self._lock = threading.Lock()
        self.query_log: list[dict] = []

    # -- model management ----------------------------------------------------

    def load_model(self, model_id: bytes):
        with self._lock:
            if model_id in self._models:
                return self._models[model_id]
        if self.store is None or not self.store.has("models", model_id.hex()):
            raise KeyError(model_id.hex())
        blob = self.store.get("models", model_id.hex())
        model, _bits = wire.decode_encrypted_model(blob)
        with self._lock:
            self._models[model_id] = model
        return model

    def install_model(self, model_id: bytes, blob: bytes) -> None:
        model, bits = wire.decode_encrypted_model(blob)
        if bits != self.hss.pk.modulus_bits:
            raise DomainError("model was encrypted under a different profile")
        if self.store is not None:
            stored_id = self.store.put("models", blob)
            assert stored_id == model_id.hex()
        with self._lock:
            self._models[model_id] = model

    # -- request handling ------------------------------------------------------

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            msg_type, payload = wire.decode_frame(frame)
        except DecodeError as exc:
            return _error_frame(b"\x00" * wire.QUERY_ID_BYTES, wire.ERR_MALFORMED, exc)
        try:
            if msg_type == wire.MSG_PING:
                return wire.encode_frame(wire.MSG_PING, b"")
            if msg_type == wire.MSG_MODEL_UPLOAD:
                model_id, blob = wire.decode_model_upload(payload)
                self.install_model(model_id, blob)
                return wire.encode_frame(wire.MSG_PING, model_id)
            if msg_type == wire.MSG_QUERY:
                return self._handle_query(payload)
            return _error_frame(
                b"\x00" * wire.QUERY_ID_BYTES,
                wire.ERR_MALFORMED,
                f"unexpected message type {msg_type:#x}",
            )
        except DecodeError as exc:
            return _error_frame(b"\x00" * wire.QUERY_ID_BYTES, wire.ERR_MALFORMED, exc)

    def _handle_query(self, payload: bytes) -> bytes:
        model_id, query_id, mode, query = wire.decode_query_message(payload)
        try:
            model = self.load_model(model_id)
        except KeyError:
            return _error_frame(
                query_id, wire.ERR_UNKNOWN_MODEL, f"unknown model {model_id.hex()}"
            )
        gates_before = self.hss.ledger.muls
        started = time.perf_counter()
        try:
            response = server_evaluate(self.hss, self.ek, model, query, mode)
        except DomainError as exc:
            return _error_frame(query_id, wire.ERR_PROTOCOL, exc)
        elapsed = time.perf_counter() - started
        self.query_log.append(
            {
                "query_id": query_id.hex(),
                "mode": mode,
                "mul_gates": self.hss.ledger.muls - gates_before,
                "compute_s": elapsed,
            }
        )
        encoded = wire.encode_response_message(
            query_id, response, self.hss.pk.modulus_bits
        )
        return wire.encode_frame(wire.MSG_RESPONSE, encoded)


def _error_frame(query_id: bytes, code: int, detail) -> bytes:
    return wire.encode_frame(
        wire.MSG_ERROR, wire.encode_error(query_id, code, str(detail))
    )


# -- in-process loopback network --------------------------------------------------


class LoopbackNet:
    """Function-call transport with per-link latency injection and accounting.

    Δt of rtt/2 is slept on each direction of a request, mirroring a
    symmetric link; counters see exactly the frames a TCP deployment
    would carry.
    """

    def __init__(self, ledger: LinkLedger | None = None):
        self.ledger = ledger or LinkLedger()
        self._nodes: dict[int, ServerNode] = {}

    def attach(self, node: ServerNode) -> None:
        self._nodes[node.role] = node

    def node(self, role: int) -> ServerNode:
        return self._nodes[role]

    def set_rtt(self, link: str, ms: float) -> None:
        self.ledger.set_rtt(link, ms)

    def request(self, link: str, role: int, frame: bytes) -> bytes:
        if role not in self._nodes:
            raise TransportError(link, f"server{role} is not attached")
        one_way = self.ledger.rtt(link) / 2000.0
        if one_way:
            time.sleep(one_way)
        self.ledger.record(link, len(frame))
        reply = self._nodes[role].handle_frame(frame)
        if one_way:
            time.sleep(one_way)
        self.ledger.record(link, len(reply))
        return reply


def _unwrap_response(frame: bytes, expect_query_id: bytes) -> ServerResponse:
    msg_type, payload = wire.decode_frame(frame)
    if msg_type == wire.MSG_ERROR:
        _, code, detail = wire.decode_error(payload)
        raise ServerErrorReply(code, detail)
    if msg_type != wire.MSG_RESPONSE:
        raise DecodeError(f"unexpected reply type {msg_type:#x}")
    query_id, response = wire.decode_response_message(payload)
    if query_id != expect_query_id:
        raise DecodeError("reply query id does not match the request")
    return response


def loopback_upload(net: LoopbackNet, model_blob: bytes) -> bytes:
    """Provider phase: push one encrypted model to both servers."""
    payload = wire.encode_model_upload(model_blob)
    frame = wire.encode_frame(wire.MSG_MODEL_UPLOAD, payload)
    for role in (0, 1):
        reply = net.request(LINK_PROVIDER, role, frame)
        msg_type, body = wire.decode_frame(reply)
        if msg_type == wire.MSG_ERROR:
            _, code, detail = wire.decode_error(body)
            raise ServerErrorReply(code, detail)
    return wire.model_id_of(model_blob)


def loopback_query(
    net: LoopbackNet,
    model_id: bytes,
    query: ClientQuery,
    mode: str,
    modulus_bits: int,
    query_id: bytes | None = None,
) -> tuple[ServerResponse, ServerResponse]:
    """Online phase: one message to each server, both sent in parallel."""
    query_id = query_id or secrets.token_bytes(wire.QUERY_ID_BYTES)
    payload = wire.encode_query_message(model_id, query_id, mode, query, modulus_bits)
    frame = wire.encode_frame(wire.MSG_QUERY, payload)
    results: list = [None, None]
    errors: list = [None, None]

    def worker(role: int, link: str):
        try:
            results[role] = _unwrap_response(
                net.request(link, role, frame), query_id
            )
        except Exception as exc:  # propagated to the caller below
            errors[role] = exc

    threads = [
        threading.Thread(target=worker, args=(0, LINK_CLIENT_S0)),
        threading.Thread(target=worker, args=(1, LINK_CLIENT_S1)),
    ]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for role, exc in enumerate(errors):
        if exc is not None:
            raise exc
    return results[0], results[1]


# -- TCP mode ------------------------------------------------------------------------


def read_frame(reader) -> bytes | None:
    """Read one frame from a binary stream; None on clean EOF."""
    header = _read_exact(reader, wire.FRAME_HEADER_LEN)
    if header is None:
        return None
    _, length = wire.decode_frame_header(header)
    payload = _read_exact(reader, length)
    if payload is None and length > 0:
        raise DecodeError("connection closed mid-frame")
    return header + (payload or b"")


def _read_exact(reader, n: int) -> bytes | None:
    chunks = []
    got = 0
    while got < n:
        chunk = reader.read(n - got)
        if not chunk:
            if got == 0:
                return None
            raise DecodeError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class _FrameHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                frame = read_frame(self.rfile)
            except DecodeError:
                break
            if frame is None:
                break
            reply = self.server.node.handle_frame(frame)
            try:
                self.wfile.write(reply)
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                break


class TreeServer(socketserver.ThreadingTCPServer):
    """TCP front end for one ServerNode. There is no peer address anywhere."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, node: ServerNode, host: str, port: int):
        super().__init__((host, port), _FrameHandler)
        self.node = node

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def tcp_request(
    address: tuple[str, int], frame: bytes, link: str, timeout: float = 10.0
) -> bytes:
    try:
        with socket.create_connection(address, timeout=timeout) as sock:
            sock.sendall(frame)
            reader = sock.makefile("rb")
            reply = read_frame(reader)
    except (ConnectionError, socket.timeout, TimeoutError, OSError) as exc:
        raise TransportError(link, f"request failed: {exc}") from None
    if reply is None:
        raise TransportError(link, "connection closed without a reply")
    return reply


def tcp_upload(addresses, model_blob: bytes, timeout: float = 30.0) -> bytes:
    payload = wire.encode_model_upload(model_blob)
    frame = wire.encode_frame(wire.MSG_MODEL_UPLOAD, payload)
    for address in addresses:
        reply = tcp_request(address, frame, LINK_PROVIDER, timeout)
        msg_type, body = wire.decode_frame(reply)
        if msg_type == wire.MSG_ERROR:
            _, code, detail = wire.decode_error(body)
            raise ServerErrorReply(code, detail)
    return wire.model_id_of(model_blob)


def tcp_submit_query(
    addresses,
    model_id: bytes,
    query: ClientQuery,
    mode: str,
    modulus_bits: int,
    timeout: float = 60.0,
) -> tuple[ServerResponse, ServerResponse]:
    """Send the query to both servers in parallel and collect both replies.

    A dead or unreachable server surfaces as a TransportError naming the
    failing client link.
    """
    query_id = secrets.token_bytes(wire.QUERY_ID_BYTES)
    payload = wire.encode_query_message(model_id, query_id, mode, query, modulus_bits)
    frame = wire.encode_frame(wire.MSG_QUERY, payload)
    results: list = [None, None]
    errors: list = [None, None]

    def worker(role: int, link: str):
        try:
            reply = tcp_request(addresses[role], frame, link, timeout)
            results[role] = _unwrap_response(reply, query_id)
        except Exception as exc:
            errors[role] = exc

    threads = [
        threading.Thread(target=worker, args=(0, LINK_CLIENT_S0)),
        threading.Thread(target=worker, args=(1, LINK_CLIENT_S1)),
    ]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for exc in errors:
        if exc is not None:
            raise exc
    return results[0], results[1]
