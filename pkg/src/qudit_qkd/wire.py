"""Basis reconciliation between separate Alice and Bob processes.

Frames are a 4-byte big-endian length followed by a UTF-8 JSON body.
Exchange, Bob initiating::

    bob   -> HELLO          {version, dim, duration_cycles, resume_from}
    alice -> HELLO          {version, dim, duration_cycles, resume_from}
    per batch of clocks [start, end):
      bob   -> CLOCK_BATCH  {start, end, flags}        click flags, "0"/"1"
      alice -> BASIS_REVEAL {start, end, bases}        alice's bases, clicked clocks only
      bob   -> BASIS_REVEAL {start, end, bases}        bob's bases, clicked clocks only
      alice -> SIFT_ACK     {start, end, clocks}       clicked clocks with equal bases
    bob   -> SUMMARY        {raw, sifted, symbols}     bob's k for sifted clocks
    alice -> SUMMARY        {raw, sifted, n_correct, n_incorrect, qber, symbols}

State indices only travel in the final SUMMARY messages and only for
sifted (hence clicked) clocks; they are the disclosed symbols used to
estimate the QBER, since no post-processing follows.
"""

from __future__ import annotations

import io
import json
import logging
import socket
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .hilbert import BASIS_LABELS
from .protocol import SessionLog, SiftResult, sift_result_from_symbols

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024
MESSAGE_TYPES = ("HELLO", "CLOCK_BATCH", "BASIS_REVEAL", "SIFT_ACK", "SUMMARY")
DEFAULT_BATCH = 4096


class ProtocolError(RuntimeError):
    pass


class ConnectionLost(ConnectionError):
    pass


@dataclass
class WireMessage:
    type: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise ProtocolError(f"unknown message type {self.type!r}")

    def encode(self) -> bytes:
        body = json.dumps({"type": self.type, **self.payload}, sort_keys=True, separators=(",", ":"))
        data = body.encode("utf-8")
        return HEADER.pack(len(data)) + data

    @classmethod
    def decode_body(cls, body: bytes) -> "WireMessage":
        try:
            obj = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed message body: {exc}") from None
        if not isinstance(obj, dict) or "type" not in obj:
            raise ProtocolError("message body lacks a type")
        kind = obj.pop("type")
        return cls(kind, obj)


def read_frame(stream) -> bytes:
    """Read one length-prefixed body from a binary file-like object."""
    header = _read_exact(stream, HEADER.size)
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit {MAX_FRAME}")
    return _read_exact(stream, length)


def _read_exact(stream, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise ConnectionLost("stream closed mid-frame" if buf else "stream closed")
        buf += chunk
    return bytes(buf)


def iter_messages(data: bytes):
    stream = io.BytesIO(data)
    while stream.tell() < len(data):
        yield WireMessage.decode_body(read_frame(stream))


class Channel:
    """Framed message channel over a pair of binary streams.

    Every byte received (and sent) is appended to ``incoming`` /
    ``outgoing`` so a session can be replayed later.
    """

    def __init__(self, rfile, wfile, sock: socket.socket | None = None):
        self.rfile = rfile
        self.wfile = wfile
        self.sock = sock
        self.incoming = bytearray()
        self.outgoing = bytearray()

    @classmethod
    def from_socket(cls, sock: socket.socket) -> "Channel":
        return cls(sock.makefile("rb"), sock.makefile("wb"), sock)

    def close(self) -> None:
        # makefile() objects keep the descriptor alive; shut down so the peer sees EOF
        if self.sock is not None:
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        for f in (self.rfile, self.wfile):
            try:
                f.close()
            except OSError:
                pass
        if self.sock is not None:
            self.sock.close()

    def send(self, msg: WireMessage) -> None:
        data = msg.encode()
        try:
            self.wfile.write(data)
            self.wfile.flush()
        except (OSError, ValueError) as exc:
            raise ConnectionLost(str(exc)) from exc
        self.outgoing += data

    def recv(self) -> WireMessage:
        try:
            body = read_frame(self.rfile)
        except OSError as exc:
            if isinstance(exc, ConnectionLost):
                raise
            raise ConnectionLost(str(exc)) from exc
        self.incoming += HEADER.pack(len(body)) + body
        return WireMessage.decode_body(body)

    def expect(self, kind: str) -> dict:
        msg = self.recv()
        if msg.type != kind:
            raise ProtocolError(f"expected {kind}, got {msg.type}")
        return msg.payload


class ReplayChannel(Channel):
    """Feeds recorded peer bytes back in; outgoing messages are discarded."""

    def __init__(self, recorded: bytes):
        super().__init__(io.BytesIO(recorded), io.BytesIO())


# -- party views --------------------------------------------------------


@dataclass
class PartyView:
    """What one party knows locally: its own choices, plus clicks for Bob."""

    role: str
    dim: int
    basis: np.ndarray
    k: np.ndarray
    clicks: np.ndarray | None = None

    @property
    def duration_cycles(self) -> int:
        return len(self.basis)

    @classmethod
    def from_log(cls, role: str, session: SessionLog) -> "PartyView":
        if role == "alice":
            return cls(role, session.dim, session.alice_basis, session.alice_k)
        if role == "bob":
            return cls(role, session.dim, session.bob_basis, session.bob_k, session.clicks)
        raise ValueError(f"role must be 'alice' or 'bob', got {role!r}")


def _hello(view: PartyView, resume_from: int) -> WireMessage:
    return WireMessage(
        "HELLO",
        {
            "version": PROTOCOL_VERSION,
            "dim": view.dim,
            "duration_cycles": view.duration_cycles,
            "resume_from": resume_from,
        },
    )


def _check_hello(view: PartyView, peer: dict) -> None:
    if peer.get("version") != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version mismatch: ours {PROTOCOL_VERSION}, peer {peer.get('version')}")
    if peer.get("dim") != view.dim:
        raise ProtocolError(f"dimension mismatch: ours {view.dim}, peer {peer.get('dim')}")
    if peer.get("duration_cycles") != view.duration_cycles:
        raise ProtocolError(
            f"duration mismatch: ours {view.duration_cycles}, peer {peer.get('duration_cycles')}"
        )


def _check_range(view: PartyView, start, end) -> None:
    if not (isinstance(start, int) and isinstance(end, int)) or not 0 <= start < end <= view.duration_cycles:
        raise ProtocolError(f"clock range [{start}, {end}) outside session of {view.duration_cycles} cycles")


def _bases_for(view: PartyView, clocks) -> list:
    return [[int(c), BASIS_LABELS[view.basis[c]]] for c in clocks]


def _parse_bases(payload: dict, clocks: list[int]) -> list[int]:
    pairs = payload.get("bases", [])
    if [p[0] for p in pairs] != clocks:
        raise ProtocolError("basis reveal does not cover exactly the clicked clocks")
    try:
        return [BASIS_LABELS.index(p[1]) for p in pairs]
    except ValueError:
        raise ProtocolError("unknown basis label in reveal") from None


class _Party:
    """Per-role reconciliation state, kept across reconnections."""

    def __init__(self, view: PartyView, batch_size: int = DEFAULT_BATCH):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.view = view
        self.batch_size = batch_size
        self.acked = 0  # clocks below this are reconciled
        self.raw = 0
        self.batches: dict[int, tuple[int, list[int]]] = {}  # start -> (clicks, agreed clocks)
        self.result: SiftResult | None = None

    def _rollback(self, resume_from: int) -> None:
        for start in [s for s in self.batches if s >= resume_from]:
            del self.batches[start]
        self.acked = resume_from

    def agreed(self) -> list[int]:
        return [c for s in sorted(self.batches) for c in self.batches[s][1]]

    def raw_detections(self) -> int:
        return sum(n for n, _ in self.batches.values())


class AliceParty(_Party):
    def run(self, ch: Channel) -> SiftResult:
        view = self.view
        peer = ch.expect("HELLO")
        ch.send(_hello(view, self.acked))
        _check_hello(view, peer)
        resume = peer.get("resume_from", 0)
        if resume not in self.batches and resume != self.acked:
            raise ProtocolError(f"cannot resume from clock {resume}")
        self._rollback(resume)
        while True:
            msg = ch.recv()
            if msg.type == "SUMMARY":
                return self._finish(ch, msg.payload)
            if msg.type != "CLOCK_BATCH":
                raise ProtocolError(f"expected CLOCK_BATCH or SUMMARY, got {msg.type}")
            start, end, flags = (msg.payload.get(k) for k in ("start", "end", "flags"))
            _check_range(view, start, end)
            if start != self.acked:
                raise ProtocolError(f"batch starts at {start}, expected {self.acked}")
            if not isinstance(flags, str) or len(flags) != end - start or set(flags) - {"0", "1"}:
                raise ProtocolError("click flags malformed")
            clicked = [start + i for i, f in enumerate(flags) if f == "1"]
            ch.send(WireMessage("BASIS_REVEAL", {"start": start, "end": end, "bases": _bases_for(view, clicked)}))
            bob_bases = _parse_bases(ch.expect("BASIS_REVEAL"), clicked)
            agreed = [c for c, b in zip(clicked, bob_bases) if view.basis[c] == b]
            ch.send(WireMessage("SIFT_ACK", {"start": start, "end": end, "clocks": agreed}))
            self.batches[start] = (len(clicked), agreed)
            self.acked = end

    def _finish(self, ch: Channel, payload: dict) -> SiftResult:
        view = self.view
        if self.acked != view.duration_cycles:
            raise ProtocolError(f"summary before all clocks reconciled ({self.acked}/{view.duration_cycles})")
        agreed = self.agreed()
        raw = self.raw_detections()
        if payload.get("raw") != raw or payload.get("sifted") != len(agreed):
            raise ProtocolError("peer summary counts disagree with reconciled batches")
        bob_symbols = payload.get("symbols", [])
        if [s[0] for s in bob_symbols] != agreed:
            raise ProtocolError("peer symbols do not match the sifted clocks")
        symbols = [(c, int(view.k[c]), int(kb)) for c, (_, kb) in zip(agreed, bob_symbols)]
        if any(not 0 <= s[2] < view.dim for s in symbols):
            raise ProtocolError("peer symbol out of range")
        result = sift_result_from_symbols(view.dim, raw, symbols)
        ch.send(
            WireMessage(
                "SUMMARY",
                {
                    "raw": raw,
                    "sifted": result.sifted_detections,
                    "n_correct": result.n_correct,
                    "n_incorrect": result.n_incorrect,
                    "qber": result.qber,
                    "symbols": [[c, ka] for c, ka, _ in symbols],
                },
            )
        )
        self.result = result
        return result


class BobParty(_Party):
    def run(self, ch: Channel, realtime: bool = False, rep_rate: float = 30.0) -> SiftResult:
        view = self.view
        ch.send(_hello(view, self.acked))
        peer = ch.expect("HELLO")
        _check_hello(view, peer)
        self._rollback(self.acked)
        while self.acked < view.duration_cycles:
            start = self.acked
            end = min(start + self.batch_size, view.duration_cycles)
            flags = view.clicks[start:end]
            if realtime:
                time.sleep((end - start) / rep_rate)
            ch.send(WireMessage("CLOCK_BATCH", {"start": start, "end": end, "flags": "".join("1" if f else "0" for f in flags)}))
            clicked = (start + np.flatnonzero(flags)).tolist()
            alice_bases = _parse_bases(ch.expect("BASIS_REVEAL"), clicked)
            ch.send(WireMessage("BASIS_REVEAL", {"start": start, "end": end, "bases": _bases_for(view, clicked)}))
            agreed = [c for c, b in zip(clicked, alice_bases) if view.basis[c] == b]
            ack = ch.expect("SIFT_ACK")
            if ack.get("start") != start or ack.get("end") != end or ack.get("clocks") != agreed:
                raise ProtocolError(f"SIFT_ACK for [{start}, {end}) disagrees with local sift")
            self.batches[start] = (len(clicked), agreed)
            self.acked = end
        agreed = self.agreed()
        raw = self.raw_detections()
        ch.send(
            WireMessage(
                "SUMMARY",
                {"raw": raw, "sifted": len(agreed), "symbols": [[c, int(view.k[c])] for c in agreed]},
            )
        )
        summary = ch.expect("SUMMARY")
        alice_symbols = summary.get("symbols", [])
        if [s[0] for s in alice_symbols] != agreed:
            raise ProtocolError("peer symbols do not match the sifted clocks")
        symbols = [(c, int(ka), int(view.k[c])) for c, (_, ka) in zip(agreed, alice_symbols)]
        result = sift_result_from_symbols(view.dim, raw, symbols)
        theirs = (summary.get("raw"), summary.get("sifted"), summary.get("n_correct"), summary.get("n_incorrect"))
        if theirs != result.counts()[:4]:
            raise ProtocolError("peer summary counts disagree with local result")
        self.result = result
        return result


def make_party(role: str, session: SessionLog, batch_size: int = DEFAULT_BATCH) -> _Party:
    view = PartyView.from_log(role, session)
    return AliceParty(view, batch_size) if role == "alice" else BobParty(view, batch_size)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def reconcile_over_wire(
    role: str,
    endpoint,
    session: SessionLog,
    batch_size: int = DEFAULT_BATCH,
    retries: int = 3,
    timeout: float = 30.0,
    realtime: bool = False,
    rep_rate: float = 30.0,
    transcript: list | None = None,
) -> SiftResult:
    """Run one side of the reconciliation over TCP and return its sift result.

    Alice listens on ``endpoint`` (a ``host:port`` string or an already
    bound, listening socket); Bob connects to it. On connection loss Bob
    reconnects up to ``retries`` times and resumes from the last batch he
    saw acknowledged. Each connection's :class:`Channel` is appended to
    ``transcript`` when given, for replay.
    """
    party = make_party(role, session, batch_size)
    attempts = 0
    if role == "alice":
        server = endpoint
        if isinstance(endpoint, str):
            server = socket.create_server(parse_endpoint(endpoint))
        server.settimeout(timeout)
        try:
            while True:
                conn, _ = server.accept()
                conn.settimeout(timeout)
                ch = Channel.from_socket(conn)
                if transcript is not None:
                    transcript.append(ch)
                try:
                    return party.run(ch)
                except ConnectionLost as exc:
                    attempts += 1
                    log.warning("alice: connection lost (%s), waiting for bob to resume", exc)
                    if attempts > retries:
                        raise
                finally:
                    ch.close()
        finally:
            if server is not endpoint:
                server.close()
    addr = parse_endpoint(endpoint) if isinstance(endpoint, str) else endpoint
    while True:
        try:
            sock = socket.create_connection(addr, timeout=timeout)
        except OSError as exc:
            attempts += 1
            if attempts > retries:
                raise ConnectionLost(f"cannot reach alice at {addr}: {exc}") from exc
            time.sleep(min(0.25 * attempts, 2.0))
            continue
        ch = Channel.from_socket(sock)
        if transcript is not None:
            transcript.append(ch)
        try:
            return party.run(ch, realtime=realtime, rep_rate=rep_rate)
        except ConnectionLost as exc:
            attempts += 1
            log.warning("bob: connection lost (%s), resuming from clock %d", exc, party.acked)
            if attempts > retries:
                raise
        finally:
            ch.close()


def replay(role: str, session: SessionLog, recorded_incoming: bytes, batch_size: int = DEFAULT_BATCH) -> SiftResult:
    """Re-run one party against the bytes its peer sent in a recorded session."""
    party = make_party(role, session, batch_size)
    return party.run(ReplayChannel(recorded_incoming))
