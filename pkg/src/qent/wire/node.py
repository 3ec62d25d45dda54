"""A simulator node: owns registers and pair coordinators, talks to peers.

Every decoded request (HELLO, REGISTER_TRANSFER, MEASUREMENT_NOTICE) is
handled under one node-wide lock, so reconciliations on a node never
interleave.  Replies (ACK, ERROR) bypass the lock and wake whichever thread
is waiting for them; callers never hold the lock while they wait, which is
what keeps two nodes that measure simultaneously from deadlocking.

:meth:`Node.receive_frame` runs the whole request path on raw bytes and
returns the reply frames, which makes the protocol testable without threads.
"""

from __future__ import annotations

import logging
import queue
import threading
import uuid
from dataclasses import dataclass
from functools import partial
from typing import Callable

from ..entanglement import (
    EntangledRegister,
    EprMatrix,
    LocalRef,
    MeasurementNotice,
    PairState,
    RemoteStub,
    Side,
    create_entangled_pairs,
)
from ..errors import (
    DecodeError,
    FramingError,
    ProtocolViolationError,
    QubitLostError,
    RemoteError,
    StaleEntanglementError,
    TransferRejected,
    UnsupportedVersionError,
    ValidationError,
)
from ..register import QuantumRegister
from ..rng import RandomSource
from .codec import (
    ACK,
    ERROR,
    HELLO,
    MEASUREMENT_NOTICE,
    REGISTER_TRANSFER,
    Ack,
    Envelope,
    ErrorPayload,
    FrameReader,
    Hello,
    build_register,
    decode,
    encode,
    transfer_payload,
)

log = logging.getLogger(__name__)

NULL_SESSION = "0" * 32
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class TransferReceipt:
    register_id: str
    peer: str
    session_id: str
    pair_ids: tuple


class Session:
    """One HELLO-established conversation with a peer."""

    def __init__(self, session_id: str, conn: "Connection | None" = None, peer: str | None = None):
        self.id = session_id
        self.conn = conn
        self.peer = peer
        self.hello_done = threading.Event()
        self.inbox: list[Envelope] = []
        self._pending: dict[tuple, queue.SimpleQueue] = {}
        self._lock = threading.Lock()

    def __repr__(self):
        return f"Session({self.id[:8]}, peer={self.peer!r})"

    @property
    def live(self) -> bool:
        return self.conn is not None and not self.conn.closed

    def send(self, env: Envelope) -> None:
        if not self.live:
            raise ConnectionError(f"session {self.id} has no open connection")
        self.conn.send(encode(env))

    def request(self, kind: str, payload, ref: str, timeout: float = DEFAULT_TIMEOUT) -> Envelope:
        """Send a request and block until its ACK or ERROR arrives."""
        box: queue.SimpleQueue = queue.SimpleQueue()
        key = (kind, ref)
        with self._lock:
            if key in self._pending:
                raise ValidationError(f"a {kind} request for {ref} is already in flight")
            self._pending[key] = box
        try:
            self.send(Envelope(self.id, kind, payload))
            try:
                reply = box.get(timeout=timeout)
            except queue.Empty:
                raise TimeoutError(f"no reply to {kind} {ref} within {timeout} s") from None
        finally:
            with self._lock:
                self._pending.pop(key, None)
        if reply is None:
            raise ConnectionError(f"session {self.id} closed while waiting for {kind} {ref}")
        return reply

    def resolve(self, env: Envelope) -> None:
        key = (env.payload.kind, env.payload.ref)
        with self._lock:
            box = self._pending.pop(key, None)
        if box is None:
            self.inbox.append(env)
        else:
            box.put(env)

    def fail_pending(self) -> None:
        with self._lock:
            boxes = list(self._pending.values())
            self._pending.clear()
        for box in boxes:
            box.put(None)


class Connection:
    """A transport endpoint plus the thread that reads frames from it."""

    def __init__(self, node: "Node", endpoint):
        self.node = node
        self.endpoint = endpoint
        self.session: Session | None = None
        self.closed = False
        self._reader = FrameReader()
        self._send_lock = threading.Lock()
        self._thread = threading.Thread(target=self._run, name=f"qent-{node.name}-reader", daemon=True)

    def start(self) -> "Connection":
        self._thread.start()
        return self

    def send(self, frame: bytes) -> None:
        if self.closed:
            raise ConnectionError("connection is closed")
        with self._send_lock:
            self.endpoint.send_bytes(frame)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.endpoint.close()

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)

    def _run(self) -> None:
        try:
            while not self.closed:
                data = self.endpoint.recv_bytes()
                if not data:
                    break
                try:
                    frames = self._reader.feed(data)
                except FramingError as exc:
                    self._send_quiet(self.node._error_frame(self.session, "framing_error", str(exc)))
                    break
                for f in frames:
                    replies, close = self.node._handle(f, self)
                    for r in replies:
                        self._send_quiet(r)
                    if close:
                        return
        finally:
            self.close()
            self.node._connection_lost(self)

    def _send_quiet(self, frame: bytes) -> None:
        try:
            self.send(frame)
        except (ConnectionError, OSError):
            pass


class Node:
    """Owner of registers and coordinators for one simulator process or role.

    ``on_reconciled(register, slot, notice)`` runs under the node lock right
    after a remote notice has been applied and before the ACK goes out.
    """

    def __init__(self, name: str, *, method: str = "exact", timeout: float = DEFAULT_TIMEOUT):
        self.name = name
        self.method = method
        self.timeout = timeout
        self.registers: dict[str, QuantumRegister] = {}
        self.entanglements: dict = {}
        self.sessions: dict[str, Session] = {}
        self.peers: dict[str, str] = {}
        self.events: list[tuple] = []
        self.on_reconciled: Callable | None = None
        self._cond = threading.Condition(threading.RLock())
        self._connections: list[Connection] = []
        self._listeners: list = []

    def __repr__(self):
        return f"Node({self.name!r})"

    # -- local state --------------------------------------------------------

    def add_register(self, reg: QuantumRegister) -> QuantumRegister:
        with self._cond:
            if reg.register_id in self.registers:
                raise ValidationError(f"register {reg.register_id} is already held by node {self.name}")
            self.registers[reg.register_id] = reg
            if isinstance(reg, EntangledRegister):
                for pos in reg.active_slots():
                    ent = reg.entanglement(pos)
                    self.entanglements[ent.pair_id] = ent
        return reg

    def create_pairs(self, epr: EprMatrix, n: int = 1, *, prefix: str | None = None):
        """``n`` fresh pairs held locally as two registers (sides A and B)."""
        reg_a, reg_b, _ = create_entangled_pairs(epr, n, method=self.method, prefix=prefix)
        self.add_register(reg_a)
        self.add_register(reg_b)
        return reg_a, reg_b

    def register(self, register_id: str) -> QuantumRegister:
        try:
            return self.registers[register_id]
        except KeyError:
            raise ValidationError(f"node {self.name} holds no register {register_id}") from None

    def apply_gate(self, reg: QuantumRegister, g, pos: int) -> None:
        with self._cond:
            reg.apply_gate(g, pos)

    def measure(self, reg: QuantumRegister, pos: int, rng: RandomSource, *, theta: float = 0.0) -> int:
        """Measure a slot; for a pair half, notify the partner wherever it lives.

        Returns the final outcome, which differs from the first draw only if a
        simultaneous measurement of the partner took precedence.
        """
        with self._cond:
            b = reg.binding(pos) if isinstance(reg, EntangledRegister) else None
            if b is None or not b.active:
                return reg.measure_in_basis(pos, theta, rng)
            bit, notice = reg.measure_entangled(pos, rng, theta=theta, deliver=False)
            ent = b.entanglement
            partner = ent.sides.get(b.side.other)
            if not isinstance(partner, RemoteStub):
                ent.deliver(notice)
        if isinstance(partner, RemoteStub):
            ent.deliver(notice)
        revised = reg.revised_outcome(pos)
        return bit if revised is None else revised

    # -- sessions -----------------------------------------------------------

    def connect(self, endpoint, *, timeout: float | None = None) -> Session:
        """Open a session over ``endpoint`` and complete the HELLO exchange."""
        conn = Connection(self, endpoint)
        session = Session(uuid.uuid4().hex, conn)
        conn.session = session
        with self._cond:
            self.sessions[session.id] = session
            self._connections.append(conn)
        conn.start()
        conn.send(encode(Envelope(session.id, HELLO, Hello(self.name))))
        if not session.hello_done.wait(timeout or self.timeout):
            conn.close()
            raise TimeoutError(f"peer did not answer HELLO within {timeout or self.timeout} s")
        return session

    def accept(self, endpoint) -> Connection:
        """Serve an incoming connection; the peer is expected to send HELLO."""
        conn = Connection(self, endpoint)
        with self._cond:
            self._connections.append(conn)
        return conn.start()

    def serve(self, listener) -> threading.Thread:
        """Accept connections from ``listener`` on a background thread."""
        self._listeners.append(listener)

        def loop():
            while True:
                try:
                    ep = listener.accept()
                except OSError:
                    return
                self.accept(ep)

        t = threading.Thread(target=loop, name=f"qent-{self.name}-accept", daemon=True)
        t.start()
        return t

    def wait_for_peer(self, peer: str, timeout: float | None = None) -> Session:
        with self._cond:
            ok = self._cond.wait_for(lambda: self._live_session(peer) is not None, timeout or self.timeout)
            if not ok:
                raise TimeoutError(f"peer {peer!r} did not connect")
            return self._live_session(peer)

    def _live_session(self, peer: str) -> Session | None:
        s = self.sessions.get(self.peers.get(peer, ""))
        return s if s is not None and s.live else None

    def session_for(self, peer: str) -> Session:
        with self._cond:
            s = self._live_session(peer)
        if s is None:
            raise ConnectionError(f"node {self.name} has no live session with {peer!r}")
        return s

    def close(self) -> None:
        for lst in self._listeners:
            lst.close()
        for conn in list(self._connections):
            conn.close()
        for conn in list(self._connections):
            conn.join(5)

    def _connection_lost(self, conn: Connection) -> None:
        with self._cond:
            if conn in self._connections:
                self._connections.remove(conn)
            s = conn.session
            if s is not None and s.conn is conn:
                s.conn = None
            self._cond.notify_all()
        if s is not None:
            s.fail_pending()

    # -- outgoing requests -----------------------------------------------------

    def send_register(self, reg: QuantumRegister, peer: str) -> TransferReceipt:
        """Ship a register to ``peer``; pair halves left behind get remote stubs."""
        with self._cond:
            if self.registers.get(reg.register_id) is not reg:
                raise ValidationError(f"register {reg.register_id} is not held by node {self.name}")
            payload = transfer_payload(reg)
        session = self.session_for(peer)
        reply = session.request(REGISTER_TRANSFER, payload, payload.register_id, self.timeout)
        if reply.kind == ERROR:
            raise TransferRejected(reply.payload.code, reply.payload.message)
        pair_ids = []
        with self._cond:
            for rec in payload.entanglements:
                ent = self.entanglements[rec.pair_id]
                ent.attach(rec.side, RemoteStub(session.id, rec.pair_id, partial(self._forward_notice, peer)))
                if not any(isinstance(r, LocalRef) for r in ent.sides.values()):
                    del self.entanglements[rec.pair_id]
                pair_ids.append(rec.pair_id)
            del self.registers[reg.register_id]
            if isinstance(reg, EntangledRegister):
                reg._bindings.clear()
                reg._slot_of_pair.clear()
            self.events.append(("sent", reg.register_id, peer))
        return TransferReceipt(reg.register_id, peer, session.id, tuple(pair_ids))

    def _forward_notice(self, peer: str, notice: MeasurementNotice) -> None:
        reply = self.session_for(peer).request(MEASUREMENT_NOTICE, notice, notice.pair_id, self.timeout)
        if reply.kind == ACK:
            return
        code, message = reply.payload.code, reply.payload.message
        if code == "stale_entanglement":
            ent = self.entanglements.get(notice.pair_id)
            if ent is not None and notice.measured_side is Side.B:
                # side A measured too; its notice will roll this half back
                with self._cond:
                    self._cond.wait_for(lambda: ent.state is PairState.RECONCILED, self.timeout)
            raise StaleEntanglementError(message)
        raise RemoteError(code, message)

    # -- incoming frames ----------------------------------------------------------

    def receive_frame(self, frame: bytes) -> list[bytes]:
        """Process one frame without a transport and return the reply frames."""
        replies, _ = self._handle(frame, None)
        return replies

    def _error_frame(self, session, code: str, message: str, kind: str = "", ref: str = "") -> bytes:
        sid = session.id if isinstance(session, Session) else (session or NULL_SESSION)
        return encode(Envelope(sid, ERROR, ErrorPayload(code, message, kind, ref)))

    def _handle(self, frame: bytes, conn: Connection | None) -> tuple[list[bytes], bool]:
        try:
            env = decode(frame)
        except UnsupportedVersionError as exc:
            sid = exc.session_id
            if not (isinstance(sid, str) and len(sid) == 32 and all(c in "0123456789abcdefABCDEF" for c in sid)):
                sid = NULL_SESSION
            log.info("%s: closing session %s: %s", self.name, sid, exc)
            return [self._error_frame(sid, "unsupported_version", str(exc))], True
        except DecodeError as exc:
            sid = conn.session.id if conn is not None and conn.session else NULL_SESSION
            return [self._error_frame(sid, "decode_error", str(exc))], False

        with self._cond:
            session = self.sessions.get(env.session_id)
            if env.kind == HELLO:
                return self._hello(env, session, conn), False
            if session is None or (conn is not None and session.conn is not conn):
                return [self._error_frame(env.session_id, "unknown_session", "send HELLO first")], False
        if env.kind in (ACK, ERROR):
            session.resolve(env)
            return [], False
        with self._cond:
            reply = self._dispatch(session, env)
        return [encode(reply)], False

    def _hello(self, env: Envelope, session: Session | None, conn) -> list[bytes]:
        peer = env.payload.node
        if session is None:
            session = Session(env.session_id, conn, peer)
            self.sessions[session.id] = session
            if conn is not None:
                conn.session = session
            reply = [encode(Envelope(session.id, HELLO, Hello(self.name)))]
        else:
            session.peer = peer
            if conn is not None:
                session.conn = conn
                conn.session = session
            reply = []
        self.peers[peer] = session.id
        session.hello_done.set()
        self.events.append(("hello", peer))
        self._cond.notify_all()
        return reply

    def dispatch(self, session: Session, env: Envelope) -> Envelope:
        with self._cond:
            return self._dispatch(session, env)

    def _dispatch(self, session: Session, env: Envelope) -> Envelope:
        def error(code, message, ref):
            return Envelope(session.id, ERROR, ErrorPayload(code, message, env.kind, ref))

        if env.kind == REGISTER_TRANSFER:
            p = env.payload
            if p.register_id in self.registers:
                return error("duplicate_register", f"register {p.register_id} already exists", p.register_id)
            for rec in p.entanglements:
                ent = self.entanglements.get(rec.pair_id)
                if ent is None:
                    continue
                if ent.epr != rec.epr:
                    return error("invalid_register", f"pair {rec.pair_id} has a different amplitude matrix here", p.register_id)
                if isinstance(ent.sides.get(rec.side), LocalRef) or ent.state is not PairState.ACTIVE:
                    return error("invalid_register", f"pair {rec.pair_id} side {rec.side.value} is not transferable", p.register_id)
            try:
                reg = build_register(p, self.entanglements, method=self.method)
            except ValidationError as exc:
                return error("invalid_register", str(exc), p.register_id)
            for rec in p.entanglements:
                ent = self.entanglements[rec.pair_id]
                if rec.side.other not in ent.sides:
                    ent.attach(rec.side.other, RemoteStub(session.id, rec.pair_id, partial(self._forward_notice, session.peer)))
            self.registers[reg.register_id] = reg
            self.events.append(("register", reg.register_id, len(reg), len(p.entanglements)))
            return Envelope(session.id, ACK, Ack(env.kind, p.register_id))

        if env.kind == MEASUREMENT_NOTICE:
            n = env.payload
            ent = self.entanglements.get(n.pair_id)
            ref = ent.sides.get(n.measured_side.other) if ent is not None else None
            if not isinstance(ref, LocalRef):
                return error("unknown_pair", f"no local half of pair {n.pair_id}", n.pair_id)
            try:
                pos = ref.register.reconcile(n)
            except StaleEntanglementError as exc:
                return error("stale_entanglement", str(exc), n.pair_id)
            except ProtocolViolationError as exc:
                return error("protocol_violation", str(exc), n.pair_id)
            except QubitLostError as exc:
                return error("qubit_lost", str(exc), n.pair_id)
            self.events.append(("reconciled", n.pair_id, n.measured_side.value, n.outcome))
            self._cond.notify_all()
            if self.on_reconciled is not None:
                self.on_reconciled(ref.register, pos, n)
            return Envelope(session.id, ACK, Ack(env.kind, n.pair_id))

        return error("protocol_violation", f"{env.kind} is not a request", "")
