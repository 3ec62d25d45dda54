"""Envelope schema and length-prefixed JSON framing.

A frame is a 4-byte big-endian unsigned length followed by that many bytes of
UTF-8 JSON::

    {"version": 1, "sessionId": "<32 hex>", "kind": "ACK", "payload": {...}}

Complex numbers travel as ``[re, im]`` pairs and 2x2 matrices as four such
pairs in row-major order.  Python's float repr is the shortest string that
round-trips, so decoding reproduces every amplitude bit for bit.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Any

import numpy as np

from .. import linalg
from ..entanglement import EntangledRegister, Entanglement, EprMatrix, MeasurementNotice, Side
from ..errors import DecodeError, FramingError, UnsupportedVersionError, ValidationError
from ..register import Qubit, QuantumRegister

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
HEADER = struct.Struct(">I")

HELLO = "HELLO"
REGISTER_TRANSFER = "REGISTER_TRANSFER"
MEASUREMENT_NOTICE = "MEASUREMENT_NOTICE"
ACK = "ACK"
ERROR = "ERROR"
KINDS = (HELLO, REGISTER_TRANSFER, MEASUREMENT_NOTICE, ACK, ERROR)


# -- payloads ----------------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    node: str


@dataclass(frozen=True)
class EntanglementRecord:
    pair_id: str
    slot_index: int
    side: Side
    epr: EprMatrix


@dataclass(frozen=True)
class RegisterTransfer:
    register_id: str
    qubits: tuple
    entanglements: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        object.__setattr__(self, "entanglements", tuple(self.entanglements))
        n = len(self.qubits)
        seen = set()
        for i, q in enumerate(self.qubits):
            if not q.lost and abs(abs(q.alpha) ** 2 + abs(q.beta) ** 2 - 1.0) > linalg.NORM_TOL:
                raise ValidationError(f"qubits[{i}] is not normalized")
        for e in self.entanglements:
            if not 0 <= e.slot_index < n:
                raise ValidationError(f"slotIndex {e.slot_index} out of range for {n} qubits")
            if e.slot_index in seen:
                raise ValidationError(f"slotIndex {e.slot_index} appears twice")
            seen.add(e.slot_index)


@dataclass(frozen=True)
class Ack:
    kind: str
    ref: str


@dataclass(frozen=True)
class ErrorPayload:
    code: str
    message: str = ""
    kind: str = ""
    ref: str = ""


_PAYLOAD_TYPES = {
    HELLO: Hello,
    REGISTER_TRANSFER: RegisterTransfer,
    MEASUREMENT_NOTICE: MeasurementNotice,
    ACK: Ack,
    ERROR: ErrorPayload,
}


@dataclass(frozen=True)
class Envelope:
    session_id: str
    kind: str
    payload: Any
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown envelope kind {self.kind!r}")
        if not isinstance(self.payload, _PAYLOAD_TYPES[self.kind]):
            raise ValidationError(
                f"{self.kind} envelope needs a {_PAYLOAD_TYPES[self.kind].__name__} payload"
            )
        _check_session_id(self.session_id, ValidationError)


def _check_session_id(sid, exc):
    ok = isinstance(sid, str) and len(sid) == 32
    if ok:
        try:
            int(sid, 16)
        except ValueError:
            ok = False
    if not ok:
        if exc is DecodeError:
            raise DecodeError(f"sessionId must be 32 hex digits, got {sid!r}", field="sessionId")
        raise exc(f"sessionId must be 32 hex digits, got {sid!r}")


# -- encoding ----------------------------------------------------------------


def _c(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def _mat(g) -> list:
    g = np.asarray(g)
    return [_c(g[0, 0]), _c(g[0, 1]), _c(g[1, 0]), _c(g[1, 1])]


def _payload_json(p) -> dict:
    if isinstance(p, Hello):
        return {"node": p.node}
    if isinstance(p, RegisterTransfer):
        return {
            "registerId": p.register_id,
            "qubits": [{"alpha": _c(q.alpha), "beta": _c(q.beta), "lost": bool(q.lost)} for q in p.qubits],
            "entanglements": [
                {
                    "pairId": e.pair_id,
                    "slotIndex": int(e.slot_index),
                    "side": Side(e.side).value,
                    "eprMatrix": [_c(e.epr.a00), _c(e.epr.a01), _c(e.epr.a10), _c(e.epr.a11)],
                }
                for e in p.entanglements
            ],
        }
    if isinstance(p, MeasurementNotice):
        return {
            "pairId": p.pair_id,
            "measuredSide": p.measured_side.value,
            "outcome": int(p.outcome),
            "history": [_mat(g) for g in p.history],
        }
    if isinstance(p, Ack):
        return {"kind": p.kind, "ref": p.ref}
    if isinstance(p, ErrorPayload):
        return {"code": p.code, "message": p.message, "kind": p.kind, "ref": p.ref}
    raise ValidationError(f"cannot encode payload of type {type(p).__name__}")


def envelope_json(env: Envelope) -> dict:
    return {
        "version": env.version,
        "sessionId": env.session_id,
        "kind": env.kind,
        "payload": _payload_json(env.payload),
    }


def encode_body(env: Envelope) -> bytes:
    try:
        text = json.dumps(envelope_json(env), allow_nan=False, separators=(",", ":"))
    except ValueError as exc:
        raise ValidationError(f"envelope contains a non-finite number: {exc}") from None
    return text.encode("utf-8")


def frame(body: bytes) -> bytes:
    if len(body) > MAX_FRAME:
        raise FramingError(f"frame body of {len(body)} bytes exceeds the {MAX_FRAME}-byte cap", offset=0)
    return HEADER.pack(len(body)) + body


def encode(env: Envelope) -> bytes:
    return frame(encode_body(env))


# -- decoding ----------------------------------------------------------------


class _Fields:
    """Strict accessor for one JSON object; errors carry the dotted field path."""

    def __init__(self, obj, path: str):
        if not isinstance(obj, dict):
            raise DecodeError(f"{path or 'envelope'} must be an object", field=path or None)
        self.obj = obj
        self.path = path
        self.used: set[str] = set()

    def _name(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, kind, *, default=...):
        if key not in self.obj:
            if default is not ...:
                self.used.add(key)
                return default
            raise DecodeError(f"missing field {self._name(key)}", field=self._name(key))
        self.used.add(key)
        value = self.obj[key]
        ok = isinstance(value, kind) and not (kind is not bool and isinstance(value, bool))
        if kind is bool:
            ok = isinstance(value, bool)
        if not ok:
            raise DecodeError(
                f"field {self._name(key)} has the wrong type ({type(value).__name__})",
                field=self._name(key),
            )
        return value

    def done(self):
        extra = sorted(set(self.obj) - self.used)
        if extra:
            name = self._name(extra[0])
            raise DecodeError(f"unexpected field {name}", field=name)


def _complex(v, name) -> complex:
    if (
        not isinstance(v, list)
        or len(v) != 2
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
    ):
        raise DecodeError(f"field {name} must be a [re, im] pair", field=name)
    if not all(math.isfinite(x) for x in v):
        raise DecodeError(f"field {name} is not finite", field=name)
    return complex(float(v[0]), float(v[1]))


def _complex4(v, name) -> list:
    if not isinstance(v, list) or len(v) != 4:
        raise DecodeError(f"field {name} must hold four [re, im] pairs", field=name)
    return [_complex(x, f"{name}[{i}]") for i, x in enumerate(v)]


def _side(v, name) -> Side:
    try:
        return Side(v)
    except ValueError:
        raise DecodeError(f"field {name} must be 'A' or 'B', got {v!r}", field=name) from None


def _index(v, name) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise DecodeError(f"field {name} must be an integer", field=name)
    return v


def _decode_payload(kind: str, obj) -> Any:
    f = _Fields(obj, "payload")
    try:
        if kind == HELLO:
            out = Hello(f.get("node", str))
        elif kind == ACK:
            out = Ack(f.get("kind", str), f.get("ref", str))
        elif kind == ERROR:
            out = ErrorPayload(
                f.get("code", str), f.get("message", str, default=""),
                f.get("kind", str, default=""), f.get("ref", str, default=""),
            )
        elif kind == MEASUREMENT_NOTICE:
            outcome = _index(f.get("outcome", int), "payload.outcome")
            if outcome not in (0, 1):
                raise DecodeError("field payload.outcome must be 0 or 1", field="payload.outcome")
            history = []
            for i, m in enumerate(f.get("history", list)):
                name = f"payload.history[{i}]"
                a, b, c, d = _complex4(m, name)
                try:
                    history.append(linalg.as_gate([[a, b], [c, d]]))
                except ValidationError as exc:
                    raise DecodeError(f"field {name}: {exc}", field=name) from None
            out = MeasurementNotice(
                f.get("pairId", str), _side(f.get("measuredSide", str), "payload.measuredSide"),
                outcome, tuple(history),
            )
        else:
            qubits = []
            for i, q in enumerate(f.get("qubits", list)):
                qf = _Fields(q, f"payload.qubits[{i}]")
                qubits.append(Qubit(
                    _complex(qf.get("alpha", list), f"payload.qubits[{i}].alpha"),
                    _complex(qf.get("beta", list), f"payload.qubits[{i}].beta"),
                    qf.get("lost", bool),
                ))
                qf.done()
            ents = []
            for i, e in enumerate(f.get("entanglements", list)):
                path = f"payload.entanglements[{i}]"
                ef = _Fields(e, path)
                pair_id = ef.get("pairId", str)
                slot = _index(ef.get("slotIndex", int), f"{path}.slotIndex")
                side = _side(ef.get("side", str), f"{path}.side")
                try:
                    epr = EprMatrix(*_complex4(ef.get("eprMatrix", list), f"{path}.eprMatrix"))
                except ValidationError as exc:
                    raise DecodeError(f"field {path}.eprMatrix: {exc}", field=f"{path}.eprMatrix") from None
                ef.done()
                ents.append(EntanglementRecord(pair_id, slot, side, epr))
            out = RegisterTransfer(f.get("registerId", str), qubits, ents)
    except ValidationError as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(f"invalid payload: {exc}", field="payload") from None
    f.done()
    return out


def decode_body(body: bytes) -> Envelope:
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"frame is not valid UTF-8: {exc.reason}", offset=HEADER.size + exc.start) from None
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed JSON: {exc.msg}", offset=HEADER.size + exc.pos) from None
    f = _Fields(obj, "")
    version = f.get("version", int)
    sid = obj.get("sessionId") if isinstance(obj, dict) else None
    if version != PROTOCOL_VERSION:
        raise UnsupportedVersionError(
            f"unsupported protocol version {version}", version=version,
            session_id=sid if isinstance(sid, str) else None,
        )
    sid = f.get("sessionId", str)
    _check_session_id(sid, DecodeError)
    kind = f.get("kind", str)
    if kind not in KINDS:
        raise DecodeError(f"unknown envelope kind {kind!r}", field="kind")
    payload = _decode_payload(kind, f.get("payload", dict))
    f.done()
    return Envelope(sid, kind, payload, version)


def _reject_constant(name):
    raise DecodeError(f"non-finite number {name} is not allowed", field=None)


def decode(data: bytes) -> Envelope:
    """Decode exactly one complete frame."""
    data = bytes(data)
    if len(data) < HEADER.size:
        raise FramingError(f"frame header needs {HEADER.size} bytes, got {len(data)}", offset=0)
    (length,) = HEADER.unpack_from(data)
    if length > MAX_FRAME:
        raise FramingError(f"declared frame length {length} exceeds the {MAX_FRAME}-byte cap", offset=0)
    available = len(data) - HEADER.size
    if available < length:
        raise FramingError(f"truncated frame: header declares {length} bytes, {available} available", offset=len(data))
    if available > length:
        raise FramingError(f"{available - length} trailing bytes after frame", offset=HEADER.size + length)
    return decode_body(data[HEADER.size:])


class FrameReader:
    """Incremental splitter for a byte stream of frames."""

    def __init__(self):
        self._buf = bytearray()
        self._consumed = 0

    def feed(self, data: bytes) -> list[bytes]:
        """Append ``data``; return every complete frame (header included)."""
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            (length,) = HEADER.unpack_from(self._buf)
            if length > MAX_FRAME:
                raise FramingError(
                    f"declared frame length {length} exceeds the {MAX_FRAME}-byte cap", offset=self._consumed
                )
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            out.append(bytes(self._buf[:end]))
            del self._buf[:end]
            self._consumed += end
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- registers ----------------------------------------------------------------


def transfer_payload(reg: QuantumRegister) -> RegisterTransfer:
    """Snapshot of a register, including the pairs its active slots belong to.

    A slot that already carries gate history cannot be shipped: the schema
    has no field for it, and dropping it would corrupt reconciliation.
    """
    ents = []
    if isinstance(reg, EntangledRegister):
        for pos in reg.active_slots():
            b = reg.binding(pos)
            if b.history:
                raise ValidationError(
                    f"slot {pos} has {len(b.history)} recorded gates; only fresh pair halves can be transferred"
                )
            ents.append(EntanglementRecord(b.entanglement.pair_id, pos, b.side, b.entanglement.epr))
    return RegisterTransfer(reg.register_id, list(reg), ents)


def build_register(p: RegisterTransfer, coordinators: dict | None = None, *, method: str = "exact"):
    """Rebuild a register from a transfer payload.

    ``coordinators`` maps pair ids to existing :class:`Entanglement` objects;
    missing pairs get fresh coordinators, which are added to the mapping.
    """
    coordinators = {} if coordinators is None else coordinators
    alpha = [q.alpha for q in p.qubits]
    beta = [q.beta for q in p.qubits]
    lost = [q.lost for q in p.qubits]
    if not p.entanglements:
        return QuantumRegister.from_arrays(alpha, beta, lost, register_id=p.register_id)
    reg = EntangledRegister(len(p.qubits), register_id=p.register_id)
    reg._amps[:, 0] = alpha
    reg._amps[:, 1] = beta
    reg._lost[:] = lost
    for e in p.entanglements:
        ent = coordinators.get(e.pair_id)
        if ent is None:
            ent = Entanglement(e.epr, pair_id=e.pair_id, method=method)
            coordinators[e.pair_id] = ent
        elif ent.epr != e.epr:
            raise ValidationError(f"pair {e.pair_id} is known here with a different amplitude matrix")
        reg.bind(e.slot_index, ent, e.side, init_state=False)
    return reg


def dump_register(reg: QuantumRegister) -> bytes:
    return json.dumps(_payload_json(transfer_payload(reg)), allow_nan=False, separators=(",", ":")).encode("utf-8")


def load_register(data: bytes) -> QuantumRegister:
    try:
        obj = json.loads(bytes(data).decode("utf-8"), parse_constant=_reject_constant)
    except UnicodeDecodeError as exc:
        raise DecodeError(f"register document is not valid UTF-8: {exc.reason}", offset=exc.start) from None
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed register document: {exc.msg}", offset=exc.pos) from None
    return build_register(_decode_payload(REGISTER_TRANSFER, obj))
