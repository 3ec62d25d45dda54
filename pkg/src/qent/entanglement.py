"""Entangled pairs kept as two independent qubits plus a shared coordinator.

Each half records the gates applied to it since entanglement.  When one half
is measured, the partner rewinds its own history, collapses against the
amplitude matrix stored at creation, replays the measurer's history and then
its own.  The partner may live in the same process (``LocalRef``) or behind a
network stub (``RemoteStub``); the coordinator cannot tell the difference.

Two replay methods are provided:

``"exact"`` (default)
    The measurer's outcome is drawn from its reduced marginal (amplitude
    matrix plus its own history, which is all it can see locally), and its
    gates are replayed on the partner mapped through the amplitude matrix
    (``M G^T M^-1``, newest first).  The result coincides with applying the
    gates as ``G (x) I`` / ``I (x) G`` to the joint state and projecting.

``"verbatim"``
    The measurer samples its stored local amplitudes and the partner applies
    the measurer's gate matrices unchanged, oldest first.  This is the plain
    walk-through procedure; it agrees with the joint-state computation for
    symmetric gates such as sigma-x but not for general rotations.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import linalg
from .errors import (
    NotEntangledError,
    ProtocolViolationError,
    QubitLostError,
    StaleEntanglementError,
    ValidationError,
)
from .register import QuantumRegister
from .rng import RandomSource

ENTANGLEMENT_TOL = 1e-9
METHODS = ("exact", "verbatim")


class Side(str, Enum):
    A = "A"
    B = "B"

    @property
    def other(self) -> "Side":
        return Side.B if self is Side.A else Side.A


class PairState(Enum):
    ACTIVE = "active"
    MEASURED = "measured"
    RECONCILED = "reconciled"


@dataclass(frozen=True)
class EprMatrix:
    """Joint amplitudes ``a00|00> + a01|01> + a10|10> + a11|11>`` at creation.

    Row index is side A's bit, column index side B's bit.
    """

    a00: complex
    a01: complex
    a10: complex
    a11: complex

    def __post_init__(self):
        vals = [complex(v) for v in (self.a00, self.a01, self.a10, self.a11)]
        for name, v in zip(("a00", "a01", "a10", "a11"), vals):
            object.__setattr__(self, name, v)
        if not all(np.isfinite([v.real for v in vals] + [v.imag for v in vals])):
            raise ValidationError("EPR matrix entries must be finite")
        norm = sum(abs(v) ** 2 for v in vals)
        if abs(norm - 1.0) > linalg.NORM_TOL:
            raise ValidationError(f"EPR matrix is not normalized (sum |a_ij|^2 = {norm!r})")

    @classmethod
    def from_vector(cls, v) -> "EprMatrix":
        v = np.asarray(v, dtype=np.complex128)
        if v.shape != (4,):
            raise ValidationError(f"EPR vector must have 4 entries, got shape {v.shape}")
        return cls(*v)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a00, self.a01], [self.a10, self.a11]], dtype=np.complex128)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.a00, self.a01, self.a10, self.a11], dtype=np.complex128)

    @property
    def determinant(self) -> complex:
        return self.a00 * self.a11 - self.a01 * self.a10

    @cached_property
    def _marginals(self) -> dict:
        p = np.abs(self.matrix) ** 2
        return {
            Side.A: np.sqrt(p.sum(axis=1)).astype(np.complex128),
            Side.B: np.sqrt(p.sum(axis=0)).astype(np.complex128),
        }

    @cached_property
    def _reduced(self) -> dict:
        a = self.matrix
        return {Side.A: a @ a.conj().T, Side.B: a.T @ a.conj()}

    @cached_property
    def _conditionals(self) -> dict:
        a = self.matrix
        out = {}
        for side, rows in ((Side.A, a), (Side.B, a.T)):
            vs = []
            for v in rows:
                norm = float(np.sqrt(np.vdot(v, v).real))
                vs.append(tuple((v / norm).tolist()) if norm > ENTANGLEMENT_TOL else None)
            out[side] = vs
        return out

    @cached_property
    def _side_lists(self) -> dict:
        return {Side.A: self.matrix.tolist(), Side.B: self.matrix.T.tolist()}

    @cached_property
    def _mirrors(self) -> dict:
        out = {}
        for side, m in ((Side.A, self.matrix.T), (Side.B, self.matrix)):
            out[side] = (m.tolist(), np.linalg.inv(m).tolist())
        return out

    def marginal(self, side: Side) -> np.ndarray:
        """Local amplitudes ``(sqrt(P(0)), sqrt(P(1)))`` for one side."""
        return self._marginals[Side(side)].copy()

    def reduced_density(self, side: Side) -> np.ndarray:
        return self._reduced[Side(side)].copy()


_R = 2**-0.5
PHI_PLUS = EprMatrix(_R, 0, 0, _R)
PHI_MINUS = EprMatrix(_R, 0, 0, -_R)
PSI_PLUS = EprMatrix(0, _R, _R, 0)
PSI_MINUS = EprMatrix(0, _R, -_R, 0)


def is_entangled(m: EprMatrix) -> bool:
    """Non-factorability test on the 2x2 amplitude matrix."""
    return abs(m.determinant) > ENTANGLEMENT_TOL


def conditional_collapse(m: EprMatrix, measured_side: Side, outcome: int) -> np.ndarray:
    """State of the unmeasured half given the other half's outcome."""
    measured_side = Side(measured_side)
    if outcome not in (0, 1):
        raise ValidationError(f"outcome must be 0 or 1, got {outcome!r}")
    v = m._conditionals[measured_side][outcome]
    if v is None:
        raise ProtocolViolationError(
            f"outcome {outcome} on side {measured_side.value} is impossible for this EPR matrix"
        )
    return np.array(v, dtype=np.complex128)


# 2x2 kernels on nested lists of Python complex numbers; these sit on the
# per-pair hot path where numpy call overhead dominates.


def _mv(g, v):
    return (g[0][0] * v[0] + g[0][1] * v[1], g[1][0] * v[0] + g[1][1] * v[1])


def _mm(a, b):
    return (
        (a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]),
        (a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]),
    )


def _dagger(g):
    return (
        (g[0][0].conjugate(), g[1][0].conjugate()),
        (g[0][1].conjugate(), g[1][1].conjugate()),
    )


def _normalized(v):
    norm = (abs(v[0]) ** 2 + abs(v[1]) ** 2) ** 0.5
    return (v[0] / norm, v[1] / norm)


def _product_list(history: Sequence[np.ndarray]):
    g = ((1 + 0j, 0j), (0j, 1 + 0j))
    for h in history:
        g = _mm(h.tolist(), g)
    return g


@dataclass(frozen=True, eq=False)
class MeasurementNotice:
    pair_id: str
    measured_side: Side
    outcome: int
    history: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "measured_side", Side(self.measured_side))
        if self.outcome not in (0, 1):
            raise ValidationError(f"outcome must be 0 or 1, got {self.outcome!r}")
        object.__setattr__(self, "history", tuple(linalg.as_gate(h) for h in self.history))

    @classmethod
    def _trusted(cls, pair_id, measured_side, outcome, history):
        # history entries were validated when they were recorded
        notice = object.__new__(cls)
        notice.__dict__.update(pair_id=pair_id, measured_side=measured_side, outcome=outcome, history=history)
        return notice

    def __eq__(self, other):
        if not isinstance(other, MeasurementNotice):
            return NotImplemented
        return (
            self.pair_id == other.pair_id
            and self.measured_side is other.measured_side
            and self.outcome == other.outcome
            and len(self.history) == len(other.history)
            and all(np.array_equal(x, y) for x, y in zip(self.history, other.history))
        )


class LocalRef(NamedTuple):
    register: "EntangledRegister"
    slot: int

    def deliver(self, notice: MeasurementNotice) -> None:
        self.register.reconcile(notice)


@dataclass(frozen=True)
class RemoteStub:
    """Stateless stand-in for a half that lives on another node."""

    session_id: str
    pair_id: str
    forward: Callable[[MeasurementNotice], None] = field(compare=False, repr=False)

    def deliver(self, notice: MeasurementNotice) -> None:
        self.forward(notice)


class Entanglement:
    """Coordinator for one pair: immutable amplitudes plus both partner refs."""

    def __init__(self, epr: EprMatrix, *, pair_id: str | None = None, method: str = "exact"):
        if method not in METHODS:
            raise ValidationError(f"unknown replay method {method!r}; expected one of {METHODS}")
        if not is_entangled(epr):
            raise NotEntangledError(
                f"amplitude matrix factors into single-qubit states (|det| = {abs(epr.determinant):.3e})"
            )
        self.pair_id = pair_id or uuid.uuid4().hex
        self.epr = epr
        self.method = method
        self.sides: dict[Side, LocalRef | RemoteStub] = {}
        self.state = PairState.ACTIVE
        self.notice: MeasurementNotice | None = None

    def __repr__(self):
        return f"Entanglement(pair_id={self.pair_id!r}, state={self.state.value})"

    def attach(self, side: Side, ref) -> None:
        self.sides[side if type(side) is Side else Side(side)] = ref

    def submit(self, notice: MeasurementNotice, *, deliver: bool = True) -> None:
        """Accept the measuring side's notice and route it to the partner."""
        if self.state is not PairState.ACTIVE:
            raise StaleEntanglementError(f"pair {self.pair_id} is already {self.state.value}")
        self.state = PairState.MEASURED
        self.notice = notice
        if deliver:
            self.deliver(notice)

    def deliver(self, notice: MeasurementNotice) -> None:
        """Route an accepted notice to the partner half and mark the pair reconciled."""
        partner = self.sides.get(notice.measured_side.other)
        if partner is None:
            raise ProtocolViolationError(f"pair {self.pair_id} has no partner attached")
        try:
            partner.deliver(notice)
        except StaleEntanglementError:
            # lost a measurement race; the winning notice already reconciled us
            if self.state is not PairState.RECONCILED:
                raise
            return
        self.state = PairState.RECONCILED


@dataclass(slots=True)
class _Measurement:
    draw: float
    theta: float
    outcome: int
    history: tuple
    revised: int | None = None


@dataclass(slots=True)
class _Binding:
    entanglement: Entanglement
    side: Side
    history: list = field(default_factory=list)
    measurement: _Measurement | None = None
    reconciled: bool = False

    @property
    def active(self) -> bool:
        return (
            self.measurement is None
            and not self.reconciled
            and self.entanglement.state is not PairState.RECONCILED
        )


class EntangledRegister(QuantumRegister):
    """Register whose slots may be one half of an entangled pair.

    Gates on an active slot are applied locally and appended to the slot's
    history.  Once the pair is measured or reconciled the slot behaves like a
    plain qubit and its history is kept, frozen, for inspection.
    """

    def __init__(self, n: int = 0, *, register_id: str | None = None):
        super().__init__(n, register_id=register_id)
        self._bindings: dict[int, _Binding] = {}
        self._slot_of_pair: dict[str, int] = {}

    def copy(self, *, register_id=None):
        raise TypeError("entangled registers cannot be copied; their coordinators are shared")

    def bind(self, pos: int, entanglement: Entanglement, side: Side, *, init_state: bool = True) -> None:
        pos = self._check_pos(pos)
        if pos in self._bindings and self._bindings[pos].active:
            raise ValidationError(f"slot {pos} is already half of an active pair")
        if type(side) is not Side:
            side = Side(side)
        self._bindings[pos] = _Binding(entanglement, side)
        self._slot_of_pair[entanglement.pair_id] = pos
        if init_state:
            self._amps[pos] = entanglement.epr._marginals[side]
            self._lost[pos] = False
        entanglement.attach(side, LocalRef(self, pos))

    def binding(self, pos: int) -> _Binding | None:
        return self._bindings.get(self._check_pos(pos))

    def entanglement(self, pos: int) -> Entanglement | None:
        b = self.binding(pos)
        return b.entanglement if b else None

    def active_slots(self) -> list[int]:
        return sorted(p for p, b in self._bindings.items() if b.active)

    def history(self, pos: int) -> tuple:
        b = self.binding(pos)
        return tuple(b.history) if b else ()

    def revised_outcome(self, pos: int) -> int | None:
        """Outcome after a measurement race was resolved against this slot."""
        b = self.binding(pos)
        return b.measurement.revised if b and b.measurement else None

    def _slot_for_pair(self, pair_id: str) -> int:
        pos = self._slot_of_pair.get(pair_id)
        if pos is not None:
            return pos
        raise ProtocolViolationError(f"register {self.register_id} holds no half of pair {pair_id}")

    # -- gates --------------------------------------------------------------

    def record_gate(self, g, pos: int) -> "EntangledRegister":
        b = self.binding(pos)
        if b is None:
            raise ValidationError(f"slot {pos} is not entangled")
        if not b.active:
            raise StaleEntanglementError(
                f"pair {b.entanglement.pair_id} was already measured or reconciled"
            )
        g = linalg.as_gate(g)
        pos = self._check_live(pos)
        self._amps[pos] = g @ self._amps[pos]
        b.history.append(g)
        return self

    def apply_gate(self, g, pos: int) -> "EntangledRegister":
        b = self._bindings.get(self._check_pos(pos))
        if b is not None and b.active:
            return self.record_gate(g, pos)
        return super().apply_gate(g, pos)

    def apply_gate_where(self, g, mask):
        mask = np.asarray(mask, dtype=bool)
        for pos in np.flatnonzero(mask):
            self.apply_gate(g, int(pos))
        return self

    # -- measurement --------------------------------------------------------

    def measure(self, pos: int, rng: RandomSource) -> int:
        b = self._bindings.get(self._check_pos(pos))
        if b is not None and b.active:
            return self.measure_entangled(pos, rng)[0]
        return super().measure(pos, rng)

    def measure_in_basis(self, pos: int, theta: float, rng: RandomSource) -> int:
        b = self._bindings.get(self._check_pos(pos))
        if b is not None and b.active:
            return self.measure_entangled(pos, rng, theta=theta)[0]
        return super().measure_in_basis(pos, theta, rng)

    def measure_where(self, mask, rng):
        mask = np.asarray(mask, dtype=bool)
        return np.array([self.measure(int(p), rng) for p in np.flatnonzero(mask)], dtype=np.int8)

    def measure_entangled(
        self, pos: int, rng: RandomSource, *, theta: float = 0.0, deliver: bool = True
    ) -> tuple[int, MeasurementNotice]:
        """Measure one half and notify the partner.

        With ``deliver=False`` the coordinator is marked measured but the
        notice is only returned; the caller is responsible for routing it.
        """
        pos = self._check_live(pos)
        b = self._bindings.get(pos)
        if b is None:
            raise ValidationError(f"slot {pos} is not entangled")
        ent = b.entanglement
        if not b.active or ent.state is not PairState.ACTIVE:
            raise StaleEntanglementError(f"pair {ent.pair_id} was already measured or reconciled")

        basis = [linalg.ry(-theta)] if theta else []
        if ent.method == "exact":
            # P(0) = squared norm of row 0 of G.M, with G this side's gates
            g = _product_list(b.history + basis)
            m = ent.epr._side_lists[b.side]
            r0 = g[0][0] * m[0][0] + g[0][1] * m[1][0]
            r1 = g[0][0] * m[0][1] + g[0][1] * m[1][1]
            p0 = abs(r0) ** 2 + abs(r1) ** 2
        else:
            v = self._amps[pos].tolist()
            if theta:
                v = _mv(basis[0].tolist(), v)
            p0 = abs(v[0]) ** 2
        draw = rng.random()
        bit = 0 if draw < p0 else 1
        self._amps[pos] = linalg.KET1 if bit else linalg.KET0
        if theta:
            self._amps[pos] = linalg.ry(theta) @ self._amps[pos]

        history = tuple(b.history) + tuple(basis)
        notice = MeasurementNotice._trusted(ent.pair_id, b.side, bit, history)
        b.measurement = _Measurement(draw, theta, bit, history)
        ent.submit(notice, deliver=deliver)
        return bit, notice

    # -- reconciliation -----------------------------------------------------

    def reconcile(self, notice: MeasurementNotice) -> int:
        """Bring this half to its post-measurement state; returns the slot.

        The steps are rewind (undo this half's gates), collapse (take the
        conditional state from the stored amplitude matrix), replay the
        measurer's gates, then replay this half's own gates.  Collapse
        replaces the rewound state outright, so the rewind is not computed
        here; :func:`rewind` exposes it on its own.
        """
        pos = self._slot_of_pair.get(notice.pair_id)
        if pos is None:
            raise ProtocolViolationError(f"register {self.register_id} holds no half of pair {notice.pair_id}")
        b = self._bindings[pos]
        ent = b.entanglement
        if notice.measured_side is b.side:
            raise ProtocolViolationError(
                f"notice for pair {notice.pair_id} claims side {b.side.value}, which is this half"
            )
        if b.reconciled or ent.state is PairState.RECONCILED:
            raise StaleEntanglementError(f"pair {notice.pair_id} was already reconciled")
        if self._lost[pos]:
            raise QubitLostError(f"qubit {pos} was lost before reconciliation")

        race = b.measurement
        if race is not None and notice.measured_side is not Side.A:
            # both halves measured before either notice arrived; side A's result stands
            raise StaleEntanglementError(
                f"pair {notice.pair_id}: side A measurement takes precedence over side B"
            )
        own = race.history if race is not None else b.history

        state = ent.epr._conditionals[notice.measured_side][notice.outcome]
        if state is None:
            raise ProtocolViolationError(
                f"notice reports an outcome that is impossible for pair {notice.pair_id}"
            )
        if notice.history:
            state = _replay_partner(state, ent, notice)
        if own:
            for h in own:
                state = _mv(h.tolist(), state)
            state = _normalized(state)
        a0, a1 = state
        amps = self._amps
        amps[pos, 0] = a0
        amps[pos, 1] = a1

        if race is not None:
            bit = 0 if race.draw < abs(a0) ** 2 else 1
            amps[pos] = linalg.KET1 if bit else linalg.KET0
            if race.theta:
                amps[pos] = linalg.ry(race.theta) @ amps[pos]
            race.revised = bit

        b.reconciled = True
        if ent.notice is None:
            ent.notice = notice
        ent.state = PairState.RECONCILED
        return pos


def rewind(state, history: Sequence[np.ndarray]) -> np.ndarray:
    """Undo ``history`` (oldest first) by applying the adjoints newest first."""
    v = tuple(linalg.as_state(state).tolist())
    for h in reversed(history):
        v = _mv(_dagger(linalg.as_gate(h).tolist()), v)
    return np.array(v, dtype=np.complex128)


def _replay_partner(state, ent: Entanglement, notice: MeasurementNotice):
    if ent.method == "verbatim":
        for g in notice.history:
            state = _mv(g.tolist(), state)
        return _normalized(state)
    # a gate G on the measured half acts on the partner as M G^T M^-1; applied
    # newest first these compose to M (G_n ... G_1)^T M^-1
    m, m_inv = ent.epr._mirrors[notice.measured_side]
    p = _product_list(notice.history)
    pt = ((p[0][0], p[1][0]), (p[0][1], p[1][1]))
    return _normalized(_mv(m, _mv(pt, _mv(m_inv, state))))


def create_entangled_pair(
    m: EprMatrix, *, pair_id: str | None = None, method: str = "exact"
) -> tuple[EntangledRegister, EntangledRegister, Entanglement]:
    """Two one-qubit registers holding sides A and B of a fresh pair."""
    ent = Entanglement(m, pair_id=pair_id, method=method)
    reg_a, reg_b = EntangledRegister(1), EntangledRegister(1)
    reg_a.bind(0, ent, Side.A)
    reg_b.bind(0, ent, Side.B)
    return reg_a, reg_b, ent



def create_entangled_pairs(
    m: EprMatrix, n: int, *, method: str = "exact", prefix: str | None = None
) -> tuple[EntangledRegister, EntangledRegister, list[Entanglement]]:
    """``n`` independent pairs; slot ``i`` of the two registers forms pair ``i``."""
    Entanglement(m, pair_id="check", method=method)  # validates m and method once
    prefix = prefix or uuid.uuid4().hex[:12]
    reg_a, reg_b = EntangledRegister(n), EntangledRegister(n)
    reg_a._amps[:] = m._marginals[Side.A]
    reg_b._amps[:] = m._marginals[Side.B]
    ents = []
    new = object.__new__
    A, B, active = Side.A, Side.B, PairState.ACTIVE
    bind_a, bind_b = reg_a._bindings, reg_b._bindings
    slots_a, slots_b = reg_a._slot_of_pair, reg_b._slot_of_pair
    for i in range(n):
        pid = f"{prefix}-{i}"
        ent = new(Entanglement)
        ent.pair_id, ent.epr, ent.method, ent.state, ent.notice = pid, m, method, active, None
        ent.sides = {A: LocalRef(reg_a, i), B: LocalRef(reg_b, i)}
        bind_a[i] = _Binding(ent, A, [])
        bind_b[i] = _Binding(ent, B, [])
        slots_a[pid] = i
        slots_b[pid] = i
        ents.append(ent)
    return reg_a, reg_b, ents


def record_gate(er: EntangledRegister, g, pos: int) -> EntangledRegister:
    return er.record_gate(g, pos)


def measure_entangled(er: EntangledRegister, pos: int, rng: RandomSource, **kw):
    return er.measure_entangled(pos, rng, **kw)


def reconcile(er: EntangledRegister, notice: MeasurementNotice) -> EntangledRegister:
    er.reconcile(notice)
    return er
