"""Quantum registers: ordered collections of independently stored qubits.

Every gate and measurement goes through the register so that subclasses
(see :mod:`qent.entanglement`) can intercept them.  Each qubit costs two
complex numbers plus a lost flag; there is no joint state vector.
"""

from __future__ import annotations

import operator
import uuid
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import linalg
from .errors import QubitLostError, UnrepresentableOperationError, ValidationError
from .rng import RandomSource

BASIS_TOL = 1e-9


@dataclass(frozen=True)
class Qubit:
    alpha: complex
    beta: complex
    lost: bool = False

    @property
    def state(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=np.complex128)

    @property
    def p0(self) -> float:
        return abs(self.alpha) ** 2


def new_register_id() -> str:
    return uuid.uuid4().hex


class QuantumRegister:
    """Fixed-length register of qubits addressed by position ``0..n-1``."""

    def __init__(self, n: int = 0, *, register_id: str | None = None):
        if n < 0:
            raise ValidationError(f"register length must be non-negative, got {n}")
        self.register_id = register_id or new_register_id()
        self._amps = np.zeros((n, 2), dtype=np.complex128)
        self._amps[:, 0] = 1.0
        self._lost = np.zeros(n, dtype=bool)

    @classmethod
    def from_qubits(cls, qubits: Iterable[Qubit], *, register_id: str | None = None):
        qubits = list(qubits)
        reg = cls(len(qubits), register_id=register_id)
        for i, q in enumerate(qubits):
            if q.lost:
                reg._amps[i] = (q.alpha, q.beta)
                reg._lost[i] = True
            else:
                reg._amps[i] = linalg.as_state((q.alpha, q.beta))
        return reg

    @classmethod
    def from_arrays(cls, alpha, beta, lost=None, *, register_id: str | None = None):
        alpha = np.asarray(alpha, dtype=np.complex128)
        beta = np.asarray(beta, dtype=np.complex128)
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise ValidationError("alpha and beta must be 1-D arrays of equal length")
        reg = cls(len(alpha), register_id=register_id)
        reg._amps[:, 0] = alpha
        reg._amps[:, 1] = beta
        if lost is not None:
            reg._lost[:] = np.asarray(lost, dtype=bool)
        norms = np.abs(alpha) ** 2 + np.abs(beta) ** 2
        bad = ~reg._lost & (np.abs(norms - 1.0) > linalg.NORM_TOL)
        if bad.any():
            raise ValidationError(f"qubit {int(np.argmax(bad))} is not normalized")
        return reg

    # -- inspection ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._lost)

    def __iter__(self) -> Iterator[Qubit]:
        for i in range(len(self)):
            yield self.qubit(i)

    def __repr__(self):
        return f"{type(self).__name__}(n={len(self)}, id={self.register_id!r})"

    def __eq__(self, other):
        if not isinstance(other, QuantumRegister):
            return NotImplemented
        return (
            self.register_id == other.register_id
            and self._amps.tobytes() == other._amps.tobytes()
            and self._lost.tobytes() == other._lost.tobytes()
        )

    def _check_pos(self, pos: int) -> int:
        if type(pos) is int and 0 <= pos < self._lost.shape[0]:
            return pos
        if isinstance(pos, bool):
            raise TypeError("qubit position must be an integer, got bool")
        pos = operator.index(pos)
        n = self._lost.shape[0]
        if not 0 <= pos < n:
            raise IndexError(f"qubit position {pos} out of range for register of length {n}")
        return pos

    def _check_live(self, pos: int) -> int:
        pos = self._check_pos(pos)
        if self._lost[pos]:
            raise QubitLostError(f"qubit {pos} was lost; it has no defined state or outcome")
        return pos

    def qubit(self, pos: int) -> Qubit:
        pos = self._check_pos(pos)
        a, b = self._amps[pos]
        return Qubit(complex(a), complex(b), bool(self._lost[pos]))

    def state(self, pos: int) -> np.ndarray:
        pos = self._check_live(pos)
        return self._amps[pos].copy()

    def is_lost(self, pos: int) -> bool:
        return bool(self._lost[self._check_pos(pos)])

    @property
    def alphas(self) -> np.ndarray:
        return self._amps[:, 0].copy()

    @property
    def betas(self) -> np.ndarray:
        return self._amps[:, 1].copy()

    @property
    def lost_mask(self) -> np.ndarray:
        return self._lost.copy()

    def copy(self, *, register_id: str | None = None) -> "QuantumRegister":
        reg = QuantumRegister(0, register_id=register_id or self.register_id)
        reg._amps = self._amps.copy()
        reg._lost = self._lost.copy()
        return reg

    # -- mutation -----------------------------------------------------------

    def set_state(self, pos: int, state) -> None:
        pos = self._check_pos(pos)
        self._amps[pos] = linalg.as_state(state)
        self._lost[pos] = False

    def mark_lost(self, pos: int) -> None:
        self._lost[self._check_pos(pos)] = True

    def reset(self, pos: int, bit: int) -> None:
        """Replace the slot with a fresh computational-basis qubit."""
        pos = self._check_pos(pos)
        self._amps[pos] = linalg.KET1 if bit else linalg.KET0
        self._lost[pos] = False

    def reset_where(self, mask, bits) -> None:
        """Vectorized :meth:`reset` for the selected slots, ``bits`` aligned with them."""
        mask = np.asarray(mask, dtype=bool)
        bits = np.asarray(bits)
        self._amps[mask, 0] = 1 - bits
        self._amps[mask, 1] = bits
        self._lost[mask] = False

    def mark_lost_where(self, mask) -> None:
        self._lost[np.asarray(mask, dtype=bool)] = True

    def apply_gate(self, g, pos: int) -> "QuantumRegister":
        g = linalg.as_gate(g)
        pos = self._check_live(pos)
        self._amps[pos] = g @ self._amps[pos]
        return self

    def apply_gate_where(self, g, mask) -> "QuantumRegister":
        """Apply ``g`` to every selected slot in one vectorized step."""
        g = linalg.as_gate(g)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self._lost.shape:
            raise ValidationError("mask length does not match register length")
        if (mask & self._lost).any():
            raise QubitLostError(f"qubit {int(np.argmax(mask & self._lost))} was lost")
        self._amps[mask] = self._amps[mask] @ g.T
        return self

    def apply_controlled(self, g, control, target: int) -> "QuantumRegister":
        """Controlled single-qubit gate, e.g. CNOT or (with two controls) Toffoli.

        Controls must sit in a computational basis state; a superposed control
        would entangle qubits that this register stores independently.
        """
        controls = [control] if isinstance(control, (int, np.integer)) else list(control)
        target = self._check_live(target)
        fire = True
        for c in controls:
            c = self._check_live(c)
            if c == target:
                raise ValidationError("control and target must differ")
            p1 = abs(self._amps[c, 1]) ** 2
            if p1 < BASIS_TOL:
                fire = False
            elif p1 <= 1.0 - BASIS_TOL:
                raise UnrepresentableOperationError(
                    f"control qubit {c} is in superposition; the controlled gate would entangle it"
                )
        if fire:
            self.apply_gate(g, target)
        return self

    # -- measurement --------------------------------------------------------

    def _collapse(self, pos: int, draw: float) -> int:
        bit = 0 if draw < abs(self._amps[pos, 0]) ** 2 else 1
        self._amps[pos] = linalg.KET1 if bit else linalg.KET0
        return bit

    def measure(self, pos: int, rng: RandomSource) -> int:
        """Rectilinear measurement: 0 iff a uniform draw falls below ``|alpha|^2``."""
        pos = self._check_live(pos)
        return self._collapse(pos, rng.random())

    def measure_in_basis(self, pos: int, theta: float, rng: RandomSource) -> int:
        """Measure along the basis rotated by ``theta``.

        The qubit is rotated by ``-theta``, measured, and the collapsed basis
        state rotated back, so the stored state is the basis eigenstate.
        """
        if theta == 0:
            return self.measure(pos, rng)
        pos = self._check_live(pos)
        self._amps[pos] = linalg.ry(-theta) @ self._amps[pos]
        bit = self._collapse(pos, rng.random())
        self._amps[pos] = linalg.ry(theta) @ self._amps[pos]
        return bit

    def measure_where(self, mask, rng: RandomSource) -> np.ndarray:
        """Measure all selected slots; returns bits aligned with ``mask``'s true entries.

        One uniform draw is consumed per selected slot, in position order.
        """
        mask = np.asarray(mask, dtype=bool)
        if (mask & self._lost).any():
            raise QubitLostError(f"qubit {int(np.argmax(mask & self._lost))} was lost")
        idx = np.flatnonzero(mask)
        draws = rng.random_array(len(idx))
        p0 = np.abs(self._amps[idx, 0]) ** 2
        bits = (draws >= p0).astype(np.int8)
        self._amps[idx, 0] = 1 - bits
        self._amps[idx, 1] = bits
        return bits

    # -- serialization ------------------------------------------------------

    def serialize(self) -> bytes:
        from .wire.codec import dump_register

        return dump_register(self)

    @staticmethod
    def deserialize(data: bytes) -> "QuantumRegister":
        from .wire.codec import load_register

        return load_register(data)


def register_of(states: Sequence) -> QuantumRegister:
    """Convenience constructor from a list of amplitude pairs."""
    return QuantumRegister.from_qubits(Qubit(complex(a), complex(b)) for a, b in states)
