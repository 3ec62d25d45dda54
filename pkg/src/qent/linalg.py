"""Small dense complex linear algebra for one and two qubits.

Gates are plain read-only ``(2, 2)`` complex arrays, two-qubit operators are
``(4, 4)`` arrays in the basis order ``|00>, |01>, |10>, |11>``.  Everything
here is a pure function over immutable values.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

UNITARY_TOL = 1e-12
NORM_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.complex128)
    arr.flags.writeable = False
    return arr


IDENTITY = _frozen([[1, 0], [0, 1]])
PAULI_X = _frozen([[0, 1], [1, 0]])
PAULI_Y = _frozen([[0, -1j], [1j, 0]])
PAULI_Z = _frozen([[1, 0], [0, -1]])
HADAMARD = _frozen(np.array([[1, 1], [1, -1]]) / math.sqrt(2))

KET0 = _frozen([1, 0])
KET1 = _frozen([0, 1])


def ry(theta: float) -> np.ndarray:
    """Real rotation taking ``|0>`` to ``cos(theta)|0> + sin(theta)|1>``."""
    c, s = math.cos(theta), math.sin(theta)
    return _frozen([[c, -s], [s, c]])


def rz(theta: float) -> np.ndarray:
    """Relative phase ``e^{i theta}`` on ``|1>``."""
    return _frozen([[1, 0], [0, cmath.exp(1j * theta)]])


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains NaN or infinite entries")


_EYE2 = np.eye(2)


def is_unitary(m, tol: float = UNITARY_TOL) -> bool:
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    eye = _EYE2 if m.shape[0] == 2 else np.eye(m.shape[0])
    # NaN entries make the comparison false
    return bool(np.abs(m @ m.conj().T - eye).max() <= tol)


_validated: dict[int, np.ndarray] = {}
_VALIDATED_MAX = 4096


def as_gate(m) -> np.ndarray:
    """Validate a 2x2 unitary and return it as a read-only array."""
    if _validated.get(id(m)) is m and not m.flags.writeable:
        return m
    if (
        isinstance(m, np.ndarray)
        and m.dtype == np.complex128
        and m.base is None
        and not m.flags.writeable
    ):
        # owns its buffer and is read-only, so it cannot change after validation
        arr = m
    else:
        arr = np.array(m, dtype=np.complex128)
    if arr.shape != (2, 2):
        raise ValidationError(f"gate must be 2x2, got shape {arr.shape}")
    if not is_unitary(arr):
        _check_finite(arr, "gate")
        defect = float(np.max(np.abs(arr @ arr.conj().T - np.eye(2))))
        raise ValidationError(f"gate is not unitary (max |M M^dagger - I| = {defect:.3e})")
    arr.flags.writeable = False
    if len(_validated) >= _VALIDATED_MAX:
        _validated.clear()
    # the cache holds a reference, so ids cannot be recycled while cached
    _validated[id(arr)] = arr
    return arr


def as_state(pair, tol: float = NORM_TOL) -> np.ndarray:
    """Validate a normalized amplitude pair ``(alpha, beta)``."""
    arr = np.array(pair, dtype=np.complex128)
    if arr.shape != (2,):
        raise ValidationError(f"amplitude pair must have 2 entries, got shape {arr.shape}")
    _check_finite(arr, "amplitude pair")
    norm = float(np.vdot(arr, arr).real)
    if abs(norm - 1.0) > tol:
        raise ValidationError(f"amplitude pair is not normalized (|alpha|^2 + |beta|^2 = {norm!r})")
    return arr


def make_gate(phi: float, a: complex, b: complex) -> np.ndarray:
    """Build ``e^{i phi} [[a, b], [-b*, a*]]`` from ``|a|^2 + |b|^2 = 1``."""
    a, b = complex(a), complex(b)
    norm = abs(a) ** 2 + abs(b) ** 2
    if not math.isfinite(norm) or abs(norm - 1.0) > NORM_TOL:
        raise ValidationError(
            f"gate parameters must satisfy |a|^2 + |b|^2 = 1, got {norm!r} (defect {norm - 1.0:+.3e})"
        )
    phase = cmath.exp(1j * phi)
    return as_gate(phase * np.array([[a, b], [-b.conjugate(), a.conjugate()]]))


def inverse(g) -> np.ndarray:
    """Conjugate transpose of a unitary gate."""
    g = as_gate(g)
    return _frozen(g.conj().T)


def tensor_left(g) -> np.ndarray:
    """``I (x) G``: ``G`` acts on the second qubit."""
    return _frozen(np.kron(IDENTITY, as_gate(g)))


def tensor_right(g) -> np.ndarray:
    """``G (x) I``: ``G`` acts on the first qubit."""
    return _frozen(np.kron(as_gate(g), IDENTITY))


def apply4(m, s) -> np.ndarray:
    m = np.asarray(m, dtype=np.complex128)
    s = np.asarray(s, dtype=np.complex128)
    if m.shape != (4, 4) or s.shape != (4,):
        raise ValidationError(f"apply4 expects (4, 4) and (4,), got {m.shape} and {s.shape}")
    if not is_unitary(m):
        raise ValidationError("two-qubit operator is not unitary")
    norm = float(np.vdot(s, s).real)
    if abs(norm - 1.0) > NORM_TOL:
        raise ValidationError(f"state vector is not normalized (norm^2 = {norm!r})")
    return _frozen(m @ s)


def equal_up_to_phase(u, v, tol: float = NORM_TOL) -> bool:
    """Compare two state vectors after aligning their global phase."""
    u = np.asarray(u, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    if u.shape != v.shape:
        return False
    overlap = np.vdot(v, u)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return bool(np.max(np.abs(u - phase * v)) <= tol)


@dataclass(frozen=True)
class KrausPair:
    e0: np.ndarray
    e1: np.ndarray
    eta: float

    def completeness_defect(self) -> float:
        total = self.e0.conj().T @ self.e0 + self.e1.conj().T @ self.e1
        return float(np.max(np.abs(total - np.eye(2))))


def make_amplitude_damping_kraus(eta: float) -> KrausPair:
    """Kraus pair for losing the excitation with probability ``eta``."""
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValidationError(f"damping factor eta must lie in [0, 1], got {eta!r}")
    e0 = _frozen([[1, 0], [0, math.sqrt(1.0 - eta)]])
    e1 = _frozen([[0, math.sqrt(eta)], [0, 0]])
    return KrausPair(e0, e1, eta)


def check_density_matrix(rho, tol: float = NORM_TOL) -> np.ndarray:
    rho = np.array(rho, dtype=np.complex128)
    if rho.shape != (2, 2):
        raise ValidationError(f"density matrix must be 2x2, got shape {rho.shape}")
    _check_finite(rho, "density matrix")
    if np.max(np.abs(rho - rho.conj().T)) > UNITARY_TOL:
        raise ValidationError("density matrix is not Hermitian")
    trace = float(np.trace(rho).real)
    if abs(trace - 1.0) > tol:
        raise ValidationError(f"density matrix trace is {trace!r}, expected 1")
    if np.min(np.linalg.eigvalsh(rho)) < -tol:
        raise ValidationError("density matrix has a negative eigenvalue")
    rho.flags.writeable = False
    return rho


def density(state) -> np.ndarray:
    """``|psi><psi|`` for an amplitude pair."""
    s = as_state(state)
    return _frozen(np.outer(s, s.conj()))


def apply_operator_sum(rho, k: KrausPair) -> np.ndarray:
    """``E0 rho E0^dagger + E1 rho E1^dagger``."""
    rho = check_density_matrix(rho)
    if k.completeness_defect() > UNITARY_TOL:
        raise ValidationError(
            f"Kraus operators are incomplete (max |sum E^dagger E - I| = {k.completeness_defect():.3e})"
        )
    out = k.e0 @ rho @ k.e0.conj().T + k.e1 @ rho @ k.e1.conj().T
    return check_density_matrix(out)
