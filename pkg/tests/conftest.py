import cmath
import math

import numpy as np
import pytest
from hypothesis import strategies as st

from qent import linalg
from qent.entanglement import EprMatrix, Side


def joint_conditional(epr: EprMatrix, gates_a, gates_b, measured: Side, outcome: int):
    """Synchronous oracle: apply every gate to the 4-vector, project, read off the partner.

    Returns (probability of ``outcome`` on the measured side, partner state).
    """
    s = epr.vector
    for g in gates_a:
        s = linalg.apply4(linalg.tensor_right(g), s)
    for g in gates_b:
        s = linalg.apply4(linalg.tensor_left(g), s)
    m = s.reshape(2, 2)
    v = m[outcome] if measured is Side.A else m[:, outcome]
    p = float(np.vdot(v, v).real)
    return p, v / math.sqrt(p)


def su2_gate(phi, theta, psi, chi):
    a = cmath.exp(1j * psi) * math.cos(theta)
    b = cmath.exp(1j * chi) * math.sin(theta)
    return linalg.make_gate(phi, a, b)


angles = st.floats(min_value=-math.pi, max_value=math.pi, allow_nan=False)
gates = st.builds(su2_gate, angles, angles, angles, angles)


def _epr(v):
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    return EprMatrix.from_vector(v)


complexes = st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False)
entangled_eprs = (
    st.lists(complexes, min_size=4, max_size=4)
    .filter(lambda v: np.linalg.norm(v) > 0.1)
    .map(_epr)
    .filter(lambda m: abs(m.determinant) > 1e-3)
)


@pytest.fixture
def rng():
    from qent.rng import RandomSource

    return RandomSource(12345)


# -- acceptance reporting -------------------------------------------------------

_ACCEPTANCE: dict = {}
_START = [0.0]


def pytest_sessionstart(session):
    import time

    _START[0] = time.perf_counter()


@pytest.fixture
def criterion():
    """Record one acceptance line; it reads FAIL unless the test reaches ``passed``."""

    class Line:
        def __call__(self, number, title):
            self.key = number
            _ACCEPTANCE[number] = ["FAIL", title, ""]
            return self

        def note(self, text):
            _ACCEPTANCE[self.key][2] = text

        def passed(self):
            _ACCEPTANCE[self.key][0] = "PASS"

    return Line()


def pytest_terminal_summary(terminalreporter):
    import time

    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title, note = _ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {status}  {title}" + (f"  [{note}]" if note else ""))
    tr.write_line(f"suite wall time: {time.perf_counter() - _START[0]:.1f} s (target < 300 s)")
