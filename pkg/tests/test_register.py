import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qent import linalg
from qent.errors import DecodeError, QubitLostError, UnrepresentableOperationError, ValidationError
from qent.register import Qubit, QuantumRegister, register_of
from qent.rng import RandomSource, derive_seed

from conftest import gates

R = 1 / math.sqrt(2)


def band(p, n):
    return 3 * math.sqrt(p * (1 - p) / n)


class TestGates:
    def test_x_flips(self):
        reg = QuantumRegister(1)
        reg.apply_gate(linalg.PAULI_X, 0)
        assert np.array_equal(reg.state(0), [0, 1])

    def test_hadamard(self):
        reg = QuantumRegister(1).apply_gate(linalg.HADAMARD, 0)
        assert np.allclose(reg.state(0), [R, R])

    def test_ry_pi_3(self):
        reg = QuantumRegister(1).apply_gate(linalg.ry(math.pi / 3), 0)
        assert np.allclose(reg.state(0), [math.cos(math.pi / 3), math.sin(math.pi / 3)], atol=1e-15)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            QuantumRegister(2).apply_gate(linalg.PAULI_X, 2)

    def test_bool_position(self):
        with pytest.raises(TypeError):
            QuantumRegister(2).apply_gate(linalg.PAULI_X, True)

    def test_lost_qubit(self):
        reg = QuantumRegister(1)
        reg.mark_lost(0)
        with pytest.raises(QubitLostError):
            reg.apply_gate(linalg.PAULI_X, 0)

    def test_non_unitary(self):
        with pytest.raises(ValidationError):
            QuantumRegister(1).apply_gate([[1, 0], [0, 2]], 0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(gates, min_size=1, max_size=100))
    def test_norm_after_many_gates(self, gs):
        reg = QuantumRegister(1)
        for g in gs:
            reg.apply_gate(g, 0)
        s = reg.state(0)
        assert abs(np.vdot(s, s).real - 1) < 1e-9

    def test_controlled_on_basis_control(self):
        reg = register_of([(0, 1), (1, 0), (1, 0)])
        reg.apply_controlled(linalg.PAULI_X, 0, 1)
        assert np.array_equal(reg.state(1), [0, 1])
        reg.apply_controlled(linalg.PAULI_X, [0, 1], 2)
        assert np.array_equal(reg.state(2), [0, 1])
        reg.apply_controlled(linalg.PAULI_X, [0, 2], 1)
        assert np.array_equal(reg.state(1), [1, 0])

    def test_controlled_on_superposed_control(self):
        reg = register_of([(R, R), (1, 0)])
        with pytest.raises(UnrepresentableOperationError):
            reg.apply_controlled(linalg.PAULI_X, 0, 1)


class TestMeasure:
    def test_zero_and_one(self, rng):
        reg = register_of([(1, 0), (0, 1)])
        assert reg.measure(0, rng) == 0 and reg.measure(1, rng) == 1

    def test_balanced_frequency(self):
        n = 100_000
        reg = QuantumRegister.from_arrays(np.full(n, R), np.full(n, R))
        bits = reg.measure_where(np.ones(n, bool), RandomSource(1))
        assert abs((bits == 0).mean() - 0.5) <= 0.005

    def test_scalar_and_vector_paths_agree(self):
        reg1 = QuantumRegister.from_arrays(np.full(50, 0.6), np.full(50, 0.8j))
        reg2 = QuantumRegister.from_arrays(np.full(50, 0.6), np.full(50, 0.8j))
        r1, r2 = RandomSource(3), RandomSource(3)
        scalar = [reg1.measure(i, r1) for i in range(50)]
        assert list(reg2.measure_where(np.ones(50, bool), r2)) == scalar

    @pytest.mark.parametrize("state", [(1, 0), (0.6, 0.8), (R, 1j * R), (math.cos(1), math.sin(1))])
    def test_measurement_law(self, state):
        n = 100_000
        reg = QuantumRegister.from_arrays(np.full(n, state[0]), np.full(n, state[1]))
        p0 = abs(state[0]) ** 2
        freq = (reg.measure_where(np.ones(n, bool), RandomSource(9)) == 0).mean()
        assert abs(freq - p0) <= band(p0, n) + 1e-12

    def test_collapse_idempotent(self, rng):
        reg = register_of([(0.6, 0.8)] * 200)
        first = [reg.measure(i, rng) for i in range(200)]
        assert [reg.measure(i, rng) for i in range(200)] == first

    def test_lost_has_no_outcome(self, rng):
        reg = QuantumRegister(1)
        reg.mark_lost(0)
        with pytest.raises(QubitLostError, match="no defined"):
            reg.measure(0, rng)

    def test_determinism(self):
        def transcript(seed):
            reg = QuantumRegister.from_arrays(np.full(100, 0.6), np.full(100, 0.8))
            r = RandomSource(seed)
            return [reg.measure(i, r) for i in range(100)]

        assert transcript(5) == transcript(5)
        assert transcript(5) != transcript(6)


class TestMeasureInBasis:
    def test_eigenstate(self, rng):
        t = math.pi / 6
        for _ in range(100):
            reg = register_of([(math.cos(t), math.sin(t))])
            assert reg.measure_in_basis(0, t, rng) == 0
            assert np.allclose(reg.state(0), [math.cos(t), math.sin(t)])

    def test_zero_in_pi_4(self):
        rng = RandomSource(2)
        n = 100_000
        zeros = sum(QuantumRegister(1).measure_in_basis(0, math.pi / 4, rng) == 0 for _ in range(n))
        assert abs(zeros / n - 0.5) <= 0.005

    def test_theta_zero_is_measure(self):
        a, b = register_of([(0.6, 0.8)] * 20), register_of([(0.6, 0.8)] * 20)
        r1, r2 = RandomSource(4), RandomSource(4)
        assert [a.measure_in_basis(i, 0.0, r1) for i in range(20)] == [b.measure(i, r2) for i in range(20)]
        assert a == b.copy(register_id=a.register_id)

    def test_repeated_same_basis_consistent(self, rng):
        reg = register_of([(0.6, 0.8)] * 100)
        first = [reg.measure_in_basis(i, 0.4, rng) for i in range(100)]
        assert [reg.measure_in_basis(i, 0.4, rng) for i in range(100)] == first


class TestSerialization:
    def test_empty(self):
        reg = QuantumRegister(0)
        assert QuantumRegister.deserialize(reg.serialize()) == reg

    def test_lost_flag_roundtrip(self):
        reg = register_of([(1, 0), (0.6, 0.8j), (R, -R)])
        reg.mark_lost(1)
        back = QuantumRegister.deserialize(reg.serialize())
        assert back == reg and back.is_lost(1)

    def test_bitwise_amplitudes(self):
        reg = register_of([(0.6, 0.8j)])
        back = QuantumRegister.deserialize(reg.serialize())
        for x, y in zip(reg.qubit(0).state, back.qubit(0).state):
            assert struct.pack("<dd", x.real, x.imag) == struct.pack("<dd", y.real, y.imag)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(gates, min_size=0, max_size=8), st.lists(st.booleans(), min_size=8, max_size=8))
    def test_random_roundtrip(self, gs, lost):
        reg = QuantumRegister(8)
        for i, g in enumerate(gs):
            reg.apply_gate(g, i)
        for i, flag in enumerate(lost):
            if flag:
                reg.mark_lost(i)
        assert QuantumRegister.deserialize(reg.serialize()) == reg

    def test_malformed_has_offset(self):
        with pytest.raises(DecodeError) as e:
            QuantumRegister.deserialize(b'{"registerId": "x", "qubits": [}')
        assert e.value.offset is not None

    def test_schema_error_names_field(self):
        with pytest.raises(DecodeError) as e:
            QuantumRegister.deserialize(b'{"registerId": "x", "qubits": [{"alpha": [1, 0], "beta": [0, 0]}], "entanglements": []}')
        assert e.value.field == "payload.qubits[0].lost"


class TestConstruction:
    def test_unnormalized_rejected(self):
        with pytest.raises(ValidationError, match="normalized"):
            QuantumRegister.from_qubits([Qubit(1, 1)])

    def test_lost_qubit_may_be_unnormalized(self):
        reg = QuantumRegister.from_qubits([Qubit(0, 0, lost=True)])
        assert reg.is_lost(0)

    def test_reset(self):
        reg = QuantumRegister(2)
        reg.mark_lost(0)
        reg.reset(0, 1)
        assert not reg.is_lost(0) and np.array_equal(reg.state(0), [0, 1])


class TestRandomSource:
    def test_same_seed_same_stream(self):
        assert RandomSource(7).random_array(10).tolist() == RandomSource(7).random_array(10).tolist()

    def test_derive_seed_stable(self):
        assert derive_seed(1, 2) == derive_seed(1, 2) != derive_seed(1, 3)

    def test_seed_range(self):
        with pytest.raises(ValidationError):
            RandomSource(-1)
        with pytest.raises(ValidationError):
            RandomSource(2**64)
