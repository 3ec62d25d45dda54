import math

import numpy as np
import pytest

from qent import linalg
from qent.errors import ValidationError
from qent.noise import (
    AmplitudeDampingChannel,
    ChannelPipeline,
    DampingTally,
    EveTally,
    InterceptResendEavesdropper,
    damp,
    eavesdrop,
    ensemble_density,
    run_pipeline,
)
from qent.register import QuantumRegister
from qent.rng import RandomSource

R = 1 / math.sqrt(2)
N = 100_000


def filled(state, n=N):
    return QuantumRegister.from_arrays(np.full(n, state[0], complex), np.full(n, state[1], complex))


def random_bits_register(n, seed):
    bits = RandomSource(seed).bits(n)
    return QuantumRegister.from_arrays((bits == 0).astype(complex), (bits == 1).astype(complex)), bits


class TestEavesdrop:
    def test_rate_zero_unchanged(self, rng):
        reg = filled((0.6, 0.8j), 100)
        before = reg.copy(register_id=reg.register_id)
        _, bits = eavesdrop(reg, 0.0, rng)
        assert reg == before and (bits == -1).all()

    def test_rate_one_on_one(self, rng):
        reg = filled((0, 1), 10)
        _, bits = eavesdrop(reg, 1.0, rng)
        assert (bits == 1).all()
        assert all(np.array_equal(reg.state(i), [0, 1]) for i in range(10))

    def test_rate_one_on_plus(self):
        reg = filled((R, R))
        _, bits = eavesdrop(reg, 1.0, RandomSource(11))
        assert abs((bits == 0).mean() - 0.5) <= 0.005
        ones = reg.betas
        assert np.array_equal(np.abs(ones), bits.astype(float))

    def test_selection_is_bernoulli(self):
        tally = EveTally()
        eavesdrop(filled((1, 0)), 0.3, RandomSource(2), tally=tally)
        assert abs(tally.intercepted / N - 0.3) <= 3 * math.sqrt(0.21 / N)

    def test_lost_qubit_refreshed(self):
        reg = filled((0, 1), N)
        reg.mark_lost_where(np.ones(N, bool))
        tally = EveTally()
        _, bits = eavesdrop(reg, 1.0, RandomSource(4), tally=tally)
        assert not reg.lost_mask.any()
        assert tally.guessed == N and tally.refreshed == N
        assert abs(bits.mean() - 0.5) <= 3 * math.sqrt(0.25 / N)

    @pytest.mark.parametrize("rate", [0.0, 0.3, 1.0])
    def test_transparent_on_basis_states(self, rate):
        reg, bits = random_bits_register(10_000, 8)
        eavesdrop(reg, rate, RandomSource(9))
        assert np.array_equal(np.abs(reg.betas), bits.astype(float))

    def test_bad_rate(self, rng):
        with pytest.raises(ValidationError):
            eavesdrop(filled((1, 0), 1), 1.5, rng)

    def test_default_rate(self):
        assert InterceptResendEavesdropper().rate == 0.05


class TestDamp:
    def test_eta_zero_unchanged(self, rng):
        reg = filled((0.6, 0.8j), 100)
        before = reg.copy(register_id=reg.register_id)
        damp(reg, 0.0, rng)
        assert reg == before

    @pytest.mark.parametrize("eta", [0.3, 1.0])
    def test_zero_never_lost(self, rng, eta):
        reg = filled((1, 0), 1000)
        damp(reg, eta, rng)
        assert not reg.lost_mask.any()
        assert np.array_equal(reg.alphas, np.ones(1000))

    @pytest.mark.parametrize(
        "state",
        [(1, 0), (0, 1), (R, R), (math.cos(math.pi / 6), math.sin(math.pi / 6))],
        ids=["zero", "one", "plus", "pi6"],
    )
    def test_loss_law(self, state):
        eta = 0.5
        p = eta * abs(state[1]) ** 2
        tally = DampingTally()
        damp(filled(state), eta, RandomSource(21), tally=tally)
        assert tally.seen == N
        assert abs(tally.lost / N - p) <= 3 * math.sqrt(p * (1 - p) / N) + 1e-12

    def test_plus_at_half(self):
        reg = filled((R, R))
        damp(reg, 0.5, RandomSource(1))
        assert abs(reg.lost_mask.mean() - 0.25) <= 0.005

    def test_survivor_reweighting(self, rng):
        reg = filled((R, R), 200)
        damp(reg, 0.5, rng)
        live = ~reg.lost_mask
        expect = np.array([1, math.sqrt(0.5)]) / math.sqrt(1.5)
        assert np.allclose(np.stack([reg.alphas, reg.betas], 1)[live], expect)

    def test_trajectory_matches_operator_sum(self):
        reg = filled((R, R))
        damp(reg, 0.5, RandomSource(31))
        oracle = linalg.apply_operator_sum(linalg.density([R, R]), linalg.make_amplitude_damping_kraus(0.5))
        assert np.max(np.abs(ensemble_density(reg) - oracle)) <= 0.01

    def test_lost_stays_lost(self, rng):
        reg = filled((0, 1), 10)
        reg.mark_lost(3)
        damp(reg, 0.0, rng)
        assert reg.is_lost(3) and len(reg) == 10

    def test_erasure_model_ignores_state(self):
        tally = DampingTally()
        damp(filled((1, 0)), 0.4, RandomSource(5), model="erasure", tally=tally)
        assert abs(tally.lost / N - 0.4) <= 3 * math.sqrt(0.24 / N)

    def test_erasure_keeps_survivors(self, rng):
        reg = filled((R, R), 200)
        damp(reg, 0.5, rng, model="erasure")
        assert np.allclose(np.stack([reg.alphas, reg.betas], 1)[~reg.lost_mask], [R, R])

    def test_bad_inputs(self, rng):
        with pytest.raises(ValidationError):
            damp(filled((1, 0), 1), -0.1, rng)
        with pytest.raises(ValidationError):
            AmplitudeDampingChannel(0.5, model="gaussian")


class TestPipeline:
    def test_empty_is_identity(self, rng):
        reg = filled((0.6, 0.8), 10)
        before = reg.copy(register_id=reg.register_id)
        assert run_pipeline([], reg, rng) == before

    def test_named_orders(self):
        assert ChannelPipeline.control(0.1).names == ["damp"]
        assert ChannelPipeline.eve_near_alice(0.1, 0.5).names == ["eavesdrop", "damp"]
        assert ChannelPipeline.eve_near_bob(0.1, 0.5).names == ["damp", "eavesdrop"]

    def test_rejects_non_stage(self):
        with pytest.raises(ValidationError):
            ChannelPipeline([object()])

    @pytest.mark.parametrize("model", ["kraus", "erasure"])
    def test_damp_then_eve_refreshes_everything(self, model):
        reg, _ = random_bits_register(N, 3)
        reg.apply_gate_where(linalg.HADAMARD, np.arange(N) % 2 == 0)
        ChannelPipeline.eve_near_bob(1.0, 1.0, model=model).run(reg, RandomSource(4))
        assert not reg.lost_mask.any()
        amps = np.stack([reg.alphas, reg.betas], 1)
        assert np.all((np.abs(amps) == 0) | (np.abs(amps) == 1))

    def test_eve_then_damp_kraus_loses_the_ones(self):
        reg = filled((R, R))
        p = ChannelPipeline.eve_near_alice(1.0, 1.0, model="kraus")
        p.run(reg, RandomSource(6))
        eve_bits = p.stages[0].last_bits
        assert np.array_equal(reg.lost_mask, eve_bits == 1)
        assert abs(reg.lost_mask.mean() - (eve_bits == 1).mean()) <= 0.005

    def test_eve_then_damp_erasure_loses_all(self):
        reg = filled((R, R))
        ChannelPipeline.eve_near_alice(1.0, 1.0, model="erasure").run(reg, RandomSource(6))
        assert reg.lost_mask.all()

    def test_length_preserved(self, rng):
        reg = filled((R, R), 500)
        ChannelPipeline.eve_near_bob(0.7, 0.4).run(reg, rng)
        assert len(reg) == 500

    def test_stage_order_respected(self, rng):
        seen = []

        class Probe:
            def __init__(self, name):
                self.name = name

            def apply(self, reg, rng):
                seen.append(self.name)
                return reg

        run_pipeline([Probe("a"), Probe("b"), Probe("c")], filled((1, 0), 1), rng)
        assert seen == ["a", "b", "c"]
