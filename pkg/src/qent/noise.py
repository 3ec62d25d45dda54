"""Channel noise: intercept-resend eavesdropping and amplitude damping.

Stages act on a :class:`~qent.register.QuantumRegister` in place and return
it.  Lost qubits stay in their slot with the lost flag set, so a stage never
changes register length.

Two damping models are available:

``kraus``
    Trajectory sampling of the amplitude-damping operator sum.  A qubit is
    lost with probability ``eta * |beta|^2``; survivors are reweighted to
    ``(alpha, sqrt(1 - eta) * beta)`` and renormalized.
``erasure``
    Every live qubit is lost with probability ``eta`` regardless of its
    state; survivors are untouched.  ``eta`` is then literally the fraction
    of qubits affected, which is what the experiment series sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, runtime_checkable

import numpy as np

from .errors import ValidationError
from .register import QuantumRegister
from .rng import RandomSource

DAMPING_MODELS = ("kraus", "erasure")


def _check_unit(value: float, what: str) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise ValidationError(f"{what} must lie in [0, 1], got {value!r}")
    return value


@runtime_checkable
class NoiseStage(Protocol):
    name: str

    def apply(self, reg: QuantumRegister, rng: RandomSource) -> QuantumRegister: ...


@dataclass
class EveTally:
    intercepted: int = 0
    measured: int = 0
    guessed: int = 0
    refreshed: int = 0
    ones: int = 0

    def as_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class DampingTally:
    seen: int = 0
    lost: int = 0

    def as_dict(self) -> dict:
        return dict(vars(self))


def eavesdrop(reg: QuantumRegister, rate: float, rng: RandomSource, *, tally: EveTally | None = None):
    """Intercept-resend in the rectilinear basis.

    Each qubit is selected with probability ``rate``.  A selected live qubit
    is measured and resent as the matching basis state; a selected lost qubit
    gives Eve a uniform random bit and is resent as that basis state.

    Returns ``(reg, eve_bits)`` where ``eve_bits`` holds Eve's bit per slot
    and ``-1`` where she did not intercept.
    """
    rate = _check_unit(rate, "eavesdropping rate")
    n = len(reg)
    selected = rng.random_array(n) < rate
    lost = reg.lost_mask
    live_sel = selected & ~lost
    lost_sel = selected & lost

    eve_bits = np.full(n, -1, dtype=np.int8)
    # measurement collapses to |bit>, which is the fresh resend
    eve_bits[live_sel] = reg.measure_where(live_sel, rng)
    guesses = rng.bits(int(lost_sel.sum())).astype(np.int8)
    eve_bits[lost_sel] = guesses
    reg.reset_where(lost_sel, guesses)

    if tally is not None:
        tally.intercepted += int(selected.sum())
        tally.measured += int(live_sel.sum())
        tally.guessed += int(lost_sel.sum())
        tally.refreshed += int(lost_sel.sum())
        tally.ones += int((eve_bits == 1).sum())
    return reg, eve_bits


def damp(
    reg: QuantumRegister,
    eta: float,
    rng: RandomSource,
    *,
    model: str = "kraus",
    tally: DampingTally | None = None,
) -> QuantumRegister:
    """Amplitude damping on every live qubit; one uniform draw per slot."""
    eta = _check_unit(eta, "damping factor eta")
    if model not in DAMPING_MODELS:
        raise ValidationError(f"unknown damping model {model!r}; expected one of {DAMPING_MODELS}")
    n = len(reg)
    draws = rng.random_array(n)
    live = ~reg._lost
    amps = reg._amps
    if model == "kraus":
        p1 = np.abs(amps[:, 1]) ** 2
        jump = live & (draws < eta * p1)
        keep = live & ~jump
        if eta > 0.0 and keep.any():
            a = amps[keep, 0]
            b = amps[keep, 1] * math.sqrt(1.0 - eta)
            norm = np.sqrt(np.abs(a) ** 2 + np.abs(b) ** 2)
            amps[keep, 0] = a / norm
            amps[keep, 1] = b / norm
    else:
        jump = live & (draws < eta)
    reg._lost |= jump
    if tally is not None:
        tally.seen += int(live.sum())
        tally.lost += int(jump.sum())
    return reg


class InterceptResendEavesdropper:
    name = "eavesdrop"

    def __init__(self, rate: float = 0.05):
        self.rate = _check_unit(rate, "eavesdropping rate")
        self.tally = EveTally()
        self.last_bits: np.ndarray | None = None

    def apply(self, reg: QuantumRegister, rng: RandomSource) -> QuantumRegister:
        reg, self.last_bits = eavesdrop(reg, self.rate, rng, tally=self.tally)
        return reg

    def __repr__(self):
        return f"InterceptResendEavesdropper(rate={self.rate})"


class AmplitudeDampingChannel:
    name = "damp"

    def __init__(self, eta: float, model: str = "kraus"):
        self.eta = _check_unit(eta, "damping factor eta")
        if model not in DAMPING_MODELS:
            raise ValidationError(f"unknown damping model {model!r}; expected one of {DAMPING_MODELS}")
        self.model = model
        self.tally = DampingTally()

    def apply(self, reg: QuantumRegister, rng: RandomSource) -> QuantumRegister:
        return damp(reg, self.eta, rng, model=self.model, tally=self.tally)

    def __repr__(self):
        return f"AmplitudeDampingChannel(eta={self.eta}, model={self.model!r})"


@dataclass
class ChannelPipeline:
    stages: list = field(default_factory=list)

    def __post_init__(self):
        self.stages = list(self.stages)
        for s in self.stages:
            if not isinstance(s, NoiseStage):
                raise ValidationError(f"{s!r} is not a noise stage (needs name and apply)")

    def run(self, reg: QuantumRegister, rng: RandomSource) -> QuantumRegister:
        for stage in self.stages:
            reg = stage.apply(reg, rng)
        return reg

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.stages]

    @classmethod
    def control(cls, eta: float, *, model: str = "kraus") -> "ChannelPipeline":
        return cls([AmplitudeDampingChannel(eta, model)])

    @classmethod
    def eve_near_alice(cls, eta: float, rate: float, *, model: str = "kraus") -> "ChannelPipeline":
        return cls([InterceptResendEavesdropper(rate), AmplitudeDampingChannel(eta, model)])

    @classmethod
    def eve_near_bob(cls, eta: float, rate: float, *, model: str = "kraus") -> "ChannelPipeline":
        return cls([AmplitudeDampingChannel(eta, model), InterceptResendEavesdropper(rate)])


def run_pipeline(p: ChannelPipeline | Iterable, reg: QuantumRegister, rng: RandomSource) -> QuantumRegister:
    if not isinstance(p, ChannelPipeline):
        p = ChannelPipeline(list(p))
    return p.run(reg, rng)


def ensemble_density(reg: QuantumRegister) -> np.ndarray:
    """Average density matrix over slots, with lost slots counted as ``|0><0|``.

    The damping jump operator maps every state onto ``|0>``, so this is the
    quantity that trajectory sampling should reproduce on average.
    """
    if len(reg) == 0:
        raise ValidationError("ensemble of an empty register is undefined")
    amps = reg._amps.copy()
    lost = reg._lost
    amps[lost] = (1.0, 0.0)
    rho = np.einsum("ni,nj->ij", amps, amps.conj()) / len(reg)
    return rho
