"""BB84 key exchange over a noisy channel, with oracle-side sifting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ValidationError
from .noise import ChannelPipeline
from .register import QuantumRegister
from .rng import RandomSource

RECTILINEAR = 0
DIAGONAL = 1
BASES = {"rectilinear": RECTILINEAR, "diagonal": DIAGONAL}


def _basis_codes(basis_set) -> np.ndarray:
    try:
        codes = sorted({BASES[b] for b in basis_set})
    except KeyError as exc:
        raise ValidationError(f"unknown basis {exc.args[0]!r}; expected one of {sorted(BASES)}") from None
    if not codes:
        raise ValidationError("basis set must not be empty")
    return np.array(codes, dtype=np.int8)


def _draw_bases(n: int, basis_set, rng: RandomSource) -> np.ndarray:
    codes = _basis_codes(basis_set)
    if len(codes) == 1:
        return np.full(n, codes[0], dtype=np.int8)
    return codes[rng.bits(n)]


@dataclass
class Bb84Config:
    n: int
    basis_set: tuple = ("rectilinear", "diagonal")
    pipeline: ChannelPipeline = field(default_factory=ChannelPipeline)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"qubits per run must be a positive integer, got {self.n!r}")
        self.n = int(self.n)
        self.basis_set = tuple(self.basis_set)
        _basis_codes(self.basis_set)


@dataclass(frozen=True)
class RunStats:
    sent: int
    received: int
    lost_at_bob: int
    sifted: int
    matched: int
    efficiency: float
    sifted_error_rate: float
    attenuation_db: float

    def as_dict(self) -> dict:
        return dict(vars(self))


def alice_prepare(cfg: Bb84Config, rng: RandomSource):
    """Random bits and bases encoded as ``|0>``, then X for bit 1, then H for diagonal."""
    bits = rng.bits(cfg.n)
    bases = _draw_bases(cfg.n, cfg.basis_set, rng)
    reg = QuantumRegister(cfg.n)
    reg.apply_gate_where(linalg.PAULI_X, bits == 1)
    reg.apply_gate_where(linalg.HADAMARD, bases == DIAGONAL)
    return bits, bases, reg


def bob_measure(reg: QuantumRegister, rng: RandomSource, basis_set=("rectilinear", "diagonal")):
    """Measure every slot in a random basis.

    Returns ``(bases, bits, erasures)``; erased slots carry bit ``-1``.
    """
    n = len(reg)
    bases = _draw_bases(n, basis_set, rng)
    erasures = reg.lost_mask
    live = ~erasures
    reg.apply_gate_where(linalg.HADAMARD, live & (bases == DIAGONAL))
    bits = np.full(n, -1, dtype=np.int8)
    bits[live] = reg.measure_where(live, rng)
    return bases, bits, erasures


def sift(alice_bases, bob_bases, erasures) -> np.ndarray:
    alice_bases = np.asarray(alice_bases)
    bob_bases = np.asarray(bob_bases)
    erasures = np.asarray(erasures, dtype=bool)
    if not (alice_bases.shape == bob_bases.shape == erasures.shape):
        raise ValidationError(
            f"sifting needs equal-length inputs, got {alice_bases.shape}, {bob_bases.shape}, {erasures.shape}"
        )
    return np.flatnonzero((alice_bases == bob_bases) & ~erasures)


def attenuation_from_counts(received: int, sent: int) -> float:
    """``-10 log10(received / sent)``; infinite when nothing arrived."""
    if sent <= 0:
        raise ValidationError("sent count must be positive")
    if received <= 0:
        return math.inf
    return -10.0 * math.log10(received / sent) + 0.0


def run_bb84(cfg: Bb84Config) -> RunStats:
    rng = RandomSource(cfg.seed)
    a_bits, a_bases, reg = alice_prepare(cfg, rng)
    cfg.pipeline.run(reg, rng)
    b_bases, b_bits, erasures = bob_measure(reg, rng, cfg.basis_set)
    pos = sift(a_bases, b_bases, erasures)

    sent = cfg.n
    lost = int(erasures.sum())
    received = sent - lost
    sifted = len(pos)
    matched = int((a_bits[pos] == b_bits[pos]).sum())
    return RunStats(
        sent=sent,
        received=received,
        lost_at_bob=lost,
        sifted=sifted,
        matched=matched,
        efficiency=matched / sent,
        sifted_error_rate=1.0 - matched / sifted if sifted else 0.0,
        attenuation_db=attenuation_from_counts(received, sent),
    )
