"""Experiment series, summary statistics, dB conversion and the pair demo."""

from __future__ import annotations

import contextlib
import csv
import gc
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import linalg
from .bb84 import Bb84Config, run_bb84
from .entanglement import PHI_PLUS, EprMatrix, create_entangled_pairs
from .errors import ValidationError
from .noise import ChannelPipeline
from .rng import RandomSource, derive_seed

SERIES = ("control", "eve_alice", "eve_bob")
DEFAULT_EVE_RATES = (0.1, 0.2, 0.3, 0.4, 0.5, 1.0)
RAW_COLUMNS = (
    "series", "eta", "eve_rate", "trial_index", "seed", "sent", "received",
    "sifted", "matched", "efficiency", "sifted_error_rate", "attenuation_db",
)
SUMMARY_COLUMNS = (
    "series", "eve_rate", "eta", "n", "mean", "stddev", "min", "max",
    "fit_c0", "fit_c1", "fit_c2",
)


def eta_grid(step: float = 0.05) -> list[float]:
    if not 0.0 < step <= 1.0:
        raise ValidationError(f"eta step must lie in (0, 1], got {step!r}")
    k = round(1.0 / step)
    if abs(k * step - 1.0) > 1e-9:
        raise ValidationError(f"eta step {step!r} does not divide 1 evenly")
    return [round(i / k, 12) for i in range(k + 1)]


@dataclass
class SeriesConfig:
    series: str = "control"
    eta_values: Sequence[float] = field(default_factory=eta_grid)
    eve_rates: Sequence[float] | None = None
    trials_per_point: int = 100
    qubits_per_trial: int = 1000
    master_seed: int = 0
    damping_model: str = "erasure"

    def __post_init__(self):
        if self.series not in SERIES:
            raise ValidationError(f"unknown series {self.series!r}; expected one of {SERIES}")
        if self.eve_rates is None:
            self.eve_rates = () if self.series == "control" else DEFAULT_EVE_RATES
        self.eta_values = tuple(float(x) for x in self.eta_values)
        self.eve_rates = tuple(float(x) for x in self.eve_rates)
        for x in self.eta_values + self.eve_rates:
            if not 0.0 <= x <= 1.0:
                raise ValidationError(f"rates and damping factors must lie in [0, 1], got {x!r}")
        if not self.eta_values:
            raise ValidationError("at least one eta value is required")
        if self.series != "control" and not self.eve_rates:
            raise ValidationError(f"series {self.series} needs at least one eavesdropping rate")
        if self.trials_per_point < 1 or self.qubits_per_trial < 1:
            raise ValidationError("trials per point and qubits per trial must be at least 1")

    def points(self) -> list[tuple[float, float]]:
        """Grid of ``(eve_rate, eta)``; control uses rate 0."""
        rates = self.eve_rates if self.series != "control" else (0.0,)
        return [(r, eta) for r in rates for eta in self.eta_values]


def build_pipeline(series: str, eta: float, rate: float, model: str = "erasure") -> ChannelPipeline:
    if series == "control":
        return ChannelPipeline.control(eta, model=model)
    if series == "eve_alice":
        return ChannelPipeline.eve_near_alice(eta, rate, model=model)
    if series == "eve_bob":
        return ChannelPipeline.eve_near_bob(eta, rate, model=model)
    raise ValidationError(f"unknown series {series!r}")


def run_series(cfg: SeriesConfig) -> list[dict]:
    """One row per trial, in (eve_rate, eta, trial) order.

    Trial ``k`` (counted across the whole grid) is seeded with
    ``derive_seed(master_seed, k)``, so rows are reproducible one by one.
    """
    rows = []
    k = 0
    for rate, eta in cfg.points():
        for t in range(cfg.trials_per_point):
            seed = derive_seed(cfg.master_seed, k)
            k += 1
            stats = run_bb84(Bb84Config(
                cfg.qubits_per_trial,
                pipeline=build_pipeline(cfg.series, eta, rate, cfg.damping_model),
                seed=seed,
            ))
            rows.append({
                "series": cfg.series,
                "eta": eta,
                "eve_rate": rate,
                "trial_index": t,
                "seed": seed,
                "sent": stats.sent,
                "received": stats.received,
                "sifted": stats.sifted,
                "matched": stats.matched,
                "efficiency": stats.efficiency,
                "sifted_error_rate": stats.sifted_error_rate,
                "attenuation_db": stats.attenuation_db,
            })
    return rows


@dataclass(frozen=True)
class SummaryRow:
    series: str
    eve_rate: float
    eta: float
    n: int
    mean: float
    stddev: float
    min: float
    max: float
    fit: tuple  # (c0, c1, c2) of c0 + c1*eta + c2*eta^2 for the whole curve

    def as_dict(self) -> dict:
        c0, c1, c2 = self.fit
        d = {k: getattr(self, k) for k in SUMMARY_COLUMNS[:8]}
        d.update(fit_c0=c0, fit_c1=c1, fit_c2=c2)
        return d


def fit_curve(x: Sequence[float], y: Sequence[float]) -> tuple:
    """Least-squares quadratic; a line through two points; a constant for one."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    distinct = len(np.unique(x))
    deg = min(2, distinct - 1)
    coef = np.polynomial.polynomial.polyfit(x, y, deg) if deg > 0 else np.array([y.mean()])
    coef = list(map(float, coef)) + [0.0] * (3 - len(coef))
    return tuple(coef)


def summarize(rows: Iterable[dict]) -> list[SummaryRow]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["series"], float(r["eve_rate"]), float(r["eta"])), []).append(float(r["efficiency"]))
    if not groups:
        raise ValidationError("cannot summarize an empty set of rows")
    stats = {}
    for key, vals in groups.items():
        v = np.asarray(vals)
        stats[key] = (len(v), float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0, float(v.min()), float(v.max()))
    curves: dict = {}
    for (series, rate, eta), s in stats.items():
        curves.setdefault((series, rate), []).append((eta, s[1]))
    fits = {k: fit_curve([e for e, _ in pts], [m for _, m in pts]) for k, pts in curves.items()}
    out = []
    for (series, rate, eta), (n, mean, sd, lo, hi) in sorted(stats.items(), key=lambda kv: (SERIES.index(kv[0][0]) if kv[0][0] in SERIES else 99, kv[0])):
        # guard against the mean drifting outside [min, max] by rounding
        mean = min(max(mean, lo), hi)
        out.append(SummaryRow(series, rate, eta, n, mean, sd, lo, hi, fits[(series, rate)]))
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(rows: Iterable[dict], columns: Sequence[str], out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])


def raw_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    write_csv(rows, RAW_COLUMNS, buf)
    return buf.getvalue()


def summary_csv(summary: Iterable[SummaryRow]) -> str:
    buf = io.StringIO()
    write_csv((s.as_dict() for s in summary), SUMMARY_COLUMNS, buf)
    return buf.getvalue()


# -- dB conversion -------------------------------------------------------------


def attenuation_db(eta: float) -> float:
    """Attenuation when a fraction ``eta`` of the signal is lost."""
    eta = float(eta)
    if not 0.0 <= eta <= 1.0 or math.isnan(eta):
        raise ValidationError(f"eta must lie in [0, 1), got {eta!r}")
    if eta == 1.0:
        raise ValidationError("eta = 1 loses everything; the attenuation is infinite")
    return -10.0 * math.log10(1.0 - eta) + 0.0


def eta_of_db(db: float) -> float:
    db = float(db)
    if math.isnan(db) or db < 0:
        raise ValidationError(f"attenuation must be a non-negative number of dB, got {db!r}")
    return 1.0 - 10.0 ** (-db / 10.0)


# -- entangled pair demo ---------------------------------------------------------


@dataclass(frozen=True)
class ConditionalCounts:
    """Joint outcome counts of the first-measured half P and its partner Q."""

    theta: float
    counts: tuple  # ((n00, n01), (n10, n11)) indexed [p][q]

    @property
    def trials(self) -> int:
        return sum(map(sum, self.counts))

    def p_q0_given_p(self, p: int) -> float:
        row = self.counts[p]
        return row[0] / sum(row) if sum(row) else math.nan

    def stderr(self, p: int) -> float:
        row = self.counts[p]
        n = sum(row)
        if not n:
            return math.nan
        q = row[0] / n
        return math.sqrt(q * (1 - q) / n)


def gate_by_name(name: str, theta: float) -> np.ndarray:
    gates = {
        "ry": lambda: linalg.ry(theta),
        "rz": lambda: linalg.rz(theta),
        "x": lambda: linalg.PAULI_X,
        "h": lambda: linalg.HADAMARD,
        "i": lambda: linalg.IDENTITY,
    }
    try:
        return gates[name.lower()]()
    except KeyError:
        raise ValidationError(f"unknown gate {name!r}; expected one of {sorted(gates)}") from None


@contextlib.contextmanager
def _gc_paused():
    # the pair loop allocates many long-lived small objects; cyclic GC passes
    # over them cost more than the work itself
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def pair_conditionals(
    theta: float,
    trials: int,
    *,
    gate: str = "ry",
    seed: int = 0,
    epr: EprMatrix = PHI_PLUS,
    method: str = "exact",
    batch: int = 10_000,
) -> ConditionalCounts:
    """Apply ``gate(theta)`` to half P, measure P, then measure its partner Q.

    Everything runs in one process; the partner is reconciled through the
    same notice path a remote node would use.
    """
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    g = gate_by_name(gate, theta)
    rng = RandomSource(seed)
    counts = [[0, 0], [0, 0]]
    done = 0
    with _gc_paused():
        while done < trials:
            n = min(batch, trials - done)
            reg_p, reg_q, _ = create_entangled_pairs(epr, n, method=method)
            for i in range(n):
                reg_p.record_gate(g, i)
                p, _ = reg_p.measure_entangled(i, rng)
                q = reg_q.measure(i, rng)
                counts[p][q] += 1
            done += n
    return ConditionalCounts(theta, tuple(map(tuple, counts)))


def distributed_conditionals(
    alice,
    peer: str,
    theta: float,
    trials: int,
    *,
    gate: str = "ry",
    seed: int = 0,
    epr: EprMatrix = PHI_PLUS,
    batch: int = 1000,
) -> list[int]:
    """Alice's half of the demo: create pairs, ship the Q halves, measure P.

    The receiving node measures Q from its ``on_reconciled`` hook (see
    :func:`q_tally_hook`).  Returns Alice's P outcomes.
    """
    g = gate_by_name(gate, theta)
    rng = RandomSource(seed)
    outcomes = []
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        reg_p, reg_q = alice.create_pairs(epr, n)
        alice.send_register(reg_q, peer)
        for i in range(n):
            alice.apply_gate(reg_p, g, i)
            outcomes.append(alice.measure(reg_p, i, rng))
        done += n
    return outcomes


def q_tally_hook(seed: int, counts: list):
    """``on_reconciled`` hook measuring Q and tallying ``counts[p][q]``."""
    rng = RandomSource(seed)

    def hook(reg, pos, notice):
        q = reg.measure(pos, rng)
        counts[notice.outcome][q] += 1

    return hook
