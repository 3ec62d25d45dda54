"""Command-line entry point: ``qent series | demo-entangle | convert-db``."""

from __future__ import annotations

import argparse
import math
import os
import sys

from . import harness
from .errors import QentError
from .noise import DAMPING_MODELS
from .rng import RandomSource
from .wire import transport
from .wire.node import Node


def _default_seed() -> int:
    env = os.environ.get("QENT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise SystemExit(f"qent: error: QENT_SEED must be an integer, got {env!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _address(text: str):
    try:
        return transport.parse_address(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qent", description="Distributed qubit simulation and BB84 channel experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("series", help="run one experiment series and write CSV")
    s.add_argument("--series", choices=harness.SERIES, default="control")
    s.add_argument("--eta-step", type=float, default=0.05)
    s.add_argument("--eve-rates", type=_float_list, default=None, help="comma-separated, e.g. 0.1,0.5,1.0")
    s.add_argument("--trials", type=int, default=100, help="trials per grid point")
    s.add_argument("--qubits", type=int, default=1000, help="qubits per trial")
    s.add_argument("--seed", type=int, default=None, help="master seed (default: $QENT_SEED or 0)")
    s.add_argument("--damping-model", choices=DAMPING_MODELS, default="erasure")
    s.add_argument("--out", default="-", help="raw CSV path, '-' for stdout")
    s.add_argument("--summary", default=None, help="summary CSV path")

    d = sub.add_parser("demo-entangle", help="conditional outcomes of a rotated Bell pair")
    mode = d.add_mutually_exclusive_group()
    mode.add_argument("--loopback", action="store_true", help="two nodes in this process over an in-memory link")
    mode.add_argument("--listen", type=_address, metavar="HOST:PORT", help="act as the Q side and wait for a peer")
    mode.add_argument("--connect", type=_address, metavar="HOST:PORT", help="act as the P side and connect to a peer")
    d.add_argument("--gate", default="ry")
    d.add_argument("--theta", type=float, default=math.pi / 6)
    d.add_argument("--trials", type=int, default=100_000)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--batch", type=int, default=1000, help="pairs shipped per register transfer")

    c = sub.add_parser("convert-db", help="convert between damping factor and dB")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--eta", type=float)
    g.add_argument("--db", type=float)
    return p


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", newline="", encoding="utf-8")


def cmd_series(a) -> int:
    cfg = harness.SeriesConfig(
        series=a.series,
        eta_values=harness.eta_grid(a.eta_step),
        eve_rates=a.eve_rates,
        trials_per_point=a.trials,
        qubits_per_trial=a.qubits,
        master_seed=a.seed,
        damping_model=a.damping_model,
    )
    rows = harness.run_series(cfg)
    out = _open_out(a.out)
    try:
        harness.write_csv(rows, harness.RAW_COLUMNS, out)
    finally:
        if out is not sys.stdout:
            out.close()
    if a.summary:
        with open(a.summary, "w", newline="", encoding="utf-8") as f:
            harness.write_csv((s.as_dict() for s in harness.summarize(rows)), harness.SUMMARY_COLUMNS, f)
    return 0


def _report(counts, theta: float) -> None:
    cc = harness.ConditionalCounts(theta, tuple(map(tuple, counts)))
    print(f"theta = {theta:.6f}  trials = {cc.trials}")
    for p in (0, 1):
        print(f"P(Q=0 | P={p}) = {cc.p_q0_given_p(p):.4f} +/- {cc.stderr(p):.4f}  (n = {sum(cc.counts[p])})")


def cmd_demo(a) -> int:
    if a.trials < 1 or a.batch < 1:
        raise QentError("--trials and --batch must be at least 1")
    harness.gate_by_name(a.gate, a.theta)

    if not (a.loopback or a.listen or a.connect):
        cc = harness.pair_conditionals(a.theta, a.trials, gate=a.gate, seed=a.seed)
        _report(cc.counts, a.theta)
        return 0

    q_seed = RandomSource(a.seed).spawn(1).seed
    if a.listen:
        bob = Node("bob")
        counts = [[0, 0], [0, 0]]
        bob.on_reconciled = harness.q_tally_hook(q_seed, counts)
        listener = transport.listen(*a.listen)
        print(f"listening on {listener.address[0]}:{listener.address[1]}", flush=True)
        conn = bob.accept(listener.accept())
        conn.join()
        listener.close()
        _report(counts, a.theta)
        return 0

    alice = Node("alice")
    if a.loopback:
        bob = Node("bob")
        counts = [[0, 0], [0, 0]]
        bob.on_reconciled = harness.q_tally_hook(q_seed, counts)
        end_a, end_b = transport.loopback_transport()
        bob.accept(end_b)
        alice.connect(end_a)
    else:
        alice.connect(transport.connect(*a.connect))
    try:
        ps = harness.distributed_conditionals(
            alice, "bob", a.theta, a.trials, gate=a.gate, seed=a.seed, batch=a.batch
        )
    finally:
        alice.close()
    if a.loopback:
        bob.close()
        _report(counts, a.theta)
    else:
        print(f"sent {len(ps)} pairs; P outcomes: {ps.count(0)} zeros, {ps.count(1)} ones")
        print("conditional probabilities are reported by the listening side")
    return 0


def cmd_convert(a) -> int:
    if a.eta is not None:
        print(f"eta = {a.eta:.6g}  ->  {harness.attenuation_db(a.eta):.6g} dB")
    else:
        print(f"{a.db:.6g} dB  ->  eta = {harness.eta_of_db(a.db):.6g}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    if getattr(a, "seed", 0) is None:
        a.seed = _default_seed()
    try:
        return {"series": cmd_series, "demo-entangle": cmd_demo, "convert-db": cmd_convert}[a.command](a)
    except (QentError, ValueError) as exc:
        print(f"qent: error: {exc}", file=sys.stderr)
        return 2
    except (ConnectionError, TimeoutError, OSError) as exc:
        print(f"qent: connection error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
