import re
import subprocess
import sys

import pytest

from qent.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_convert_eta(capsys):
    code, out, _ = run(["convert-db", "--eta", "0.9"], capsys)
    assert code == 0 and "10 dB" in out


def test_convert_db(capsys):
    code, out, _ = run(["convert-db", "--db", "42.6"], capsys)
    assert code == 0
    assert float(re.search(r"eta = ([0-9.]+)", out).group(1)) == pytest.approx(0.99994, abs=1e-5)


def test_convert_full_loss_fails(capsys):
    code, _, err = run(["convert-db", "--eta", "1"], capsys)
    assert code == 2 and "infinite" in err


def test_series_deterministic(tmp_path, capsys):
    args = ["series", "--series", "control", "--trials", "1", "--qubits", "10", "--seed", "7"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a), "--summary", str(tmp_path / "s.csv")]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 22
    assert (tmp_path / "s.csv").read_text().startswith("series,eve_rate,eta,n,")


def test_series_to_stdout(capsys):
    code, out, _ = run(["series", "--eta-step", "0.5", "--trials", "2", "--qubits", "20"], capsys)
    assert code == 0 and len(out.splitlines()) == 7


def test_seed_from_environment(monkeypatch, capsys):
    args = ["series", "--eta-step", "0.5", "--trials", "1", "--qubits", "50"]
    monkeypatch.setenv("QENT_SEED", "7")
    _, env_out, _ = run(args, capsys)
    monkeypatch.delenv("QENT_SEED")
    _, flag_out, _ = run(args + ["--seed", "7"], capsys)
    assert env_out == flag_out


def test_eve_rates_flag(capsys):
    code, out, _ = run(["series", "--series", "eve_bob", "--eve-rates", "0.2,1.0", "--eta-step", "1", "--trials", "1", "--qubits", "10"], capsys)
    assert code == 0 and len(out.splitlines()) == 5


def test_bad_config_exit_code(capsys):
    code, _, err = run(["series", "--eta-step", "0.3"], capsys)
    assert code == 2 and "qent: error" in err


def test_conflicting_demo_flags(capsys):
    with pytest.raises(SystemExit) as e:
        main(["demo-entangle", "--loopback", "--connect", "127.0.0.1:1"])
    assert e.value.code == 2


def test_unknown_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["convert-db", "--bogus"])
    assert e.value.code == 2


def parse_report(out):
    return float(re.search(r"P\(Q=0 \| P=0\) = ([0-9.]+)", out).group(1))


def test_demo_local(capsys):
    code, out, _ = run(["demo-entangle", "--theta", "0.5236", "--trials", "20000"], capsys)
    assert code == 0 and abs(parse_report(out) - 0.75) <= 0.015


def test_demo_loopback(capsys):
    code, out, _ = run(["demo-entangle", "--loopback", "--gate", "ry", "--theta", "0.5236", "--trials", "5000"], capsys)
    assert code == 0 and abs(parse_report(out) - 0.75) <= 0.03


def test_demo_over_socket(capsys):
    server = subprocess.Popen(
        [sys.executable, "-m", "qent", "demo-entangle", "--listen", "127.0.0.1:0", "--theta", "0.5236"],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        port = re.search(r":(\d+)", server.stdout.readline()).group(1)
        code, out, _ = run(["demo-entangle", "--connect", f"127.0.0.1:{port}", "--theta", "0.5236", "--trials", "3000"], capsys)
        assert code == 0 and "sent 3000 pairs" in out
        report, _ = server.communicate(timeout=60)
    finally:
        server.kill()
    assert server.returncode == 0 and abs(parse_report(report) - 0.75) <= 0.04


def test_connect_refused(capsys):
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    code, _, err = run(["demo-entangle", "--connect", f"127.0.0.1:{port}", "--trials", "1"], capsys)
    assert code == 1 and "connection" in err
