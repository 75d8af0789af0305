import os
import socket
import subprocess
import sys

import numpy as np
import pytest

from mpcmwem.cli import main
from mpcmwem.data import bundled_path

SCHEMA = str(bundled_path("car.schema"))
CAR = str(bundled_path("car.csv"))


def _report(path):
    out = {}
    for line in open(path):
        if "=" in line:
            k, v = line.strip().split("=", 1)
            out[k] = v
    return out


def _synth(tmp_path, *extra, name="r"):
    argv = ["synthesize", "--schema", SCHEMA, "--input", CAR, "--epsilon", "1", "--iterations", "3",
            "--queries", "60", "--out", str(tmp_path / f"{name}.csv"), "--report", str(tmp_path / f"{name}.txt"),
            *extra]
    return main(argv)


def test_central_synthesize_and_evaluate(tmp_path):
    assert _synth(tmp_path, "--mode", "central") == 0
    rep = _report(tmp_path / "r.txt")
    assert rep["rows"] == "1728" and rep["iterations"] == "3"
    assert float(rep["workload_error_avg"]) >= 0 and 0 <= float(rep["auc"]) <= 1
    assert main(["evaluate", "--schema", SCHEMA, "--input", CAR, "--synthetic", str(tmp_path / "r.csv"),
                 "--queries", "60", "--report", str(tmp_path / "e.txt")]) == 0
    assert _report(tmp_path / "e.txt")["synthetic_rows"] == "1728"


def test_seed_determinism(tmp_path):
    _synth(tmp_path, "--mode", "central", "--seed", "4", name="a")
    _synth(tmp_path, "--mode", "central", "--seed", "4", name="b")
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


def test_pinned_tape_cross_mode(tmp_path, monkeypatch):
    monkeypatch.setenv("MPCMWEM_ALLOW_PINNED_TAPE", "1")
    tape = tmp_path / "tape"
    tape.write_text("17\n")
    _synth(tmp_path, "--mode", "central", "--pinned-tape", str(tape), name="c")
    _synth(tmp_path, "--mode", "mpc", "--pinned-tape", str(tape), name="m")
    c, m = _report(tmp_path / "c.txt"), _report(tmp_path / "m.txt")
    for i in (1, 2, 3):
        assert c[f"iteration.{i}.index"] == m[f"iteration.{i}.index"]
        assert abs(float(c[f"iteration.{i}.measurement"]) - float(m[f"iteration.{i}.measurement"])) <= 2**-8


def test_tape_gate(tmp_path, monkeypatch):
    monkeypatch.delenv("MPCMWEM_ALLOW_PINNED_TAPE", raising=False)
    tape = tmp_path / "tape"
    tape.write_text("1")
    assert _synth(tmp_path, "--mode", "central", "--pinned-tape", str(tape)) == 1


@pytest.mark.parametrize("eps", ["0", "-1"])
def test_bad_epsilon(tmp_path, eps):
    argv = ["synthesize", "--schema", SCHEMA, "--input", CAR, "--mode", "central", "--epsilon", eps,
            "--iterations", "2", "--out", str(tmp_path / "o.csv")]
    assert main(argv) == 1


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synthesize", "--schema", SCHEMA])
    assert exc.value.code == 1
    assert main(["synthesize", "--schema", SCHEMA, "--mode", "central", "--epsilon", "1", "--iterations", "2",
                 "--out", str(tmp_path / "o.csv")]) == 1


def test_missing_and_malformed_files(tmp_path):
    assert _synth(tmp_path, "--mode", "central", "--input", str(tmp_path / "nope.csv")) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("buying,maint,doors,persons,lug_boot,safety,class\nvhigh,vhigh,2,2,small,low,maybe\n")
    assert main(["evaluate", "--schema", SCHEMA, "--input", CAR, "--synthetic", str(bad)]) == 3


def test_central_car_deterministic_report(tmp_path):
    def run(name):
        main(["synthesize", "--schema", SCHEMA, "--input", CAR, "--mode", "central", "--epsilon", "1",
              "--iterations", "10", "--queries", "400", "--seed", "3", "--out", str(tmp_path / f"{name}.csv"),
              "--report", str(tmp_path / f"{name}.txt")])
        text = (tmp_path / f"{name}.txt").read_text()
        return (tmp_path / f"{name}.csv").read_bytes(), text.split("[timings]")[0]
    assert run("x") == run("y")


def test_party_missing_share_file(tmp_path, capsys):
    missing = tmp_path / "gone.mwsh"
    code = main(["party", "--id", "0", "--listen", "127.0.0.1:0", "--peers", "127.0.0.1:1,127.0.0.1:2,127.0.0.1:3",
                 "--input", str(missing)])
    assert code == 3
    assert str(missing) in capsys.readouterr().err


def test_share_command(tmp_path):
    assert main(["share", "--schema", SCHEMA, "--input", CAR, "--out", str(tmp_path), "--holder", "1"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"holder1_party{i}.mwsh" for i in range(3)]


# ------------------------------------------------------------------ TCP


def _free_ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def _cli(*args):
    return [sys.executable, "-m", "mpcmwem.cli", *args]


def _start_parties(tmp_path, ports, frac_bits=16):
    main(["share", "--schema", SCHEMA, "--input", CAR, "--out", str(tmp_path), "--frac-bits", str(frac_bits)])
    peers = ",".join(f"127.0.0.1:{p}" for p in ports)
    procs = []
    for i, port in enumerate(ports):
        procs.append(subprocess.Popen(
            _cli("party", "--id", str(i), "--listen", f"127.0.0.1:{port}", "--peers", peers,
                 "--input", str(tmp_path / f"holder0_party{i}.mwsh"), "--frac-bits", str(frac_bits),
                 "--timeout", "30", "--seed", str(10 + i)),
            stdout=subprocess.PIPE, stderr=subprocess.PIPE))
    return peers, procs


def _stop(procs):
    codes = []
    for p in procs:
        try:
            p.wait(timeout=30)
        except subprocess.TimeoutExpired:
            p.kill()
            p.wait()
        codes.append(p.returncode)
    return codes


@pytest.mark.slow
def test_tcp_smoke(tmp_path):
    peers, procs = _start_parties(tmp_path, _free_ports(3))
    try:
        coord = subprocess.run(
            _cli("synthesize", "--schema", SCHEMA, "--mode", "mpc", "--peers", peers, "--rows", "1728",
                 "--epsilon", "1", "--iterations", "2", "--queries", "40", "--out", str(tmp_path / "s.csv"),
                 "--report", str(tmp_path / "s.txt")),
            capture_output=True, text=True, timeout=120)
    finally:
        codes = _stop(procs)
    assert coord.returncode == 0, coord.stderr
    assert codes == [0, 0, 0]
    rep = _report(tmp_path / "s.txt")
    assert rep["transport"] == "tcp"
    assert 0 <= int(rep["iteration.2.index"]) < 40
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 1729


@pytest.mark.slow
def test_tcp_codec_mismatch_refused(tmp_path):
    peers, procs = _start_parties(tmp_path, _free_ports(3))
    try:
        coord = subprocess.run(
            _cli("synthesize", "--schema", SCHEMA, "--mode", "mpc", "--peers", peers, "--rows", "1728",
                 "--epsilon", "1", "--iterations", "2", "--queries", "40", "--frac-bits", "32",
                 "--out", str(tmp_path / "s.csv")),
            capture_output=True, text=True, timeout=120)
    finally:
        for p in procs:
            p.kill()
        _stop(procs)
    assert coord.returncode == 2
    assert "protocol error" in coord.stderr
