"""Command-line entry point: ``mpcmwem {share,party,synthesize,evaluate}``.

Exit codes: 0 success, 1 bad arguments, 2 protocol/communication failure,
3 data or file-format error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cluster import HandshakeError, connect_mesh, listen, parse_address
from .data import (DataFormatError, Schema, ShareFile, aggregate_shares, build_local_histogram,
                   load_csv_discretize, sample_synthetic, share_histogram_file, write_csv)
from .distributed import PartyService, SimulatedBackend, TcpBackend, serve_party
from .evaluation import TrainingError, lr_auc, tv_distance, workload_error
from .mechanisms import PinnedTape, TapeForbiddenError
from .mwem import CentralBackend, MwemConfig, gen_workload, run_mwem
from .ring import FixedPointCodec
from .sharing import ConsistencyError
from .transport import CommunicationError

log = logging.getLogger("mpcmwem")

EXIT_OK, EXIT_ARGS, EXIT_PROTOCOL, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def _peers(text: str) -> dict[int, tuple[str, int]]:
    """``host:port,host:port,host:port`` (party order) or ``0=host:port,...``."""
    out = {}
    for pos, item in enumerate(t for t in text.split(",") if t):
        if "=" in item:
            pid, addr = item.split("=", 1)
            out[int(pid)] = parse_address(addr)
        else:
            out[pos] = parse_address(item)
    if sorted(out) != [0, 1, 2]:
        raise UsageError("--peers must name parties 0, 1 and 2")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mpcmwem", description="MWEM synthetic data with a three-party secret-shared curator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--schema", required=True, help="schema sidecar file")
    common.add_argument("--frac-bits", type=int, default=16)
    common.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("share", parents=[common], help="secret-share one holder's data")
    sp.add_argument("--input", required=True, help="holder CSV")
    sp.add_argument("--out", required=True, help="output directory for the three share files")
    sp.add_argument("--holder", type=int, default=0)

    pp = sub.add_parser("party", help="run a computing party")
    pp.add_argument("--id", type=int, required=True, choices=(0, 1, 2))
    pp.add_argument("--listen", required=True, help="host:port to listen on")
    pp.add_argument("--peers", required=True, help="addresses of parties 0,1,2")
    pp.add_argument("--input", nargs="+", required=True, help="this party's share files (one per holder)")
    pp.add_argument("--frac-bits", type=int, default=16)
    pp.add_argument("--timeout", type=float, default=60.0)
    pp.add_argument("--seed", type=int, help="seed key generation and local randomness (reproducible runs)")

    yp = sub.add_parser("synthesize", parents=[common], help="run MWEM and write synthetic records")
    yp.add_argument("--mode", choices=("central", "mpc"), required=True)
    yp.add_argument("--input", nargs="*", default=[], help="data CSV(s), one per holder")
    yp.add_argument("--peers", help="party addresses (mpc over TCP); omit to simulate in-process")
    yp.add_argument("--rows", type=int, help="public record count (required with --peers)")
    yp.add_argument("--epsilon", type=float, required=True)
    yp.add_argument("--iterations", type=int, required=True)
    yp.add_argument("--queries", type=int, default=400)
    yp.add_argument("--out", required=True, help="synthetic CSV path")
    yp.add_argument("--report", help="report path (default: stdout)")
    yp.add_argument("--literal-average", action="store_true", help="average A_0..A_{T-1} instead of A_1..A_T")
    yp.add_argument("--pinned-tape", help="deterministic randomness tape (tests only; voids privacy)")

    ep = sub.add_parser("evaluate", parents=[common], help="compare synthetic records with real ones")
    ep.add_argument("--input", required=True, help="real CSV")
    ep.add_argument("--synthetic", required=True, help="synthetic CSV")
    ep.add_argument("--queries", type=int, default=400)
    ep.add_argument("--report", help="report path (default: stdout)")
    return ap


# ------------------------------------------------------------------ commands


def cmd_share(args) -> int:
    schema = Schema.load(args.schema)
    codec = FixedPointCodec(args.frac_bits)
    records = load_csv_discretize(args.input, schema)
    hist = build_local_histogram(records, schema.domain)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = share_histogram_file(hist, codec, np.random.default_rng(args.seed), args.holder)
    for sf in files:
        sf.save(out / f"holder{args.holder}_party{sf.party}.mwsh")
    print(f"rows={len(records)}")
    return EXIT_OK


def cmd_party(args) -> int:
    codec = FixedPointCodec(args.frac_bits)
    files = [ShareFile.load(p) for p in args.input]
    if any(sf.party != args.id for sf in files):
        raise DataFormatError(f"share files {args.input} are not all for party {args.id}")
    if any(sf.f != codec.f for sf in files):
        raise DataFormatError("share files were written with a different --frac-bits")
    histogram = aggregate_shares(files)
    peers = _peers(args.peers)
    listener = listen(parse_address(args.listen))
    try:
        rng = None if args.seed is None else np.random.default_rng([args.seed, args.id])
        party, coordinator = connect_mesh(args.id, listener, peers, codec, args.timeout, rng)
    finally:
        listener.close()
    try:
        serve_party(PartyService(party, histogram), coordinator)
    finally:
        coordinator.close()
        party.transport.close()
    return EXIT_OK


def _format_report(items: list[tuple[str, object]], metrics: dict, timings: dict) -> str:
    lines = [f"{k}={v}" for k, v in items]
    lines.append("[metrics]")
    lines += [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in metrics.items()]
    lines.append("[timings]")
    lines += [f"{k}={v:.6f}" for k, v in timings.items()]
    return "\n".join(lines) + "\n"


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _quality(schema, records, hist, synth_hist, synth_records, workload) -> dict:
    wmax, wavg = workload_error(hist, synth_hist, workload)
    metrics = {"workload_error_max": wmax, "workload_error_avg": wavg, "tv_distance": tv_distance(hist, synth_hist)}
    if schema.label is not None and records is not None:
        try:
            metrics["auc"] = lr_auc(synth_records, records, schema)
        except (TrainingError, ValueError) as exc:
            log.warning("AUC unavailable: %s", exc)
            metrics["auc"] = 0.5
            metrics["auc_fallback"] = "yes"
    return metrics


def cmd_synthesize(args) -> int:
    if not args.epsilon > 0:
        raise UsageError("--epsilon must be positive")
    if args.iterations < 1 or args.queries < 1:
        raise UsageError("--iterations and --queries must be at least 1")
    schema = Schema.load(args.schema)
    domain = schema.domain
    codec = FixedPointCodec(args.frac_bits)
    tape = PinnedTape.from_file(args.pinned_tape, codec.f) if args.pinned_tape else None
    config = MwemConfig(args.epsilon, args.iterations, args.queries, args.seed, args.literal_average)

    records = None
    holder_hists = []
    if args.input:
        parts = [load_csv_discretize(p, schema) for p in args.input]
        holder_hists = [build_local_histogram(r, domain) for r in parts]
        records = np.concatenate(parts) if parts else None
    if args.mode == "central" and not holder_hists:
        raise UsageError("central mode needs --input")
    if args.peers and args.mode != "mpc":
        raise UsageError("--peers only applies to --mode mpc")
    hist = np.sum(holder_hists, axis=0) if holder_hists else None

    if args.mode == "mpc" and args.peers:
        if args.rows is None:
            raise UsageError("--rows is required with --peers")
        n = args.rows
        backend = TcpBackend(_peers(args.peers), codec)
    elif args.mode == "mpc":
        if not holder_hists:
            raise UsageError("in-process mpc mode needs --input")
        n = int(hist.sum())
        rng = np.random.default_rng(args.seed)
        files = [share_histogram_file(h, codec, rng, holder=i) for i, h in enumerate(holder_hists)]
        shares = [aggregate_shares([f[p] for f in files]) for p in range(3)]
        backend = SimulatedBackend(shares, args.seed, codec)
    else:
        n = int(hist.sum())
        backend = CentralBackend(hist, args.seed, codec.f)
    if args.rows is not None and args.rows != n:
        raise UsageError(f"--rows={args.rows} but the input has {n} records")

    workload = gen_workload(domain, args.queries, args.seed)
    t0 = time.perf_counter()
    try:
        result = run_mwem(config, workload, n, backend, tape)
    finally:
        backend.close()
    total = time.perf_counter() - t0
    synth_records = sample_synthetic(result.distribution, n, args.seed, domain)
    write_csv(args.out, synth_records, schema)

    items = [("mode", args.mode), ("transport", "tcp" if args.peers else ("in-process" if args.mode == "mpc" else "none")),
             ("epsilon", args.epsilon), ("iterations", args.iterations), ("queries", args.queries),
             ("seed", args.seed), ("frac_bits", codec.f), ("rows", n), ("domain_size", domain.size),
             ("pinned_tape", "yes" if tape else "no")]
    for i, (k, m) in enumerate(zip(result.indices, result.measurements), 1):
        items.append((f"iteration.{i}.index", k))
        items.append((f"iteration.{i}.measurement", repr(m)))
    metrics = {}
    if hist is not None:
        synth_hist = build_local_histogram(synth_records, domain)
        metrics = _quality(schema, records, hist, synth_hist, synth_records, workload)
        metrics["workload_error_avg_distribution"] = workload_error(hist, result.distribution, workload)[1]
    timings = dict(result.timings)
    timings["total"] = total
    _emit(_format_report(items, metrics, timings), args.report)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    schema = Schema.load(args.schema)
    domain = schema.domain
    real = load_csv_discretize(args.input, schema)
    synth = load_csv_discretize(args.synthetic, schema)
    hist = build_local_histogram(real, domain)
    synth_hist = build_local_histogram(synth, domain)
    workload = gen_workload(domain, args.queries, args.seed)
    t0 = time.perf_counter()
    metrics = _quality(schema, real, hist, synth_hist, synth, workload)
    items = [("real_rows", len(real)), ("synthetic_rows", len(synth)), ("queries", args.queries), ("seed", args.seed)]
    _emit(_format_report(items, metrics, {"evaluate": time.perf_counter() - t0}), args.report)
    return EXIT_OK


COMMANDS = {"share": cmd_share, "party": cmd_party, "synthesize": cmd_synthesize, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, TapeForbiddenError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (HandshakeError, CommunicationError, ConsistencyError, ConnectionError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
