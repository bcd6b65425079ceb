"""Command line entry point: ``run``, ``scenario``, ``listen``, ``eval``.

Exit codes: 0 success, 1 usage error, 2 runtime or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import signal
import socket
import sys
from pathlib import Path
from typing import Iterator, Optional, Sequence

from .errors import ConfigError, PassError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("pass_v2x")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _endpoint(text: str) -> tuple[str, int]:
    """``[host]:port`` or a bare port."""
    host, _, port = text.rpartition(":")
    try:
        return host or "0.0.0.0", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected [host]:port, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pass-v2x", description="Vision-based pedestrian alert RSU simulator.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the RSU pipeline on replayed or live detections")
    run.add_argument("--calib", required=True, type=Path, help="calibration JSON file")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--replay", type=Path, help="detection CSV to replay")
    src.add_argument(
        "--detect-socket", type=_endpoint, metavar="[HOST]:PORT",
        help="accept one live detection stream on this TCP endpoint",
    )
    run.add_argument("--bind", default="", help="local address for the broadcast socket")
    run.add_argument("--host", default="127.0.0.1", help="subscriber address PSMs are sent to")
    run.add_argument("--port", type=int, default=5900, help="subscriber UDP port (default 5900)")
    run.add_argument("--broadcast", action="store_true", help="enable SO_BROADCAST on the socket")
    run.add_argument("--period-ms", type=float, default=100.0, help="PSM period (default 100)")
    run.add_argument("--alert-cooldown-ms", type=int, default=1000, help="per-pair alert cooldown")
    run.add_argument("--bsm-port", type=int, default=None, help="UDP port to receive vehicle BSMs on")
    run.add_argument("--realtime", action="store_true", help="pace replay by its frame stamps")
    run.add_argument("--duration", type=float, default=None, help="stop after this many seconds")
    run.add_argument("--stats-interval", type=float, default=5.0, help="seconds between stat lines")
    run.add_argument("--seed", type=int, default=None, help="seed for temporary ids")

    sc = sub.add_parser("scenario", help="run a synthetic encounter scenario")
    sc.add_argument("config", type=Path, help="scenario JSON file")
    sc.add_argument("--out", type=Path, default=Path("."), help="directory for report.csv and trajectories.csv")

    li = sub.add_parser("listen", help="act as a vehicle: print received messages")
    li.add_argument("--port", type=int, default=5900, help="UDP port to listen on (default 5900)")
    li.add_argument("--bind", default="0.0.0.0", help="local address to bind")
    li.add_argument("--duration", type=float, default=None, help="stop after this many seconds")
    li.add_argument("--count", type=int, default=None, help="stop after this many messages")
    li.add_argument("--report", type=Path, default=None, help="write latency.csv and histogram.csv here")
    li.add_argument("--quiet", action="store_true", help="do not print message rows")

    ev = sub.add_parser("eval", help="accuracy and RMSE against ground truth")
    ev.add_argument("truth", type=Path, help="ground-truth CSV")
    ev.add_argument("estimate", type=Path, help="estimate CSV (same columns, index-aligned)")
    ev.add_argument("--by-direction", action="store_true", help="one row per heading EW/WE/NS/SN")
    ev.add_argument("--tp", type=int, default=None, help="true positive count for accuracy")
    ev.add_argument("--fp", type=int, default=None, help="false positive count for accuracy")
    return p


# -- commands --------------------------------------------------------------------


def _socket_frames(endpoint: tuple[str, int], stop) -> Iterator:
    from .perception import read_socket_frames

    with socket.create_server(endpoint) as srv:
        srv.settimeout(0.2)
        log.info("waiting for detections on %s:%d", *srv.getsockname()[:2])
        while not stop.is_set():
            try:
                conn, addr = srv.accept()
            except socket.timeout:
                continue
            log.info("detector connected from %s", addr)
            with conn:
                yield from read_socket_frames(conn)
            return


def cmd_run(args) -> int:
    from .config import load_calibration
    from .perception import read_replay
    from .pipeline import Pipeline
    from .rsu_net import BroadcastConfig, Broadcaster, BsmListener, Clock, VirtualClock
    from .runtime import RsuRuntime, paced
    from .tracking import TrackerConfig

    cal = load_calibration(args.calib)
    if args.replay is not None and not args.replay.is_file():
        raise ConfigError(f"replay file not found: {args.replay}")
    bcfg = BroadcastConfig(
        psm_period_ms=args.period_ms,
        host=args.host,
        port=args.port,
        bind=args.bind,
        broadcast=args.broadcast,
        alert_cooldown_ms=args.alert_cooldown_ms,
    )
    fast = args.replay is not None and not args.realtime
    clock = VirtualClock() if fast else Clock()
    bsms = BsmListener(args.bsm_port, "0.0.0.0").start() if args.bsm_port is not None else None
    bc = Broadcaster(bcfg, clock=clock)
    rt = RsuRuntime(Pipeline(cal, TrackerConfig(seed=args.seed)), bc, bsms)

    def report(r: RsuRuntime) -> None:
        s, b = r.pipeline.stats, r.broadcaster.stats
        print(
            f"frames={s.frames} tracks={r.stats.live_tracks} psms={b.psms_sent} "
            f"alerts={b.alerts_sent} suppressed={b.alerts_suppressed} "
            f"frame_drops={r.frames.dropped} queue_drops={b.queue_drops} send_errors={b.send_errors}",
            file=sys.stderr,
        )

    try:
        if fast:
            rt.replay_fast(read_replay(args.replay))
            bc.stop()
        else:
            if args.replay is not None:
                frames = paced(read_replay(args.replay), clock, rt.stop_event)
            else:
                frames = _socket_frames(args.detect_socket, rt.stop_event)
            rt.run(frames, args.duration, report, args.stats_interval, linger_s=2 * args.period_ms / 1000)
    finally:
        if bsms is not None:
            bsms.stop()
    report(rt)
    return EXIT_OK


def cmd_scenario(args) -> int:
    from .evaluation.scenario import load_scenario, run_scenario, write_report

    cfg = load_scenario(args.config)
    rep = run_scenario(cfg)
    paths = write_report(rep, args.out)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerows(rep.summary())
    log.info("wrote %s", ", ".join(map(str, paths)))
    return EXIT_OK


def cmd_listen(args) -> int:
    from .messages import format_row
    from .rsu_net import VehicleClient, latency_report, write_latency_report

    try:
        client = VehicleClient(args.port, args.bind)
    except OSError as exc:
        print(f"cannot bind UDP {args.bind}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    records = []
    try:
        for msg, rec in client.listen(args.duration):
            records.append(rec)
            if not args.quiet:
                print(format_row(msg), flush=True)
            if args.count is not None and len(records) >= args.count:
                break
    except KeyboardInterrupt:
        pass
    finally:
        client.close()
    print(f"received={client.received} decoded={len(records)} malformed={client.decode_errors}", file=sys.stderr)
    if args.report is not None:
        if not records:
            print("no messages received; latency report not written", file=sys.stderr)
            return EXIT_RUNTIME
        summary, hist = write_latency_report(latency_report(records), args.report)
        print(f"wrote {summary} and {hist}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import compare, detection_accuracy, read_ground_truth

    truth = read_ground_truth(args.truth)
    est = read_ground_truth(args.estimate)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["group", "n", "rmse_location_m", "rmse_velocity_mps"])
    for r in compare(truth, est, args.by_direction):
        fmt = lambda x: "" if x is None else f"{x:.6f}"  # noqa: E731
        w.writerow([r.group, r.n, fmt(r.rmse_location_m), fmt(r.rmse_velocity_mps)])
    if args.tp is not None or args.fp is not None:
        acc = detection_accuracy(args.tp or 0, args.fp or 0)
        print(f"accuracy,{acc:.6f}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "scenario": cmd_scenario, "listen": cmd_listen, "eval": cmd_eval}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    # SIGTERM behaves like Ctrl-C so every context is joined on the way out
    if hasattr(signal, "SIGTERM"):
        try:
            signal.signal(signal.SIGTERM, signal.default_int_handler)
        except ValueError:  # not the main thread
            pass
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (PassError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
