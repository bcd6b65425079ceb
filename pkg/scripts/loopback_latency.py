"""Real-time loopback run on this host: synthetic crowd -> RSU -> vehicle.
Prints cadence and latency figures and writes latency.csv and histogram.csv.

    python3 scripts/loopback_latency.py [--tracks 10] [--seconds 30] [--detector-delay-ms 51] [--out out/]
"""

import argparse
from pathlib import Path

from pass_v2x.evaluation.loopback import run_loopback
from pass_v2x.rsu_net import latency_report, write_latency_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tracks", type=int, default=10)
    ap.add_argument("--seconds", type=float, default=30.0)
    ap.add_argument("--detector-delay-ms", type=float, default=0.0)
    ap.add_argument("--period-ms", type=float, default=100.0)
    ap.add_argument("--out", type=Path, default=None, help="directory for latency CSVs")
    args = ap.parse_args()

    res = run_loopback(args.tracks, args.seconds, args.detector_delay_ms, args.period_ms)
    psms = res.psm_records()
    print(f"ticks={len(res.ticks)} psms={len(psms)} queue_drops={res.queue_drops} unmatched={res.unmatched}")
    print(f"mean_period_ms={res.mean_period_ms():.3f} drift_ms_per_tick={res.drift_ms_per_tick():.5f}")
    print(f"p99_end_to_end_ms={res.p99_end_to_end_ms():.2f}")
    report = latency_report(psms)
    for row in report.rows:
        print(f"{row.kind}: min={row.min_ms:.2f} max={row.max_ms:.2f} mean={row.mean_ms:.2f} ms (n={row.n})")
    if args.out is not None:
        for p in write_latency_report(report, args.out):
            print(p)


if __name__ == "__main__":
    main()
