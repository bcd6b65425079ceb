import csv
import io
import socket
import subprocess
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from pass_v2x.cli import build_parser, main
from pass_v2x.config import save_calibration
from pass_v2x.evaluation import GroundTruthRecord, write_ground_truth
from pass_v2x.evaluation.loopback import crowd_detections, crowd_positions
from pass_v2x.evaluation.scenario import ScenarioConfig, save_scenario, synthetic_calibration
from pass_v2x.geometry import CardinalHeading, GeoPosition
from pass_v2x.perception import RoadMask, format_detection_line, save_mask, write_replay
from pass_v2x.pscw import from_local

ANCHOR = GeoPosition(34.679183, -82.847414)


def free_port(kind=socket.SOCK_DGRAM):
    with socket.socket(socket.AF_INET, kind) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def calib(tmp_path):
    cal = synthetic_calibration(ANCHOR, 40.0)
    save_mask(RoadMask(2, 2, np.ones(4, dtype=np.uint8)), tmp_path / "road.pgm")
    cal.mask_path = tmp_path / "road.pgm"
    save_calibration(cal, tmp_path / "cal.json")
    return tmp_path / "cal.json", cal


def replay_file(path, cal, n_frames=10, n_tracks=3, t0=1_000_000):
    frames = [crowd_detections(cal, crowd_positions(n_tracks, k / 10), t0 + 100 * k) for k in range(n_frames)]
    write_replay(frames, path)
    return path


class Listener:
    """``listen`` running on a thread, collecting its stdout."""

    def __init__(self, capsys_free_argv):
        self.out = io.StringIO()
        self.code = None
        self.argv = capsys_free_argv

    def _run(self):
        from contextlib import redirect_stdout

        with redirect_stdout(self.out):
            self.code = main(self.argv)

    def __enter__(self):
        self.t = threading.Thread(target=self._run, daemon=True)
        self.t.start()
        time.sleep(0.3)
        return self

    def __exit__(self, *exc):
        self.t.join(10)


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    for name, p in sub.choices.items():
        with pytest.raises(SystemExit) as e:
            main([name, "--help"])
        assert e.value.code == 0
        text = capsys.readouterr().out
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["eval", "a.csv", "b.csv", "--frobnicate"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["run", "--calib", "x.json"])  # no detection source
    assert e.value.code == 1


def test_entry_point_subprocess():
    r = subprocess.run([sys.executable, "-m", "pass_v2x.cli", "--bogus"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage" in r.stderr


def test_run_replay_feeds_listener(tmp_path, calib):
    cal_path, cal = calib
    port = free_port()
    rp = replay_file(tmp_path / "frames.csv", cal)
    with Listener(["listen", "--port", str(port), "--bind", "127.0.0.1", "--count", "30",
                   "--duration", "5", "--report", str(tmp_path / "lat")]) as li:
        assert main(["run", "--calib", str(cal_path), "--replay", str(rp), "--port", str(port)]) == 0
    assert li.code == 0
    rows = li.out.getvalue().splitlines()
    assert len(rows) == 30 and all(r.startswith("PSM\tVRU\t") for r in rows)
    assert rows[0].split("\t")[7:9] == ["201", "0.54"]
    with open(tmp_path / "lat" / "latency.csv") as fh:
        assert next(csv.reader(fh)) == ["type", "min_ms", "max_ms", "mean_ms"]
    assert (tmp_path / "lat" / "histogram.csv").exists()


def test_run_realtime_replay(tmp_path, calib):
    cal_path, cal = calib
    port = free_port()
    rp = replay_file(tmp_path / "frames.csv", cal, n_frames=5, n_tracks=2)
    with Listener(["listen", "--port", str(port), "--bind", "127.0.0.1", "--count", "10",
                   "--duration", "5", "--quiet", "--report", str(tmp_path / "lat")]) as li:
        assert main(["run", "--calib", str(cal_path), "--replay", str(rp), "--port", str(port),
                     "--realtime"]) == 0
    assert li.code == 0
    with open(tmp_path / "lat" / "latency.csv") as fh:
        e2e = {r["type"]: float(r["max_ms"]) for r in csv.DictReader(fh)}["end_to_end"]
    assert 0 <= e2e < 100  # re-stamped onto the live clock


def test_run_detect_socket(tmp_path, calib):
    cal_path, cal = calib
    udp, tcp = free_port(), free_port(socket.SOCK_STREAM)
    codes = {}
    runner = threading.Thread(
        target=lambda: codes.setdefault("run", main(
            ["run", "--calib", str(cal_path), "--detect-socket", f"127.0.0.1:{tcp}",
             "--port", str(udp), "--duration", "3"])),
        daemon=True,
    )
    with Listener(["listen", "--port", str(udp), "--bind", "127.0.0.1", "--count", "4",
                   "--duration", "5"]) as li:
        runner.start()
        for _ in range(50):
            try:
                conn = socket.create_connection(("127.0.0.1", tcp))
                break
            except ConnectionRefusedError:
                time.sleep(0.05)
        now = int(time.time() * 1000)
        with conn:
            for k in range(2):
                dets = crowd_detections(cal, crowd_positions(2, k / 10), now + 100 * k)
                conn.sendall(("\n".join(format_detection_line(d) for d in dets) + "\n\n").encode())
                time.sleep(0.1)
    runner.join(10)
    assert codes["run"] == 0 and li.code == 0
    assert len(li.out.getvalue().splitlines()) == 4


def test_run_missing_mask_names_path(tmp_path, calib, capsys):
    cal_path, _ = calib
    (tmp_path / "road.pgm").unlink()
    rp = tmp_path / "f.csv"
    rp.write_text("")
    assert main(["run", "--calib", str(cal_path), "--replay", str(rp)]) == 2
    assert str(tmp_path / "road.pgm") in capsys.readouterr().err


def test_listen_counts_malformed(tmp_path):
    port = free_port()
    with Listener(["listen", "--port", str(port), "--bind", "127.0.0.1", "--duration", "1"]) as li:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            s.sendto(b"\x20\x00garbage", ("127.0.0.1", port))
    assert li.code == 0


def test_scenario_command(tmp_path, capsys):
    save_scenario(ScenarioConfig(), tmp_path / "canon.json")
    assert main(["scenario", str(tmp_path / "canon.json"), "--out", str(tmp_path / "out")]) == 0
    summary = dict(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert summary["first_alert_ttc_s"] == "7.300"
    assert summary["halted_short"] == "true"
    assert (tmp_path / "out" / "trajectories.csv").exists()

    save_scenario(ScenarioConfig(pedestrian=None), tmp_path / "empty.json")
    assert main(["scenario", str(tmp_path / "empty.json"), "--out", str(tmp_path / "o2")]) == 0
    assert dict(csv.reader(io.StringIO(capsys.readouterr().out)))["alerts"] == "0"

    (tmp_path / "bad.json").write_text('{"version": 1, "vehicle": {"decel_mps2": -1}}')
    assert main(["scenario", str(tmp_path / "bad.json")]) == 2
    assert "vehicle.decel_mps2" in capsys.readouterr().err


def gt_rows(offset_m=0.0, dv=0.0):
    out = []
    for i in range(8):
        card = CardinalHeading(i % 4)
        pos = from_local(ANCHOR, float(i), offset_m)
        out.append(GroundTruthRecord(1000 + 100 * i, "p1", pos, 1.2 + dv, card))
    return out


def test_eval_command(tmp_path, capsys):
    write_ground_truth(gt_rows(), tmp_path / "t.csv")
    write_ground_truth(gt_rows(), tmp_path / "same.csv")
    write_ground_truth(gt_rows(0.25, 0.39), tmp_path / "off.csv")

    assert main(["eval", str(tmp_path / "t.csv"), str(tmp_path / "same.csv")]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert float(rows[0]["rmse_location_m"]) == 0 and float(rows[0]["rmse_velocity_mps"]) == 0

    assert main(["eval", str(tmp_path / "t.csv"), str(tmp_path / "off.csv"), "--by-direction",
                 "--tp", "98", "--fp", "2"]) == 0
    out = capsys.readouterr().out
    table, acc = out.strip().rsplit("\n", 1)
    rows = list(csv.DictReader(io.StringIO(table)))
    assert [r["group"] for r in rows] == ["EW", "WE", "NS", "SN"]
    for r in rows:
        assert float(r["rmse_location_m"]) == pytest.approx(0.25, abs=1e-5)
        assert float(r["rmse_velocity_mps"]) == pytest.approx(0.39, abs=1e-6)
    assert acc == "accuracy,0.980000"


def test_eval_length_mismatch(tmp_path, capsys):
    write_ground_truth(gt_rows(), tmp_path / "t.csv")
    write_ground_truth(gt_rows()[:5], tmp_path / "short.csv")
    assert main(["eval", str(tmp_path / "t.csv"), str(tmp_path / "short.csv")]) == 2
    assert "estimates" in capsys.readouterr().err
