"""Write the demo inputs under configs/: calibration, road mask, a detection
replay, and the canonical and empty encounter scenarios.

    python3 scripts/make_demo_inputs.py [--out configs]
"""

import argparse
from pathlib import Path

import numpy as np

from pass_v2x.config import save_calibration
from pass_v2x.evaluation.loopback import crowd_detections, crowd_positions
from pass_v2x.evaluation.scenario import ScenarioConfig, save_scenario, synthetic_calibration
from pass_v2x.perception import RoadMask, save_mask, write_replay

START_TS = 1543609955382


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "configs")
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--tracks", type=int, default=4)
    args = ap.parse_args()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    canonical = ScenarioConfig()
    cal = synthetic_calibration(canonical.anchor, canonical.patch_m)

    # road everywhere below the horizon line of the synthetic camera
    h, w = 54, 96
    bits = np.zeros((h, w), dtype=np.uint8)
    bits[int(0.25 * h):, :] = 1
    save_mask(RoadMask(w, h, bits.ravel()), out / "road_mask.pgm")
    cal.mask_path = out / "road_mask.pgm"
    save_calibration(cal, out / "calibration.json")

    frames = []
    for k in range(args.frames):
        ts = START_TS + 100 * k
        frames.append(crowd_detections(cal, crowd_positions(args.tracks, k / 10.0), ts))
    write_replay(frames, out / "demo_replay.csv")

    save_scenario(canonical, out / "canonical_scenario.json")
    save_scenario(ScenarioConfig(pedestrian=None), out / "empty_scenario.json")
    for p in sorted(out.iterdir()):
        print(p)


if __name__ == "__main__":
    main()
