#!/usr/bin/env python3
"""Record raw height maps from a live episode, then rebuild tactile
frames offline with the calibrate and render commands. This is the
workflow for reprocessing logged contact data after the fact.
"""

import os
import subprocess
import sys

import tacsim

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out_offline_render")


def cli(*argv: str) -> None:
    subprocess.run([sys.executable, "-m", "tacsim.cli", *argv], check=True)


def main() -> int:
    os.makedirs(OUT, exist_ok=True)

    # Live phase: rigid ball press, optics off (only depth is recorded).
    cfg = tacsim.default_config("ball_rolling", tacsim.MODE_RIGID)
    cfg.seed = 7
    for sensor in cfg.sensors:
        sensor.render_rgb = False
    env = tacsim.make_env("ball_rolling", config=cfg)
    env.reset()
    raws = []
    for t in range(32):  # press lasts 20 steps, then the ball rolls
        obs, _ = env.step(tacsim.scripted_action("ball_rolling", env.mode, t))
        if t in (15, 23, 31):
            path = os.path.join(OUT, f"depth_{t:03d}.raw")
            tacsim.save_heightmap_raw(path, tacsim.HeightMap(obs.heightmap[0], cfg.sensors[0].tactile_config().pixel_pitch))
            raws.append(path)
    print(f"recorded {len(raws)} height maps")

    # Offline phase: fit the optical table once, then replay the logs.
    table_dir = os.path.join(OUT, "calibration")
    cli("calibrate", "--out", table_dir)
    cli(
        "render", *raws,
        "--table", os.path.join(table_dir, "table.json"),
        "--table-png", os.path.join(table_dir, "table.png"),
        "--out", os.path.join(OUT, "frames"),
    )
    print(f"tactile frames in {os.path.join(OUT, 'frames')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
