"""Sweep the ghost probability and report simulated ghost share and the
fraction of raw detections farther than 20 cm from the lidar scan.

    python scripts/ghost_sweep.py --world env-small --probs 0 0.3 0.6 0.8
"""
import argparse
from dataclasses import dataclass, field

from radar_enhance import sim
from radar_enhance.cli import naive_false_detection_rate


@dataclass
class Cfg:
    world: str = "env-small"
    probs: list = field(default_factory=lambda: [0.0, 0.3, 0.6, 0.8])
    seed: int = 0
    frames: int = 400


def run(cfg: Cfg):
    print("ghost_probability  ghost_share  false_detection_rate  detections/frame")
    for p in cfg.probs:
        ds = sim.simulate_trajectory(sim.PRESET_WORLDS[cfg.world],
                                     cfg=sim.scenario_config("default", ghost_probability=p, seed=cfg.seed,
                                                             max_frames=cfg.frames))
        n = sum(len(f.detections) for r in ds.records for f in r.radar) / len(ds.records)
        print(f"{p:17.2f}  {sim.ghost_fraction(ds):11.3f}  "
              f"{naive_false_detection_rate(ds.records, ds.extrinsics):20.3f}  {n:16.1f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--world", default=Cfg.world)
    ap.add_argument("--probs", nargs="+", type=float, default=Cfg().probs)
    ap.add_argument("--seed", type=int, default=Cfg.seed)
    ap.add_argument("--frames", type=int, default=Cfg.frames)
    run(Cfg(**vars(ap.parse_args())))
