"""Train on one preset world, evaluate on a held-out run of it and on other worlds.

    python scripts/world_pair.py --train-world world-a --eval-worlds world-b world-c --seeds 1 11
"""
import argparse
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from radar_enhance import sim
from radar_enhance.config import PipelineConfig
from radar_enhance.evaluation import evaluate_dataset, relative_gap, relative_improvement
from radar_enhance.pipeline import build_samples
from radar_enhance.training import train


@dataclass
class Cfg:
    train_world: str = "world-a"
    eval_worlds: list = field(default_factory=lambda: ["world-b"])
    scenario: str = "ghost60"
    seeds: list = field(default_factory=lambda: [1])
    epochs: int = 15
    localize: bool = False


def run(cfg: Cfg) -> list[dict]:
    pc = PipelineConfig(epochs=cfg.epochs)
    results = []
    for seed in cfg.seeds:
        train_ds = sim.simulate_trajectory(sim.PRESET_WORLDS[cfg.train_world],
                                           cfg=sim.scenario_config(cfg.scenario, seed=seed))
        samples = build_samples(train_ds.records, pc, skip=pc.grid_window)
        params = train(samples, pc.train(), log=lambda m: print(f"  epoch {m.epoch} loss {m.train_loss:.4f} "
                                                                  f"acc {m.train_acc:.4f}")).params
        rows = {}
        for k, name in enumerate([cfg.train_world] + list(cfg.eval_worlds)):
            world = sim.PRESET_WORLDS[name]
            ds = sim.simulate_trajectory(world, cfg=sim.scenario_config(cfg.scenario, seed=seed + 100 + k))
            mp = world.sample_map(0.05) if cfg.localize else None
            split = "seen" if name == cfg.train_world else "unseen"
            for r in evaluate_dataset(ds.records, params, pc, ds.extrinsics, mp, ("naive", "gnn"), name, split):
                rows[(name, r["method"])] = r
        seen_cd = rows[(cfg.train_world, "gnn")]["cd_mean"]
        for name in cfg.eval_worlds:
            g, n = rows[(name, "gnn")], rows[(name, "naive")]
            res = {"seed": seed, "world": name, "accuracy": g["node_accuracy"], "cd_naive": n["cd_mean"],
                   "cd_gnn": g["cd_mean"], "improvement": relative_improvement(n["cd_mean"], g["cd_mean"]),
                   "gap_vs_seen": relative_gap(seen_cd, g["cd_mean"])}
            print(json.dumps(res))
            results.append(res)
    return results


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--train-world", default=Cfg.train_world)
    ap.add_argument("--eval-worlds", nargs="+", default=["world-b"])
    ap.add_argument("--scenario", default=Cfg.scenario)
    ap.add_argument("--seeds", nargs="+", type=int, default=[1])
    ap.add_argument("--epochs", type=int, default=Cfg.epochs)
    ap.add_argument("--localize", action="store_true")
    cfg = Cfg(**vars(ap.parse_args()))
    print(json.dumps(asdict(cfg)))
    res = run(cfg)
    for key in ("accuracy", "improvement", "gap_vs_seen"):
        print(f"{key}: mean {np.mean([r[key] for r in res]):.4f}")
