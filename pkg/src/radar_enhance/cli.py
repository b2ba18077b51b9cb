"""radar-enhance command line: ``sim``, ``train``, ``eval``, ``pipeline``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .core import ConfigurationError, transform_points
from .evaluation import evaluate_dataset, relative_gap, relative_improvement
from .gnn import CheckpointError, load_checkpoint, save_params
from .io import DatasetFormatError, read_dataset, read_world, write_dataset
from .metrics import nearest_rank
from .pipeline import STAGES, build_samples, run_pipeline
from .sim import PRESET_WORLDS, SCENARIOS, SimConfig, scenario_config, simulate_trajectory
from .training import OptimizerState, label_nodes, train

log = logging.getLogger("radar_enhance")

CHECKPOINT_FILE = "model.json"
METRICS_FILE = "metrics.csv"


class CliError(Exception):
    pass


def _load_config(path) -> PipelineConfig:
    return PipelineConfig.load(path) if path else PipelineConfig()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from None
    return out


# ---------------------------------------------------------------- sim

def _sim_config(args) -> SimConfig:
    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read sim config {args.config}: {exc}") from None
        known = {f.name for f in fields(SimConfig)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigurationError(f"unknown sim config keys: {', '.join(unknown)}")
    cfg = scenario_config(args.scenario, **overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def naive_false_detection_rate(records, extrinsics, tol: float = 0.20) -> float:
    """Fraction of all radar detections farther than ``tol`` from that frame's lidar scan."""
    bad = total = 0
    for rec in records:
        for frame in rec.radar:
            if len(frame.detections) == 0:
                continue
            pts = transform_points(frame.detections, extrinsics[frame.sensor_id])
            bad += int(np.sum(label_nodes(pts, rec.lidar, tol) == 0))
            total += len(pts)
    return bad / total if total else 0.0


def cmd_sim(args) -> int:
    if args.preset:
        if args.preset in PRESET_WORLDS:
            args.world = args.preset
        elif args.preset in SCENARIOS:
            args.scenario = args.preset
        else:
            raise ConfigurationError(f"unknown preset {args.preset!r}; choose from "
                                     f"{sorted(PRESET_WORLDS) + sorted(SCENARIOS)}")
    world = PRESET_WORLDS[args.world] if args.world in PRESET_WORLDS else read_world(args.world)
    cfg = _sim_config(args)
    ds = simulate_trajectory(world, cfg=cfg, scenario=args.scenario)
    out = write_dataset(ds, args.out)
    summary = {"world": world.name, "scenario": args.scenario, "seed": cfg.seed, "frames": len(ds.records),
               "detections": int(sum(len(f.detections) for r in ds.records for f in r.radar)),
               "naive_false_detection_rate": naive_false_detection_rate(ds.records, ds.extrinsics)}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------- train

def _samples(paths, config, skip):
    samples = []
    for p in paths or []:
        data = read_dataset(p)
        if data.skipped:
            log.warning("%s: skipped %d corrupt records", p, data.skipped)
        samples += build_samples(data.records, config, data.extrinsics, env_id=data.name, skip=skip)
    return samples


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    epochs = config.epochs if args.epochs is None else args.epochs
    train_set = _samples(args.data, config, config.grid_window)
    if not train_set:
        raise ConfigurationError("training dataset is empty")
    val_set = _samples(args.val, config, config.grid_window)
    init, state, start = None, None, 0
    if args.resume:
        init, meta = load_checkpoint(args.resume)
        start = int(meta.get("epochs_done", 0))
        state = OptimizerState.from_dict(meta.get("optimizer"))
        # resuming keeps the seed the run started with so epoch streams line up
        config = replace(config, seed=int(meta.get("config", {}).get("seed", config.seed)))
    out = _out_dir(args.out)
    metrics_path = out / METRICS_FILE
    header = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    prior_rows = []
    if args.resume:
        prior = Path(args.resume).parent / METRICS_FILE
        if prior.exists():
            with open(prior, newline="") as fh:
                prior_rows = [r for r in csv.DictReader(fh) if int(r["epoch"]) < start]

    def show(m):
        print(f"epoch {m.epoch}: loss {m.train_loss:.4f} acc {m.train_acc:.4f}"
              + (f" val_loss {m.val_loss:.4f} val_acc {m.val_acc:.4f}" if val_set else ""),
              file=sys.stderr)

    result = train(train_set, config.train(epochs), val_set or None, init, start, state, show)
    with open(metrics_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for r in prior_rows:
            w.writerow({k: r.get(k, "") for k in header})
        for m in result.history:
            w.writerow({"epoch": m.epoch, "train_loss": repr(m.train_loss), "train_acc": repr(m.train_acc),
                        "val_loss": repr(m.val_loss) if val_set else "",
                        "val_acc": repr(m.val_acc) if val_set else ""})
    meta = {"epochs_done": start + epochs, "optimizer": result.optimizer.to_dict(), "config": config.to_dict(),
            "train_sets": sorted({s.env_id for s in train_set}), "train_samples": len(train_set)}
    save_params(result.params, out / CHECKPOINT_FILE, meta)
    print(json.dumps({"checkpoint": str(out / CHECKPOINT_FILE), "epochs_done": start + epochs,
                      "train_samples": len(train_set), "val_samples": len(val_set)}))
    return 0


# ---------------------------------------------------------------- eval

REPORT_COLUMNS = ["dataset", "split", "method", "frames", "empty_frames", "cd_mean", "cd_tail90", "hd_mean",
                  "hd_tail90", "node_accuracy", "ate_tr_mean", "ate_tr_tail90", "ate_rot_mean", "rte_tr_mean",
                  "rte_rot_mean", "icp_updates", "icp_rejected", "icp_unavailable"]


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    if not Path(args.checkpoint).exists():
        raise CheckpointError(f"checkpoint {args.checkpoint} not found")
    params, _ = load_checkpoint(args.checkpoint)
    if not (args.seen or args.unseen):
        raise ConfigurationError("give at least one --seen or --unseen dataset")
    methods = (("raw",) if args.raw else ()) + ("naive", "gnn")
    rows = []
    for split, paths in (("seen", args.seen or []), ("unseen", args.unseen or [])):
        for p in paths:
            data = read_dataset(p)
            mp = None if args.no_localize else data.map_points
            rows += evaluate_dataset(data.records, params, config, data.extrinsics, mp, methods, data.name, split)
    out = _out_dir(args.out)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in REPORT_COLUMNS})
    summary = _summary(rows)
    _write_json(out / "report.json", {"rows": rows, "summary": summary})
    for r in rows:
        cd = "n/a" if r["cd_mean"] is None else f"{r['cd_mean']:.4f}"
        acc = "" if r["node_accuracy"] is None else f" acc {r['node_accuracy']:.4f}"
        ate_s = f" ate {r['ate_tr_mean']:.4f}" if "ate_tr_mean" in r else ""
        print(f"{r['split']:7s} {r['dataset']:12s} {r['method']:6s} cd {cd}{acc}{ate_s}")
    if summary:
        print(json.dumps(summary, sort_keys=True))
    return 0


def _mean_cd(rows, split, method):
    vals = [r["cd_mean"] for r in rows if r["split"] == split and r["method"] == method and r["cd_mean"] is not None]
    return float(np.mean(vals)) if vals else None


def _summary(rows) -> dict:
    s = {}
    for split in ("seen", "unseen"):
        naive, gnn = _mean_cd(rows, split, "naive"), _mean_cd(rows, split, "gnn")
        if naive and gnn is not None:
            s[f"{split}_cd_improvement"] = relative_improvement(naive, gnn)
    seen, unseen = _mean_cd(rows, "seen", "gnn"), _mean_cd(rows, "unseen", "gnn")
    if seen and unseen is not None:
        s["generalization_gap"] = relative_gap(seen, unseen)
    return s


# ---------------------------------------------------------------- pipeline

def cmd_pipeline(args) -> int:
    config = _load_config(args.config)
    params = None
    if args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise CheckpointError(f"checkpoint {args.checkpoint} not found")
        params, _ = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    out = _out_dir(args.out)
    lat = {k: [] for k in STAGES}
    lat["total"] = []
    n = 0
    with open(out / "enhanced.jsonl", "w") as fh:
        for rec, frame in run_pipeline(data.records, params, config, data.extrinsics, pipelined=args.pipelined):
            for k in STAGES:
                lat[k].append(frame.latency[k])
            lat["total"].append(sum(frame.latency.values()))
            fh.write(json.dumps({"frame_id": frame.frame_id, "t": frame.timestamp, "n_nodes": int(len(frame.nodes)),
                                 "n_valid": int(frame.valid.sum()), "cloud": frame.cloud.tolist()},
                                separators=(",", ":")) + "\n")
            n += 1
    report = {"frames_in": len(data.records) + data.skipped, "frames_out": n, "skipped": data.skipped,
              "mode": "pipelined" if args.pipelined else "serial", "classifier": params is not None,
              "latency_ms": {k: {"mean": 1e3 * float(np.mean(v)), "p99": 1e3 * nearest_rank(v, 0.99)}
                             for k, v in lat.items() if v}}
    _write_json(out / "latency.json", report)
    with open(out / "latency.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "mean_ms", "p99_ms"])
        for k, v in report["latency_ms"].items():
            w.writerow([k, v["mean"], v["p99"]])
    if data.skipped:
        print(f"warning: skipped {data.skipped} corrupt frame records", file=sys.stderr)
    print(json.dumps(report, sort_keys=True))
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", required=True, help="output directory")
    p = argparse.ArgumentParser(prog="radar-enhance", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", parents=[common], help="simulate a dataset")
    s.add_argument("--world", default="world-a", help=f"preset ({', '.join(sorted(PRESET_WORLDS))}) or world file")
    s.add_argument("--scenario", default="default", choices=sorted(SCENARIOS))
    s.add_argument("--preset", help="world or scenario preset name, e.g. env-small or ghost60")
    s.set_defaults(func=cmd_sim)

    t = sub.add_parser("train", parents=[common], help="train the node classifier")
    t.add_argument("--data", action="append", required=True, help="training dataset directory (repeatable)")
    t.add_argument("--val", action="append", help="validation dataset directory (repeatable)")
    t.add_argument("--epochs", type=int, help="epochs to run (default from config)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="point-cloud and localisation report")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--seen", action="append", help="dataset from a training world (repeatable)")
    e.add_argument("--unseen", action="append", help="dataset from a held-out world (repeatable)")
    e.add_argument("--raw", action="store_true", help="also report raw single-frame radar")
    e.add_argument("--no-localize", action="store_true", help="skip the EKF/ICP columns")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("pipeline", parents=[common], help="replay a dataset through the pipeline")
    r.add_argument("--data", required=True)
    r.add_argument("--checkpoint", help="trained model; omitted = classifier bypassed")
    r.add_argument("--pipelined", action="store_true", help="overlap stages in threads")
    r.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CheckpointError, DatasetFormatError, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
