"""Command-line interface.

Subcommands: generate, train, eval, audit-params, irr-vs-stacking,
oracle-study.  Every command takes --config (YAML or JSON), --seed, --out,
and --deterministic/--no-deterministic, and writes the resolved run
configuration next to its outputs so a run can be reproduced exactly.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from irrflow import fileio, viz
from irrflow.datagen import DataConfig, make_sample, read_dataset, write_dataset
from irrflow.experiments import audit_params, irr_vs_stacking, oracle_study
from irrflow.model import ModelConfig
from irrflow.train import TrainConfig, evaluate, load_model, predict, train


def load_config(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        if path.suffix == ".json":
            return json.load(fh)
        return yaml.safe_load(fh) or {}


def _write_run_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, rows, fieldnames=None) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fieldnames = fieldnames or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _load_split(dataset_dir, split="val"):
    root = Path(dataset_dir)
    if (root / split / "manifest.jsonl").exists():
        return read_dataset(root / split)
    if (root / "manifest.jsonl").exists():
        return read_dataset(root)
    raise FileNotFoundError(f"no dataset manifest under {root} (or {root / split})")


def cmd_generate(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    data_cfg = DataConfig.from_dict(cfg.get("data", {}))
    count = int(cfg.get("count", 100))
    train_fraction = float(cfg.get("train_fraction", 0.9))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out)

    n_train = int(round(count * train_fraction))
    samples = [make_sample(seed + i, data_cfg) for i in range(count)]
    write_dataset(samples[:n_train], out / "train", data_cfg)
    write_dataset(samples[n_train:], out / "val", data_cfg)
    _write_run_config(out, {"command": "generate", "seed": seed, "count": count,
                            "train_fraction": train_fraction, "data": data_cfg.to_dict(),
                            "train_count": n_train, "val_count": count - n_train})
    print(f"wrote {n_train} train / {count - n_train} val samples to {out}")
    return 0


def _train_config_from_args(args) -> tuple:
    cfg = load_config(args.config) if args.config else {}
    dataset = args.dataset or cfg.get("dataset")
    if dataset is None:
        raise SystemExit("train: provide --dataset or a 'dataset' config key")
    train_cfg = TrainConfig.from_dict({k: v for k, v in cfg.items() if k != "dataset"})
    if args.seed is not None:
        train_cfg.seed = args.seed
        train_cfg.model.seed = args.seed
    if args.deterministic is not None:
        train_cfg.deterministic = args.deterministic
    return train_cfg, dataset


def cmd_train(args) -> int:
    train_cfg, dataset = _train_config_from_args(args)
    samples, _ = _load_split(dataset, split="train")
    if not samples:
        raise SystemExit(f"train: dataset at {dataset} is empty")
    out = Path(args.out)
    _write_run_config(out, {"command": "train", "dataset": str(dataset),
                            **train_cfg.to_dict()})
    steps_seen = {"n": 0}

    def log(record):
        steps_seen["n"] = record["step"]
        if record["step"] % max(1, train_cfg.total_steps // 20) == 0:
            print(f"step {record['step']}/{train_cfg.total_steps} "
                  f"loss {record['total']:.4f}")

    train(train_cfg, samples, out_dir=out, log_fn=log)
    print(f"finished {steps_seen['n']} steps; checkpoint at {out / 'checkpoint_final.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    samples, _ = _load_split(args.dataset, split="val")
    if not samples:
        raise SystemExit(f"eval: dataset at {args.dataset} is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.oracle:
        rows = []
        from irrflow import metrics
        for i, s in enumerate(samples):
            p, r, f1 = metrics.occ_f1(s.occ1.astype(float), s.occ1)
            rows.append({"id": s.seed, "epe": metrics.epe(s.flow_fw, s.flow_fw),
                         "fl_all": metrics.fl_all(s.flow_fw, s.flow_fw),
                         "occ_precision": p, "occ_recall": r, "occ_f1": f1})
        from irrflow.metrics import EvalReport
        report = EvalReport.from_rows(rows)
        model = None
    else:
        if not args.checkpoint:
            raise SystemExit("eval: provide --checkpoint (or --oracle)")
        model, _ = load_model(args.checkpoint)
        report = evaluate(model, samples)

    report.write_json(out / "report.json")
    report.write_csv(out / "per_sample.csv")
    _write_run_config(out, {"command": "eval", "dataset": str(args.dataset),
                            "checkpoint": str(args.checkpoint), "oracle": bool(args.oracle),
                            "seed": args.seed})
    if args.visualize and model is not None:
        viz_dir = out / "visuals"
        viz_dir.mkdir(exist_ok=True)
        subset = samples[:args.visualize]
        for i, (sample, pred) in enumerate(zip(subset, predict(model, subset))):
            scale = max(float(np.hypot(sample.flow_fw[..., 0], sample.flow_fw[..., 1]).max()), 1e-6)
            viz.save_flow_image(viz_dir / f"{i:04d}_flow_pred.png", pred["flow_fw"], scale)
            viz.save_flow_image(viz_dir / f"{i:04d}_flow_gt.png", sample.flow_fw, scale)
            if pred["occ1"] is not None:
                viz.save_occ_image(viz_dir / f"{i:04d}_occ_pred.png", pred["occ1"])
                viz.save_occ_image(viz_dir / f"{i:04d}_occ_gt.png", sample.occ1.astype(float))
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_audit_params(args) -> int:
    cfg = load_config(args.config)
    entries = cfg.get("configs", [])
    if not entries:
        raise SystemExit("audit-params: config needs a 'configs' list")
    labelled = [(e["label"], ModelConfig.from_dict(e["model"])) for e in entries]
    rows = audit_params(labelled, cfg.get("baseline", entries[0]["label"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dict_rows = [r.to_dict() for r in rows]
    _write_csv(out / "audit.csv", dict_rows)
    with open(out / "audit.json", "w") as fh:
        json.dump({"baseline": cfg.get("baseline", entries[0]["label"]),
                   "rows": dict_rows}, fh, indent=2, sort_keys=True)
    _write_run_config(out, {"command": "audit-params", "config": cfg, "seed": args.seed})
    for row in dict_rows:
        print(f"{row['label']}: {row['parameters']} params "
              f"({row['relative_change_pct']:+.1f}%)")
    return 0


def cmd_irr_vs_stacking(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    dataset = args.dataset or cfg.get("dataset")
    if dataset is None:
        raise SystemExit("irr-vs-stacking: provide --dataset or a 'dataset' config key")
    base = TrainConfig.from_dict(cfg.get("train", {"model": {"variant": "flownet"}}))
    if args.deterministic is not None:
        base.deterministic = args.deterministic
    train_samples, _ = _load_split(dataset, "train")
    val_samples, _ = _load_split(dataset, "val")
    result = irr_vs_stacking(
        base, train_samples, val_samples,
        iterations=tuple(cfg.get("iterations", (1, 2, 3))),
        modes=tuple(cfg.get("modes", ("shared", "per_stage"))),
        seeds=tuple(cfg.get("seeds", (0, 1, 2))),
        log_fn=lambda row: print(f"{row['mode']} N={row['iterations']} seed={row['seed']}: "
                                 f"EPE {row['epe']:.3f}"),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "comparison_rows.csv", result["rows"])
    _write_csv(out / "comparison.csv", result["aggregates"])
    with open(out / "comparison.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    _write_run_config(out, {"command": "irr-vs-stacking", "dataset": str(dataset),
                            "config": cfg, "seed": args.seed,
                            "train": base.to_dict()})
    for agg in result["aggregates"]:
        print(f"{agg['mode']} N={agg['iterations']}: EPE {agg['epe_mean']:.3f} "
              f"+/- {agg['epe_std']:.3f} ({agg['parameters']} params)")
    return 0


def cmd_oracle_study(args) -> int:
    samples, _ = _load_split(args.dataset, split="val")
    if not samples:
        raise SystemExit(f"oracle-study: dataset at {args.dataset} is empty")
    factors = tuple(int(f) for f in args.factors.split(","))
    result = oracle_study(samples, factors=factors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "oracle_study.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    _write_csv(out / "oracle_study_rows.csv", result["rows"])
    _write_run_config(out, {"command": "oracle-study", "dataset": str(args.dataset),
                            "factors": list(factors), "seed": args.seed})
    for agg in result["aggregates"]:
        print(f"factor {agg['factor']}: mean F1 {agg['f1_mean']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irrflow",
        description="Joint optical flow and occlusion estimation with "
                    "weight-shared iterative refinement.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, checkpoint=False):
        p.add_argument("--config", help="YAML or JSON configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                       default=None, help="bitwise-reproducible mode (default on)")
        if dataset:
            p.add_argument("--dataset", help="dataset directory")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint archive path")

    common(sub.add_parser("generate", help="write a synthetic dataset"))
    common(sub.add_parser("train", help="train a model"), dataset=True)
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval, dataset=True, checkpoint=True)
    p_eval.add_argument("--visualize", type=int, default=0,
                        help="dump flow/occlusion images for the first N samples")
    p_eval.add_argument("--oracle", action="store_true",
                        help="evaluate ground truth against itself")
    common(sub.add_parser("audit-params", help="parameter count audit"))
    common(sub.add_parser("irr-vs-stacking",
                          help="shared vs. per-stage training comparison"), dataset=True)
    p_os = sub.add_parser("oracle-study", help="occlusion resolution round-trip study")
    common(p_os, dataset=True)
    p_os.add_argument("--factors", default="2,4", help="comma-separated downscale factors")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "audit-params": cmd_audit_params,
    "irr-vs-stacking": cmd_irr_vs_stacking,
    "oracle-study": cmd_oracle_study,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "deterministic", None):
        torch.use_deterministic_algorithms(True)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
