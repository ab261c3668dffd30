"""Experiment drivers: parameter audits, shared-vs-stacked training
comparisons, and the occlusion resolution study.
"""

import copy
import math
from dataclasses import dataclass

import numpy as np

from irrflow import metrics
from irrflow.model import ModelConfig, build_model, count_parameters
from irrflow.train import TrainConfig, evaluate, train


@dataclass
class AuditRow:
    """One audited configuration: its size and the change vs. the baseline."""

    label: str
    parameters: int
    relative_change_pct: float
    epe: float | None = None
    occ_f1: float | None = None

    def to_dict(self) -> dict:
        return {"label": self.label, "parameters": self.parameters,
                "relative_change_pct": self.relative_change_pct,
                "epe": self.epe, "occ_f1": self.occ_f1}


def audit_params(labelled_configs, baseline: str) -> list:
    """Count parameters for each config and report deltas vs. the baseline.

    labelled_configs: list of (label, ModelConfig); baseline must be one of
    the labels.  relative change = (count - baseline) / baseline * 100.
    """
    counts = {}
    for label, config in labelled_configs:
        counts[label] = count_parameters(build_model(config))[0]
    if baseline not in counts:
        raise ValueError(f"unknown baseline label {baseline!r}; have {sorted(counts)}")
    base = counts[baseline]
    return [AuditRow(label=label, parameters=count,
                     relative_change_pct=100.0 * (count - base) / base)
            for label, count in counts.items()]


def irr_vs_stacking(base: TrainConfig, train_samples, val_samples,
                    iterations=(1, 2, 3), modes=("shared", "per_stage"),
                    seeds=(0, 1, 2), log_fn=None) -> dict:
    """Train matched models over an iteration grid in both sharing modes.

    Every run varies only the iteration count, sharing mode, and seed (the
    seed drives both weight init and data order).  Returns per-run rows and
    per-(mode, iterations) aggregates of held-out EPE.
    """
    if base.model.variant != "flownet":
        raise ValueError("the iteration grid requires the flownet variant")
    rows = []
    for mode in modes:
        for n in iterations:
            for seed in seeds:
                cfg = copy.deepcopy(base)
                cfg.model.iterations = n
                cfg.model.weight_sharing = mode
                cfg.model.seed = seed
                cfg.seed = seed
                model, _ = train(cfg, train_samples)
                report = evaluate(model, val_samples)
                row = {
                    "mode": mode, "iterations": n, "seed": seed,
                    "epe": report.epe, "occ_f1": report.occ_f1,
                    "parameters": count_parameters(model)[0],
                }
                rows.append(row)
                if log_fn is not None:
                    log_fn(row)
    aggregates = []
    for mode in modes:
        for n in iterations:
            epes = [r["epe"] for r in rows if r["mode"] == mode and r["iterations"] == n]
            f1s = [r["occ_f1"] for r in rows if r["mode"] == mode and r["iterations"] == n
                   and r["occ_f1"] is not None]
            aggregates.append({
                "mode": mode, "iterations": n,
                "epe_mean": float(np.mean(epes)), "epe_std": float(np.std(epes)),
                "occ_f1_mean": float(np.mean(f1s)) if f1s else None,
                "parameters": [r["parameters"] for r in rows
                               if r["mode"] == mode and r["iterations"] == n][0],
            })
    return {"rows": rows, "aggregates": aggregates}


def _erode(occ: np.ndarray) -> np.ndarray:
    """3x3 binary erosion with zero padding."""
    occ = occ.astype(bool)
    padded = np.pad(occ, 1, constant_values=False)
    out = occ.copy()
    h, w = occ.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out &= padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    return out


def occlusion_thinness(occ: np.ndarray) -> float | None:
    """Fraction of occluded pixels destroyed by one erosion; None if empty.

    1.0 means every occluded pixel sits on a thin structure, 0.0 a solid
    blob interior.
    """
    occ = np.asarray(occ) >= 0.5
    total = int(occ.sum())
    if total == 0:
        return None
    return 1.0 - float(_erode(occ).sum()) / total


def oracle_study(samples, factors=(2, 4)) -> dict:
    """Round-trip every occlusion map through coarser resolutions.

    Reports aggregate F1 per factor plus a breakdown over occlusion thinness
    buckets (thin >= 2/3, thick < 1/3 destroyed by erosion).
    """
    if not samples:
        raise ValueError("oracle study needs a non-empty dataset")
    per_map = []
    for i, sample in enumerate(samples):
        thinness = occlusion_thinness(sample.occ1)
        for factor in factors:
            f1, _ = metrics.occ_resolution_oracle(sample.occ1, factor=factor)
            per_map.append({"id": i, "factor": factor, "f1": f1, "thinness": thinness})

    def bucket(t):
        if t is None:
            return "empty"
        if t >= 2 / 3:
            return "thin"
        if t >= 1 / 3:
            return "medium"
        return "thick"

    aggregates = []
    for factor in factors:
        rows = [r for r in per_map if r["factor"] == factor]
        agg = {"factor": factor,
               "f1_mean": math.fsum(r["f1"] for r in rows) / len(rows)}
        for name in ("thin", "medium", "thick", "empty"):
            sub = [r["f1"] for r in rows if bucket(r["thinness"]) == name]
            agg[f"f1_{name}"] = math.fsum(sub) / len(sub) if sub else None
            agg[f"count_{name}"] = len(sub)
        aggregates.append(agg)
    return {"rows": per_map, "aggregates": aggregates}
