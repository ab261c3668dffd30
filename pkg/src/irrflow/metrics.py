"""Evaluation metrics: endpoint error, occlusion F1, outlier rate, and the
occlusion resolution round-trip study.

Numpy-side conventions (matching the on-disk formats): flow fields are float
arrays of shape (H, W, 2) with (u, v) in the last axis; occlusion maps are
(H, W) arrays with 0 = visible, 1 = occluded.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F


def _as_flow(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"{name} must have shape (H, W, 2), got {arr.shape}")
    return arr


def epe(pred, gt, valid_mask=None) -> float:
    """Mean endpoint error over valid pixels."""
    pred = _as_flow("pred", pred)
    gt = _as_flow("gt", gt)
    if pred.shape != gt.shape:
        raise ValueError(f"flow shapes differ: {pred.shape} vs {gt.shape}")
    err = np.sqrt(((pred - gt) ** 2).sum(axis=2))
    if valid_mask is not None:
        valid_mask = np.asarray(valid_mask, dtype=bool)
        if valid_mask.shape != err.shape:
            raise ValueError("valid_mask shape mismatch")
        err = err[valid_mask]
    if err.size == 0:
        raise ValueError("no valid pixels to evaluate")
    return float(math.fsum(err.ravel()) / err.size)


def occ_f1(pred, gt, threshold: float = 0.5):
    """Precision, recall, and F1 of the thresholded occlusion prediction.

    Edge conventions: no positives in either map -> all three are 1; positives
    in exactly one map -> F1 is 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"occlusion shapes differ: {pred.shape} vs {gt.shape}")
    p = pred >= threshold
    g = gt >= 0.5
    tp = int(np.logical_and(p, g).sum())
    fp = int(np.logical_and(p, ~g).sum())
    fn = int(np.logical_and(~p, g).sum())
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def fl_all(pred, gt, valid_mask=None) -> float:
    """Fraction of valid pixels whose error exceeds 3 px and 5% of |gt|."""
    pred = _as_flow("pred", pred)
    gt = _as_flow("gt", gt)
    if pred.shape != gt.shape:
        raise ValueError(f"flow shapes differ: {pred.shape} vs {gt.shape}")
    err = np.sqrt(((pred - gt) ** 2).sum(axis=2))
    mag = np.sqrt((gt ** 2).sum(axis=2))
    outlier = (err > 3.0) & (err > 0.05 * mag)
    if valid_mask is not None:
        valid_mask = np.asarray(valid_mask, dtype=bool)
        outlier = outlier[valid_mask]
    if outlier.size == 0:
        raise ValueError("no valid pixels to evaluate")
    return float(outlier.sum() / outlier.size)


def occ_resolution_oracle(gt, factor: int = 4):
    """Round-trip a binary occlusion map through a coarser resolution.

    Downscales by `factor` with area averaging, binarizes at 0.5, upscales
    back bilinearly, binarizes again, and scores the reconstruction against
    the original.  Returns (f1, report dict).
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim != 2:
        raise ValueError(f"occlusion map must be 2D, got shape {gt.shape}")
    if factor < 1:
        raise ValueError("factor must be >= 1")
    h, w = gt.shape
    if factor == 1:
        recon = gt >= 0.5
    else:
        t = torch.from_numpy(gt)[None, None]
        small_h, small_w = max(1, round(h / factor)), max(1, round(w / factor))
        small = F.interpolate(t, size=(small_h, small_w), mode="area")
        small = (small >= 0.5).double()
        big = F.interpolate(small, size=(h, w), mode="bilinear", align_corners=False)
        recon = (big[0, 0].numpy() >= 0.5)
    precision, recall, f1 = occ_f1(recon.astype(np.float64), gt)
    report = {
        "factor": factor,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "occluded_fraction": float(gt.mean()),
    }
    return f1, report


@dataclass
class EvalReport:
    """Aggregated evaluation results plus optional per-sample rows.

    Per-sample values are aggregated with compensated summation so the report
    is independent of accumulation order.
    """

    epe: float = 0.0
    occ_precision: float | None = None
    occ_recall: float | None = None
    occ_f1: float | None = None
    fl_all: float = 0.0
    count: int = 0
    rows: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows) -> "EvalReport":
        if not rows:
            raise ValueError("cannot aggregate an empty row list")
        has_occ = all(r.get("occ_f1") is not None for r in rows)

        def mean(key):
            return math.fsum(r[key] for r in rows) / len(rows)

        return cls(
            epe=mean("epe"),
            occ_precision=mean("occ_precision") if has_occ else None,
            occ_recall=mean("occ_recall") if has_occ else None,
            occ_f1=mean("occ_f1") if has_occ else None,
            fl_all=mean("fl_all"),
            count=len(rows),
            rows=list(rows),
        )

    def to_dict(self, include_rows: bool = False) -> dict:
        out = {
            "epe": self.epe,
            "occ_precision": self.occ_precision,
            "occ_recall": self.occ_recall,
            "occ_f1": self.occ_f1,
            "fl_all": self.fl_all,
            "count": self.count,
        }
        if include_rows:
            out["rows"] = self.rows
        return out

    def write_json(self, path, include_rows: bool = False) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_rows=include_rows), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        """Flat CSV with one row per evaluated sample."""
        if not self.rows:
            raise ValueError("report has no per-sample rows")
        keys = list(self.rows[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)
