"""Toy-scale training loop, loss wiring over per-step outputs, and evaluation.

Supervision: every refinement state and every upsampling-stage state
contributes one loss row.  A state at scale exponent e is compared at its own
resolution after multiplying its flow by 2**e (back to original-scale
displacement units) against ground truth bilinearly resized to that
resolution; occlusion ground truth is resized and re-binarized at 0.5.  Rows
are aggregated as (1/R) * sum of alpha_r * (l_flow + lambda * l_occ) with the
balance factor computed per row; with uniform weights this matches the
per-iteration/per-level objective up to a positive constant.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from irrflow import fileio, losses, metrics
from irrflow.augment import AugmentConfig, augment
from irrflow.datagen import DataConfig
from irrflow.model import DTYPES, ModelConfig, ModelOutput, build_model
from irrflow.ops import resize_bilinear


@dataclass
class TrainConfig:
    """Settings for one training run; reproducible from (config, seed)."""

    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig | None = None
    learning_rate: float = 3e-4
    lr_decay_steps: int = 0
    lr_decay_factor: float = 0.5
    total_steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    deterministic: bool = True
    forward_only_gt: bool = False
    alpha: list | None = None
    include_upsample_rows: bool = True
    checkpoint_every: int = 0

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items()
               if k not in ("model", "data", "augment")}
        out["model"] = self.model.to_dict()
        out["data"] = self.data.to_dict()
        out["augment"] = self.augment.to_dict() if self.augment else None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["model"] = ModelConfig.from_dict(data.get("model", {}))
        data["data"] = DataConfig.from_dict(data.get("data", {}))
        if data.get("augment"):
            data["augment"] = AugmentConfig.from_dict(data["augment"])
        return cls(**data)


def sample_to_tensors(sample, dtype=torch.float32):
    """Images to zero-centered floats, targets to channel-first tensors."""

    def img(arr):
        return torch.from_numpy(arr.astype(np.float32) / 255.0 - 0.5).permute(2, 0, 1).to(dtype)

    def flow(arr):
        return torch.from_numpy(arr.astype(np.float32)).permute(2, 0, 1).to(dtype)

    def occ(arr):
        return torch.from_numpy(arr.astype(np.float32))[None].to(dtype)

    return {
        "image1": img(sample.image1), "image2": img(sample.image2),
        "gt_fw": flow(sample.flow_fw), "gt_bw": flow(sample.flow_bw),
        "gt_occ1": occ(sample.occ1), "gt_occ2": occ(sample.occ2),
    }


def collate(samples, dtype=torch.float32) -> dict:
    tensors = [sample_to_tensors(s, dtype) for s in samples]
    return {key: torch.stack([t[key] for t in tensors]) for key in tensors[0]}


def _gt_at_scale(gt_flow, h, w):
    """Resize ground-truth flow spatially; values stay in input-pixel units."""
    if gt_flow.shape[2] == h and gt_flow.shape[3] == w:
        return gt_flow
    return resize_bilinear(gt_flow, h, w)


def _occ_at_scale(gt_occ, h, w):
    if gt_occ.shape[2] == h and gt_occ.shape[3] == w:
        return gt_occ
    return (resize_bilinear(gt_occ, h, w) >= 0.5).to(gt_occ.dtype)


def compute_loss(output: ModelOutput, batch: dict, forward_only: bool = False,
                 alpha=None, include_upsample_rows: bool = True) -> losses.LossBreakdown:
    """Per-state loss rows aggregated with adaptive flow/occlusion balancing."""
    states = list(output.states)
    if include_upsample_rows:
        states += list(output.upsample_states)
    rows = []
    for state in states:
        h, w = state.flow_fw.shape[2], state.flow_fw.shape[3]
        scale = float(2 ** state.scale_exp)
        gt_fw = _gt_at_scale(batch["gt_fw"], h, w)
        pred_bw = gt_bw = None
        if state.flow_bw is not None and not forward_only:
            pred_bw = state.flow_bw * scale
            gt_bw = _gt_at_scale(batch["gt_bw"], h, w)
        l_flow = losses.flow_loss(state.flow_fw * scale, gt_fw, pred_bw, gt_bw)
        l_occ = None
        if state.occ1_logits is not None:
            occ1 = state.occ1()
            gt_o1 = _occ_at_scale(batch["gt_occ1"], h, w)
            occ2 = gt_o2 = None
            if state.occ2_logits is not None and not forward_only:
                occ2 = state.occ2()
                gt_o2 = _occ_at_scale(batch["gt_occ2"], h, w)
            l_occ = losses.occ_loss(occ1, gt_o1, occ2, gt_o2)
        rows.append((l_flow, l_occ))
    if alpha is None:
        alpha = [1.0] * len(rows)
    return losses.total_loss_pyramid(rows, alpha)


def train(config: TrainConfig, train_samples, out_dir=None, log_fn=None):
    """Run the optimizer; returns (model, history of per-step breakdowns).

    Deterministic mode fixes all RNG streams and torch's algorithm choices so
    a rerun with the same config reproduces the checkpoint bitwise.
    """
    if not train_samples:
        raise ValueError("no training samples")
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    model = build_model(config.model)
    dtype = DTYPES[config.model.dtype]
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = None
    if config.lr_decay_steps > 0:
        scheduler = torch.optim.lr_scheduler.StepLR(
            opt, step_size=config.lr_decay_steps, gamma=config.lr_decay_factor)

    order_rng = np.random.default_rng([config.seed, 1])
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    history = []
    model.train()
    for step in range(1, config.total_steps + 1):
        idxs = order_rng.integers(0, len(train_samples), size=config.batch_size)
        picked = [train_samples[int(i)] for i in idxs]
        if config.augment is not None:
            picked = [augment(s, seed=int(np.random.default_rng(
                [config.seed, step, j]).integers(0, 2 ** 31)), config=config.augment)
                for j, s in enumerate(picked)]
        batch = collate(picked, dtype)
        output = model(batch["image1"], batch["image2"])
        breakdown = compute_loss(output, batch,
                                 forward_only=config.forward_only_gt,
                                 alpha=config.alpha,
                                 include_upsample_rows=config.include_upsample_rows)
        total = breakdown.total
        if not math.isfinite(float(total.detach())):
            raise RuntimeError(f"non-finite loss at step {step}: {breakdown.rows}")
        opt.zero_grad()
        total.backward()
        opt.step()
        if scheduler is not None:
            scheduler.step()

        record = {
            "step": step,
            "total": float(total.detach()),
            "rows": [{"iteration": r.iteration, "scale": r.scale, "alpha": r.alpha,
                      "flow": r.flow, "occ": r.occ, "lambda": r.lam}
                     for r in breakdown.rows],
        }
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        if out_dir is not None and config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
            fileio.save_checkpoint(out_dir / f"checkpoint_{step:06d}.ckpt", model,
                                   config.model, extra={"step": step})

    model.eval()
    if out_dir is not None:
        fileio.save_checkpoint(out_dir / "checkpoint_final.ckpt", model,
                               config.model, extra={"step": config.total_steps})
        fileio.write_manifest(out_dir / "training_log.jsonl", history)
    return model, history


def load_model(checkpoint_path):
    """Rebuild a model from a checkpoint archive."""
    config_dict, state, extra = fileio.load_checkpoint(checkpoint_path)
    model = build_model(ModelConfig.from_dict(config_dict))
    model.load_state_dict(state)
    model.eval()
    return model, extra


@torch.no_grad()
def predict_images(model, images1, images2, batch_size: int = 8):
    """Final-resolution predictions for arrays of uint8 (N, H, W, 3) images.

    Yields one dict per pair with numpy flow (H, W, 2) fields and, when the
    model has an occlusion head, (H, W) occlusion probability maps.
    """
    dtype = DTYPES[model.config.dtype]

    def to_batch(arr):
        t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype) / 255.0 - 0.5
        return t.permute(0, 3, 1, 2)

    for start in range(0, len(images1), batch_size):
        chunk = slice(start, start + batch_size)
        output = model(to_batch(images1[chunk]), to_batch(images2[chunk]))
        n = output.flow_fw.shape[0]
        flow_fw = output.flow_fw.permute(0, 2, 3, 1).cpu().numpy()
        flow_bw = (output.flow_bw.permute(0, 2, 3, 1).cpu().numpy()
                   if output.flow_bw is not None else [None] * n)
        occ1 = (output.occ1()[:, 0].cpu().numpy()
                if output.final.occ1_logits is not None else [None] * n)
        occ2 = (output.occ2()[:, 0].cpu().numpy()
                if output.final.occ2_logits is not None else [None] * n)
        for i in range(n):
            yield {"flow_fw": flow_fw[i], "flow_bw": flow_bw[i],
                   "occ1": occ1[i], "occ2": occ2[i]}


def predict(model, samples, batch_size: int = 8):
    """Predictions for a list of SceneSample; see `predict_images`."""
    images1 = np.stack([s.image1 for s in samples])
    images2 = np.stack([s.image2 for s in samples])
    yield from predict_images(model, images1, images2, batch_size)


def evaluate(model, samples, batch_size: int = 8, occ_threshold: float = 0.5) -> metrics.EvalReport:
    """EPE / occlusion F1 / Fl-all on the forward direction and first frame."""
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    rows = []
    for sample, pred in zip(samples, predict(model, samples, batch_size)):
        row = {
            "id": sample.seed,
            "epe": metrics.epe(pred["flow_fw"], sample.flow_fw),
            "fl_all": metrics.fl_all(pred["flow_fw"], sample.flow_fw),
        }
        if pred["occ1"] is not None:
            precision, recall, f1 = metrics.occ_f1(pred["occ1"], sample.occ1,
                                                   threshold=occ_threshold)
            row.update(occ_precision=precision, occ_recall=recall, occ_f1=f1)
        else:
            row.update(occ_precision=None, occ_recall=None, occ_f1=None)
        rows.append(row)
    return metrics.EvalReport.from_rows(rows)


def zero_flow_baseline(samples) -> float:
    """Mean ground-truth flow magnitude: the EPE of predicting zero flow."""
    values = [metrics.epe(np.zeros_like(s.flow_fw), s.flow_fw) for s in samples]
    return float(math.fsum(values) / len(values))
