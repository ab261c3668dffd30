"""Training objective: L2,1 flow loss, weighted occlusion cross-entropy,
adaptive flow/occlusion balancing, and per-iteration aggregation.

All loss functions sum over pixels and average over the batch dimension, so a
batch of one reproduces the per-image definitions exactly.  Ground truth for
either temporal direction may be absent (None); present terms are then
averaged over the directions that do have supervision.
"""

from dataclasses import dataclass, field

import torch

EPS_PROB = 1e-7  # clamp for probabilities inside logarithms
MIN_WEIGHT_DENOM = 1.0  # one pixel-equivalent, guards all-visible scenes


def flow_loss(pred_fw, gt_fw, pred_bw=None, gt_bw=None) -> torch.Tensor:
    """Per-pixel L2-norm flow error, summed over pixels.

    Both directions present contribute half each; with ground truth for a
    single direction the term enters with coefficient one.
    """
    terms = []
    for pred, gt in ((pred_fw, gt_fw), (pred_bw, gt_bw)):
        if gt is None or pred is None:
            continue
        if pred.shape != gt.shape:
            raise ValueError(f"flow shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
        err = torch.linalg.vector_norm(pred - gt, dim=1)  # (B, H, W)
        terms.append(err.sum(dim=(1, 2)).mean())
    if not terms:
        raise ValueError("flow_loss needs ground truth for at least one direction")
    return sum(terms) / len(terms)


def occ_weights(pred: torch.Tensor, gt: torch.Tensor):
    """Class weights balancing occluded vs. visible pixels.

    w     = H*W / (sum(pred) + sum(gt))
    w_bar = H*W / (sum(1 - pred) + sum(1 - gt))

    Denominators are clamped below by one pixel-equivalent so degenerate
    (all-visible or all-occluded) maps stay finite.  Returns per-sample (B,)
    tensors, detached: the weights rebalance the loss, gradients do not flow
    through them.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"occlusion shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    n = pred.shape[2] * pred.shape[3]
    pos = (pred.sum(dim=(1, 2, 3)) + gt.sum(dim=(1, 2, 3))).clamp_min(MIN_WEIGHT_DENOM)
    neg = ((1 - pred).sum(dim=(1, 2, 3)) + (1 - gt).sum(dim=(1, 2, 3))).clamp_min(MIN_WEIGHT_DENOM)
    return (n / pos).detach(), (n / neg).detach()


def occ_loss(pred1, gt1, pred2=None, gt2=None, weights1=None, weights2=None) -> torch.Tensor:
    """Class-weighted binary cross-entropy on occlusion probabilities.

    Predictions are clamped to [EPS_PROB, 1 - EPS_PROB] inside the logarithms;
    frames without ground truth are skipped and the rest averaged.  Weights
    default to `occ_weights` of the given maps (constants w.r.t. gradients);
    pass explicit (w_pos, w_neg) pairs to pin them, e.g. for gradient checks
    of the differentiable path.
    """
    terms = []
    for pred, gt, weights in ((pred1, gt1, weights1), (pred2, gt2, weights2)):
        if gt is None or pred is None:
            continue
        if pred.shape != gt.shape:
            raise ValueError(f"occlusion shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
        w_pos, w_neg = occ_weights(pred, gt) if weights is None else weights
        w_pos = torch.as_tensor(w_pos, dtype=pred.dtype).reshape(-1)
        w_neg = torch.as_tensor(w_neg, dtype=pred.dtype).reshape(-1)
        p = pred.clamp(EPS_PROB, 1.0 - EPS_PROB)
        per_pixel = -(gt * torch.log(p) * w_pos.view(-1, 1, 1, 1)
                      + (1 - gt) * torch.log(1 - p) * w_neg.view(-1, 1, 1, 1))
        terms.append(per_pixel.sum(dim=(1, 2, 3)).mean())
    if not terms:
        raise ValueError("occ_loss needs ground truth for at least one frame")
    return sum(terms) / len(terms)


def adaptive_lambda(l_flow, l_occ) -> torch.Tensor:
    """Balance factor making lambda * l_occ == l_flow.

    Treated as a constant w.r.t. gradients; zero when the occlusion loss is
    zero so degenerate steps stay well-defined.  The division runs in double
    precision so the balance identity holds to tight tolerance even when the
    losses themselves are single precision.
    """
    if not torch.is_tensor(l_flow):
        l_flow = torch.tensor(float(l_flow), dtype=torch.float64)
    if not torch.is_tensor(l_occ):
        l_occ = torch.tensor(float(l_occ), dtype=torch.float64)
    if float(l_occ.detach()) == 0.0:
        return torch.zeros((), dtype=torch.float64)
    return (l_flow.double() / l_occ.double()).detach()


@dataclass
class LossRow:
    """One supervised output: its losses, balance factor, and weight."""

    iteration: int
    scale: int
    alpha: float
    flow: float
    occ: float | None
    lam: float

    @property
    def weighted(self) -> float:
        occ_term = self.lam * self.occ if self.occ is not None else 0.0
        return self.alpha * (self.flow + occ_term)


@dataclass
class LossBreakdown:
    """All loss rows plus the aggregated differentiable total.

    total = (1 / iterations) * sum of row.weighted; `recompute_total` rebuilds
    that sum from the recorded floats for auditing.
    """

    rows: list = field(default_factory=list)
    iterations: int = 0
    total: torch.Tensor = None

    def recompute_total(self) -> float:
        return sum(row.weighted for row in self.rows) / self.iterations


def _aggregate(per_iter_per_scale, alpha_of) -> LossBreakdown:
    breakdown = LossBreakdown(iterations=len(per_iter_per_scale))
    total = None
    for i, per_scale in enumerate(per_iter_per_scale):
        for s, (l_flow, l_occ) in enumerate(per_scale):
            a = alpha_of(i, s)
            if l_occ is not None:
                lam = adaptive_lambda(l_flow, l_occ)
                term = a * (l_flow + lam * l_occ)
            else:
                lam = torch.tensor(0.0)
                term = a * l_flow
            total = term if total is None else total + term
            breakdown.rows.append(LossRow(
                iteration=i, scale=s, alpha=float(a),
                flow=float(l_flow.detach()) if torch.is_tensor(l_flow) else float(l_flow),
                occ=(float(l_occ.detach()) if torch.is_tensor(l_occ) else float(l_occ))
                    if l_occ is not None else None,
                lam=float(lam),
            ))
    breakdown.total = total / breakdown.iterations
    return breakdown


def total_loss_iterative(per_iter_per_scale, alpha) -> LossBreakdown:
    """(1/N) sum_i sum_s alpha_s * (l_flow[i,s] + lambda[i,s] * l_occ[i,s]).

    per_iter_per_scale: N iterations, each a list of S (l_flow, l_occ) pairs
    (l_occ may be None); alpha has one weight per scale.  The balance factor
    is computed per (iteration, scale) pair.
    """
    if not per_iter_per_scale:
        raise ValueError("need at least one iteration")
    for per_scale in per_iter_per_scale:
        if len(per_scale) != len(alpha):
            raise ValueError(f"expected {len(alpha)} scales, got {len(per_scale)}")
    return _aggregate(per_iter_per_scale, lambda i, s: alpha[s])


def total_loss_pyramid(per_level, alpha) -> LossBreakdown:
    """(1/N) sum_i alpha_i * (l_flow[i] + lambda[i] * l_occ[i]).

    per_level: N (l_flow, l_occ) pairs, coarse to fine, each already computed
    on flow rescaled to original-scale displacement units; alpha has one
    weight per level.
    """
    if not per_level:
        raise ValueError("need at least one level")
    if len(alpha) != len(per_level):
        raise ValueError(f"expected {len(per_level)} level weights, got {len(alpha)}")
    return _aggregate([[pair] for pair in per_level], lambda i, s: alpha[i])
