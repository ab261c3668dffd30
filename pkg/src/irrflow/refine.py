"""Learned bilateral refinement of flow and occlusion, and the occlusion
upsampling layer.  Both modules are built once and reused across iteration
steps, pyramid levels, and temporal directions, so they contribute a single
parameter set each.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from irrflow.blocks import KernelHead, ResBlockStack
from irrflow.ops import bilinear_warp, nearest_upsample_x2, resize_bilinear, upsample_flow_x2


def apply_bilateral(field: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
    """Filter a single-channel field with per-pixel window kernels.

    output(x, y) = sum over the window of kernel(x, y) * field patch, with
    zero padding at the borders.  Differentiable in both arguments.

    Args:
        field: (B, 1, H, W) single-channel grid (u, v, or occlusion logits).
        kernels: (B, win*win, H, W) per-pixel kernels, row-major window order.
    """
    if field.dim() != 4 or field.shape[1] != 1:
        raise ValueError(f"field must be (B, 1, H, W), got {tuple(field.shape)}")
    b, k2, h, w = kernels.shape
    win = int(round(k2 ** 0.5))
    if win * win != k2:
        raise ValueError(f"kernel channel count {k2} is not a square")
    if field.shape[0] != b or field.shape[2] != h or field.shape[3] != w:
        raise ValueError(f"kernels {tuple(kernels.shape)} do not align with field {tuple(field.shape)}")
    patches = F.unfold(field, kernel_size=win, padding=win // 2).reshape(b, k2, h, w)
    return (kernels * patches).sum(dim=1, keepdim=True)


class BilateralRefiner(nn.Module):
    """Per-pixel learned filters applied to each flow component and to the
    occlusion logits; separate kernel heads for flow and occlusion since
    motion and occlusion boundaries need not coincide.
    """

    def __init__(self, feature_channels: int, window: int = 5, width: int = 32,
                 occlusion: bool = True):
        super().__init__()
        self.window = window
        self.flow_kernels = KernelHead(feature_channels + 2, window=window, width=width)
        self.occ_kernels = (
            KernelHead(1 + 2 * feature_channels, window=window, width=width)
            if occlusion else None
        )

    def refine_flow(self, feature: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
        kernels = self.flow_kernels(torch.cat([feature, flow], dim=1))
        u = apply_bilateral(flow[:, 0:1], kernels)
        v = apply_bilateral(flow[:, 1:2], kernels)
        return torch.cat([u, v], dim=1)

    def refine_occ(self, occ_logits, feature, warped_other_feature) -> torch.Tensor:
        if self.occ_kernels is None:
            raise RuntimeError("refiner was built without an occlusion kernel head")
        kernels = self.occ_kernels(torch.cat([occ_logits, feature, warped_other_feature], dim=1))
        return apply_bilateral(occ_logits, kernels)


class OcclusionUpsampler(nn.Module):
    """Doubles occlusion resolution: nearest-neighbor upsampling plus a
    learned residual from a weight-shared residual-block stack.

    All inputs arrive at the coarse resolution.  The stack consumes the
    nearest-upsampled occlusion, bilinearly upsampled flow, the frame's
    feature map, and the other direction's flow and feature map warped by the
    forward flow before upsampling.
    """

    def __init__(self, feature_channels: int, width: int = 16):
        super().__init__()
        in_channels = 1 + 2 + feature_channels + 2 + feature_channels
        self.stack = ResBlockStack(in_channels, width=width)

    def forward(self, occ_logits, flow_own, flow_other, feat_own, feat_other) -> torch.Tensor:
        shapes = {tuple(x.shape[2:]) for x in (occ_logits, flow_own, flow_other, feat_own, feat_other)}
        if len(shapes) != 1:
            raise ValueError(f"upsampler inputs disagree on resolution: {sorted(shapes)}")
        h2, w2 = 2 * occ_logits.shape[2], 2 * occ_logits.shape[3]
        occ_up = nearest_upsample_x2(occ_logits)
        flow_up = upsample_flow_x2(flow_own)
        other_flow_warped = bilinear_warp(flow_other, flow_own)
        other_feat_warped = bilinear_warp(feat_other, flow_own)
        x = torch.cat([
            occ_up,
            flow_up,
            resize_bilinear(feat_own, h2, w2),
            upsample_flow_x2(other_flow_warped),
            resize_bilinear(other_feat_warped, h2, w2),
        ], dim=1)
        return occ_up + self.stack(x)
