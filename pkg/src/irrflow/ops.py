"""Differentiable building blocks: warping, cost volume, resizing, channel adaptation.

Conventions used throughout the package:
  * images / feature maps are tensors of shape (B, C, H, W)
  * flow fields are tensors of shape (B, 2, H, W); channel 0 is the horizontal
    displacement u (along W), channel 1 the vertical displacement v (along H),
    both in pixels at the field's own resolution
  * occlusion maps are tensors of shape (B, 1, H, W)
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def _check_4d(name, x):
    if not torch.is_tensor(x) or x.dim() != 4:
        raise ValueError(f"{name} must be a 4D (B, C, H, W) tensor, got {getattr(x, 'shape', type(x))}")


def bilinear_warp(src: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp `src` by `flow` with bilinear sampling.

    output(x, y, c) = src sampled at (x + u(x, y), y + v(x, y)).  Sample
    locations outside the grid contribute zero (zero padding), so values
    attenuate smoothly at the border.  Differentiable in both arguments.

    Args:
        src: (B, C, H, W) tensor to sample from.
        flow: (B, 2, H, W) displacement field in pixels.

    Returns:
        (B, C, H, W) warped tensor.
    """
    _check_4d("src", src)
    _check_4d("flow", flow)
    b, c, h, w = src.shape
    if flow.shape[0] != b or flow.shape[1] != 2 or flow.shape[2] != h or flow.shape[3] != w:
        raise ValueError(f"flow shape {tuple(flow.shape)} does not match src shape {tuple(src.shape)}")

    device, dtype = src.device, flow.dtype
    grid_y, grid_x = torch.meshgrid(
        torch.arange(h, device=device, dtype=dtype),
        torch.arange(w, device=device, dtype=dtype),
        indexing="ij",
    )
    x = grid_x.unsqueeze(0) + flow[:, 0]  # (B, H, W)
    y = grid_y.unsqueeze(0) + flow[:, 1]

    x0 = torch.floor(x)
    y0 = torch.floor(y)
    wx1 = x - x0
    wy1 = y - y0

    out = src.new_zeros(b, c, h, w)
    for dy, wy in ((0, 1.0 - wy1), (1, wy1)):
        for dx, wx in ((0, 1.0 - wx1), (1, wx1)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
            weight = (wx * wy * valid).unsqueeze(1)  # (B, 1, H, W)
            xi = xi.clamp(0, w - 1).long()
            yi = yi.clamp(0, h - 1).long()
            idx = (yi * w + xi).unsqueeze(1).expand(b, c, h, w)
            out = out + weight * torch.gather(src.reshape(b, c, h * w), 2, idx.reshape(b, c, h * w)).reshape(b, c, h, w)
    return out


def cost_volume(f1: torch.Tensor, f2w: torch.Tensor, max_displacement: int = 4) -> torch.Tensor:
    """Correlation cost volume between two aligned feature maps.

    Entry (dx, dy) at (x, y) is the channel-mean of f1(x, y) * f2w(x+dx, y+dy)
    for |dx|, |dy| <= max_displacement; positions outside the grid count as
    zero.  Displacements are enumerated row-major (dy outer, dx inner), giving
    (2d+1)^2 output channels.

    Args:
        f1: (B, C, H, W) reference features.
        f2w: (B, C, H, W) (typically warped) target features.
        max_displacement: search radius d in pixels.

    Returns:
        (B, (2d+1)^2, H, W) cost volume.
    """
    _check_4d("f1", f1)
    _check_4d("f2w", f2w)
    if f1.shape != f2w.shape:
        raise ValueError(f"feature shapes differ: {tuple(f1.shape)} vs {tuple(f2w.shape)}")
    d = int(max_displacement)
    if d < 0:
        raise ValueError("max_displacement must be >= 0")

    b, c, h, w = f1.shape
    padded = F.pad(f2w, (d, d, d, d))
    rows = []
    for dy in range(-d, d + 1):
        for dx in range(-d, d + 1):
            shifted = padded[:, :, d + dy : d + dy + h, d + dx : d + dx + w]
            rows.append((f1 * shifted).mean(dim=1, keepdim=True))
    return torch.cat(rows, dim=1)


def resize_bilinear(x: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    """Standard align-corners-false bilinear resize to (target_h, target_w)."""
    _check_4d("x", x)
    if target_h < 1 or target_w < 1:
        raise ValueError(f"invalid target size ({target_h}, {target_w})")
    if x.shape[2] == target_h and x.shape[3] == target_w:
        return x
    return F.interpolate(x, size=(target_h, target_w), mode="bilinear", align_corners=False)


def upsample_flow_x2(flow: torch.Tensor) -> torch.Tensor:
    """Double the resolution of a flow field, scaling displacements by 2."""
    _check_4d("flow", flow)
    if flow.shape[1] != 2:
        raise ValueError(f"flow must have 2 channels, got {flow.shape[1]}")
    return resize_bilinear(flow, 2 * flow.shape[2], 2 * flow.shape[3]) * 2.0


def upsample_flow_to(flow: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    """Resize a flow field to a new resolution, rescaling displacement values.

    u is multiplied by target_w / W and v by target_h / H so displacements stay
    in pixels at the output resolution.
    """
    _check_4d("flow", flow)
    if flow.shape[1] != 2:
        raise ValueError(f"flow must have 2 channels, got {flow.shape[1]}")
    h, w = flow.shape[2], flow.shape[3]
    up = resize_bilinear(flow, target_h, target_w)
    scale = torch.tensor([target_w / w, target_h / h], dtype=flow.dtype, device=flow.device)
    return up * scale.view(1, 2, 1, 1)


def nearest_upsample_x2(x: torch.Tensor) -> torch.Tensor:
    """Nearest-neighbor 2x upsampling."""
    _check_4d("x", x)
    return F.interpolate(x, scale_factor=2, mode="nearest")


class ChannelAdapter(nn.Module):
    """1x1 convolution mapping a level-specific channel count to a fixed width.

    One adapter per pyramid level lets a single shared decoder consume feature
    maps whose channel counts differ across levels.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        if out_channels < 1:
            raise ValueError("out_channels must be >= 1")
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.conv.in_channels:
            raise ValueError(f"expected {self.conv.in_channels} input channels, got {x.shape[1]}")
        return self.conv(x)
