"""Network building blocks: encoder pyramid, decoders, kernel heads, and
residual blocks.  All convolutions are 3x3 with LeakyReLU(0.1) activations
unless noted; output heads are linear.
"""

import torch
import torch.nn as nn


def conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1),
        nn.LeakyReLU(0.1, inplace=True),
    )


class FeatureEncoder(nn.Module):
    """Strided convolutional pyramid shared by both frames.

    Stage i halves the resolution, so stage i sits at scale 1/2**(i+1) of the
    input.  `forward` returns the per-stage feature maps fine to coarse.
    """

    def __init__(self, widths, in_channels: int = 3):
        super().__init__()
        if not widths:
            raise ValueError("need at least one encoder stage")
        stages = []
        prev = in_channels
        for w in widths:
            stages.append(nn.Sequential(conv(prev, w, stride=2), conv(w, w)))
            prev = w
        self.stages = nn.ModuleList(stages)
        self.widths = tuple(widths)

    def forward(self, image: torch.Tensor) -> list:
        if image.dim() != 4:
            raise ValueError(f"expected (B, C, H, W) image, got shape {tuple(image.shape)}")
        feats = []
        x = image
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ConvDecoder(nn.Module):
    """Plain convolutional decoder: `depth` hidden convs plus a linear head.

    Used for both flow (2 output channels) and occlusion (1 channel); the
    residual structure of the refinement lives in the caller, which adds the
    head output to the previous estimate.
    """

    def __init__(self, in_channels: int, out_channels: int, width: int = 32, depth: int = 5):
        super().__init__()
        if depth < 1:
            raise ValueError("decoder depth must be >= 1")
        layers = [conv(in_channels, width)]
        for _ in range(depth - 1):
            layers.append(conv(width, width))
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(width, out_channels, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(x))


class KernelHead(nn.Module):
    """Predicts per-pixel, softmax-normalized window x window filter kernels.

    The softmax over the window dimension guarantees nonnegative weights that
    sum to one at every pixel.
    """

    def __init__(self, in_channels: int, window: int = 5, width: int = 32, depth: int = 2):
        super().__init__()
        if window < 1 or window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {window}")
        self.window = window
        layers = [conv(in_channels, width)]
        for _ in range(depth - 1):
            layers.append(conv(width, width))
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(width, window * window, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = self.head(self.body(x))
        return torch.softmax(logits, dim=1)


class ResBlock(nn.Module):
    """Conv -> ReLU -> Conv -> scale-multiply, added to the input."""

    def __init__(self, width: int, res_scale: float = 0.1):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.res_scale = res_scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.res_scale * self.conv2(torch.relu(self.conv1(x)))


class ResBlockStack(nn.Module):
    """Entry conv, one residual block applied three times (shared weights),
    a mid conv with a skip from the entry, and a 1-channel output conv.
    """

    APPLICATIONS = 3

    def __init__(self, in_channels: int, width: int = 32):
        super().__init__()
        self.entry = nn.Conv2d(in_channels, width, kernel_size=3, padding=1)
        self.block = ResBlock(width)
        self.mid = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.head = nn.Conv2d(width, 1, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y0 = self.entry(x)
        y = y0
        for _ in range(self.APPLICATIONS):
            y = self.block(y)
        y = self.mid(y) + y0
        return self.head(y)


def zero_head(module: nn.Module) -> None:
    """Zero a decoder/stack output head in place (makes residuals vanish)."""
    with torch.no_grad():
        module.head.weight.zero_()
        if module.head.bias is not None:
            module.head.bias.zero_()
