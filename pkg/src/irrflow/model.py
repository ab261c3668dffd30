"""Model configuration, the two iterative-refinement drivers, and parameter
accounting.

Two variants share the same machinery:

* ``flownet``: a fixed-resolution driver that re-applies one decoder N times
  at the chosen encoder level, warping the second frame's features by the
  current flow before each pass and adding the predicted residual.
* ``pwc``: a coarse-to-fine driver that walks the feature pyramid, upsampling
  and doubling the previous level's flow, warping, building a cost volume,
  and decoding a residual at each level's native resolution with one shared
  decoder behind per-level 1x1 channel adapters.

In ``shared`` weight-sharing mode each decoder (and kernel head) is a single
module reused for every step/level and both temporal directions, so the
parameter count is independent of the iteration count; ``per_stage`` mode
instantiates one copy per step for stacking-style comparisons.
"""

import copy
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from irrflow.blocks import ConvDecoder, FeatureEncoder
from irrflow.ops import (
    ChannelAdapter,
    bilinear_warp,
    cost_volume,
    resize_bilinear,
    upsample_flow_x2,
)
from irrflow.refine import BilateralRefiner, OcclusionUpsampler

VARIANTS = ("flownet", "pwc")
SHARING_MODES = ("shared", "per_stage")
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelConfig:
    """Architecture and toggle settings for both variants.

    `levels` is the number of pyramid levels iterated by the pwc variant and
    the encoder depth of the flownet variant.  `iterations` only applies to
    flownet (for pwc it always equals `levels`).  The finest pwc estimation
    level sits at 1/2**base_scale_exp of the input resolution; the remaining
    factor is covered by the upsampling stage.
    """

    variant: str = "pwc"
    levels: int = 3
    iterations: int | None = None
    encoder_widths: tuple | None = None
    decoder_width: int = 32
    decoder_depth: int = 5
    adapter_channels: int = 32
    cost_radius: int = 4
    warp_level: int | None = None
    base_scale_exp: int = 2
    bidirectional: bool = False
    occlusion: bool = False
    bilateral_refinement: bool = False
    occlusion_upsampling: bool = False
    weight_sharing: str = "shared"
    window: int = 5
    kernel_head_width: int = 32
    upsampler_width: int = 16
    upsampler_feature_channels: int = 8
    dtype: str = "float32"
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.weight_sharing not in SHARING_MODES:
            raise ValueError(f"unknown weight_sharing {self.weight_sharing!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.variant == "pwc":
            if self.iterations is not None and self.iterations != self.levels:
                raise ValueError("pwc runs one iteration per pyramid level; leave iterations unset")
            if self.base_scale_exp < 1:
                raise ValueError("base_scale_exp must be >= 1")
        else:
            if self.num_steps < 1:
                raise ValueError("iterations must be >= 1")
            wl = self.resolved_warp_level
            if not 1 <= wl <= self.levels:
                raise ValueError(f"warp_level must be in 1..{self.levels}, got {wl}")
        if self.cost_radius < 0:
            raise ValueError("cost_radius must be >= 0")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 1")
        if self.occlusion_upsampling and not self.occlusion:
            raise ValueError("occlusion_upsampling requires the occlusion head")
        if self.occlusion_upsampling and not self.bidirectional:
            raise ValueError("occlusion_upsampling uses both directions; enable bidirectional")
        if len(self.resolved_encoder_widths) != self.num_encoder_stages:
            raise ValueError(
                f"encoder_widths must have {self.num_encoder_stages} entries, "
                f"got {len(self.resolved_encoder_widths)}")

    @property
    def num_steps(self) -> int:
        if self.variant == "pwc":
            return self.levels
        return 3 if self.iterations is None else self.iterations

    @property
    def resolved_warp_level(self) -> int:
        return self.levels if self.warp_level is None else self.warp_level

    @property
    def num_encoder_stages(self) -> int:
        if self.variant == "pwc":
            return self.levels + self.base_scale_exp - 1
        return self.levels

    @property
    def output_scale_exp(self) -> int:
        """Scale exponent of the finest estimated flow/occlusion."""
        return self.base_scale_exp if self.variant == "pwc" else self.resolved_warp_level

    @property
    def estimation_exps(self) -> list:
        """Scale exponents visited by the refinement loop, coarse to fine."""
        if self.variant == "pwc":
            start = self.base_scale_exp + self.levels - 1
            return list(range(start, self.base_scale_exp - 1, -1))
        return [self.resolved_warp_level] * self.num_steps

    @property
    def resolved_encoder_widths(self) -> tuple:
        if self.encoder_widths is not None:
            return tuple(self.encoder_widths)
        return tuple(min(16 * 2 ** i, 64) for i in range(self.num_encoder_stages))

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["encoder_widths"] is not None:
            out["encoder_widths"] = list(out["encoder_widths"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        if data.get("encoder_widths") is not None:
            data["encoder_widths"] = tuple(data["encoder_widths"])
        return cls(**data)


@dataclass
class IterationState:
    """Estimates after one refinement step, at that step's native resolution.

    Occlusion is carried as logits; residual updates add on logits and the
    sigmoid is applied where a probability map is consumed.
    """

    step: int
    scale_exp: int
    flow_fw: torch.Tensor
    flow_bw: torch.Tensor | None = None
    occ1_logits: torch.Tensor | None = None
    occ2_logits: torch.Tensor | None = None

    def occ1(self):
        return torch.sigmoid(self.occ1_logits) if self.occ1_logits is not None else None

    def occ2(self):
        return torch.sigmoid(self.occ2_logits) if self.occ2_logits is not None else None


@dataclass
class ModelOutput:
    """Per-step states plus final estimates at the input resolution.

    `states` has exactly one entry per refinement step; `upsample_states`
    covers the output stage that returns to full resolution (one entry per 2x
    application, the last one at the input scale).
    """

    states: list
    upsample_states: list = field(default_factory=list)

    @property
    def final(self) -> IterationState:
        return self.upsample_states[-1] if self.upsample_states else self.states[-1]

    @property
    def flow_fw(self):
        return self.final.flow_fw

    @property
    def flow_bw(self):
        return self.final.flow_bw

    def occ1(self):
        return self.final.occ1()

    def occ2(self):
        return self.final.occ2()


def bidirectional_apply(decoder, inputs_fw, inputs_bw):
    """Run the same decoder on both input orderings.

    Decoding the swapped ordering yields the backward-direction estimate
    without any additional convolutional weights.
    """
    return decoder(inputs_fw), decoder(inputs_bw)


class _IRRBase(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.encoder = FeatureEncoder(config.resolved_encoder_widths)

        n_copies = 1 if config.weight_sharing == "shared" else config.num_steps
        self.flow_decoders = nn.ModuleList(
            [self._make_decoder(out_channels=2) for _ in range(n_copies)])
        if config.occlusion:
            self.occ_decoders = nn.ModuleList(
                [self._make_decoder(out_channels=1, occlusion=True) for _ in range(n_copies)])
        if config.bilateral_refinement:
            self.refiners = nn.ModuleList([
                BilateralRefiner(
                    self._refiner_feature_channels(),
                    window=config.window,
                    width=config.kernel_head_width,
                    occlusion=config.occlusion,
                ) for _ in range(n_copies)
            ])
        if config.occlusion_upsampling:
            self.occ_upsampler = OcclusionUpsampler(
                config.upsampler_feature_channels, width=config.upsampler_width)
            widths = config.resolved_encoder_widths
            self.upsampler_feature_adapters = nn.ModuleList([
                ChannelAdapter(widths[exp - 1], config.upsampler_feature_channels)
                for exp in range(config.output_scale_exp, 0, -1)
            ])

    def _make_decoder(self, out_channels: int, occlusion: bool = False) -> ConvDecoder:
        raise NotImplementedError

    def _refiner_feature_channels(self) -> int:
        raise NotImplementedError

    def _pick(self, modules: nn.ModuleList, step_idx: int) -> nn.Module:
        return modules[0] if self.config.weight_sharing == "shared" else modules[step_idx]

    def flow_decoder(self, step_idx: int = 0) -> nn.Module:
        return self._pick(self.flow_decoders, step_idx)

    def occ_decoder(self, step_idx: int = 0) -> nn.Module:
        return self._pick(self.occ_decoders, step_idx)

    def refiner(self, step_idx: int = 0) -> BilateralRefiner:
        return self._pick(self.refiners, step_idx)

    def _check_images(self, image1, image2):
        for name, img in (("image1", image1), ("image2", image2)):
            if img.dim() != 4 or img.shape[1] != 3:
                raise ValueError(f"{name} must be (B, 3, H, W), got {tuple(img.shape)}")
        if image1.shape != image2.shape:
            raise ValueError("image pair shapes differ")
        h, w = image1.shape[2], image1.shape[3]
        div = 2 ** self.config.num_encoder_stages
        if h % div or w % div:
            raise ValueError(f"image size ({h}, {w}) must be divisible by {div}")

    def _init_state(self, feat):
        b, _, h, w = feat.shape
        flow = feat.new_zeros(b, 2, h, w)
        occ = feat.new_zeros(b, 1, h, w) if self.config.occlusion else None
        return flow, occ

    def forward(self, image1: torch.Tensor, image2: torch.Tensor) -> ModelOutput:
        self._check_images(image1, image2)
        pyr1 = self.encoder(image1)
        pyr2 = self.encoder(image2)

        cfg = self.config
        states = []
        flow_fw = flow_bw = occ1 = occ2 = None
        for i, exp in enumerate(cfg.estimation_exps):
            f1, f2 = pyr1[exp - 1], pyr2[exp - 1]
            if i == 0:
                flow_fw, occ1 = self._init_state(f1)
                if cfg.bidirectional:
                    flow_bw, occ2 = self._init_state(f2)
            elif exp != cfg.estimation_exps[i - 1]:
                h, w = f1.shape[2], f1.shape[3]
                flow_fw = upsample_flow_x2(flow_fw)
                occ1 = resize_bilinear(occ1, h, w) if occ1 is not None else None
                if cfg.bidirectional:
                    flow_bw = upsample_flow_x2(flow_bw)
                    occ2 = resize_bilinear(occ2, h, w) if occ2 is not None else None
            flow_fw, occ1 = self.step(i, f1, f2, flow_fw, occ1)
            if cfg.bidirectional:
                flow_bw, occ2 = self.step(i, f2, f1, flow_bw, occ2)
            states.append(IterationState(
                step=i + 1, scale_exp=exp,
                flow_fw=flow_fw, flow_bw=flow_bw,
                occ1_logits=occ1, occ2_logits=occ2,
            ))

        upsample_states = self._upsample_stage(states[-1], pyr1, pyr2)
        return ModelOutput(states=states, upsample_states=upsample_states)

    def step(self, step_idx, feat_own, feat_other, flow_prev, occ_prev):
        """One refinement application for one temporal direction.

        `flow_prev` / `occ_prev` arrive at this step's resolution (the
        pyramid driver upsamples between levels before calling).  Returns the
        refined (flow, occlusion logits).
        """
        raise NotImplementedError

    def _upsample_stage(self, last: IterationState, pyr1, pyr2) -> list:
        cfg = self.config
        flow_fw, flow_bw = last.flow_fw, last.flow_bw
        occ1, occ2 = last.occ1_logits, last.occ2_logits
        out = []
        for j, exp in enumerate(range(cfg.output_scale_exp, 0, -1)):
            if cfg.occlusion_upsampling:
                adapter = self.upsampler_feature_adapters[j]
                fa1 = adapter(pyr1[exp - 1])
                fa2 = adapter(pyr2[exp - 1])
                new_occ1 = self.occ_upsampler(occ1, flow_fw, flow_bw, fa1, fa2)
                new_occ2 = self.occ_upsampler(occ2, flow_bw, flow_fw, fa2, fa1)
                occ1, occ2 = new_occ1, new_occ2
            else:
                h2, w2 = 2 * flow_fw.shape[2], 2 * flow_fw.shape[3]
                occ1 = resize_bilinear(occ1, h2, w2) if occ1 is not None else None
                occ2 = resize_bilinear(occ2, h2, w2) if occ2 is not None else None
            flow_fw = upsample_flow_x2(flow_fw)
            if flow_bw is not None:
                flow_bw = upsample_flow_x2(flow_bw)
            out.append(IterationState(
                step=last.step + j + 1, scale_exp=exp - 1,
                flow_fw=flow_fw, flow_bw=flow_bw,
                occ1_logits=occ1, occ2_logits=occ2,
            ))
        return out

    def _refine(self, step_idx, flow, occ, feat_own, feat_other):
        if not self.config.bilateral_refinement:
            return flow, occ
        refiner = self.refiner(step_idx)
        flow = refiner.refine_flow(feat_own, flow)
        if occ is not None:
            warped_other = bilinear_warp(feat_other, flow)
            occ = refiner.refine_occ(occ, feat_own, warped_other)
        return flow, occ


class IRRFlowNet(_IRRBase):
    """Fixed-resolution iterative refinement at one encoder level.

    Each step warps the other frame's features by the current flow,
    concatenates them with the reference features, and decodes a residual
    that is added to the running estimate.
    """

    def _make_decoder(self, out_channels: int, occlusion: bool = False) -> ConvDecoder:
        cfg = self.config
        feat_ch = cfg.resolved_encoder_widths[cfg.resolved_warp_level - 1]
        return ConvDecoder(2 * feat_ch, out_channels,
                           width=cfg.decoder_width, depth=cfg.decoder_depth)

    def _refiner_feature_channels(self) -> int:
        cfg = self.config
        return cfg.resolved_encoder_widths[cfg.resolved_warp_level - 1]

    def step(self, step_idx, feat_own, feat_other, flow_prev, occ_prev):
        warped = bilinear_warp(feat_other, flow_prev)
        dec_in = torch.cat([feat_own, warped], dim=1)
        flow = self.flow_decoder(step_idx)(dec_in) + flow_prev
        occ = self.occ_decoder(step_idx)(dec_in) + occ_prev if occ_prev is not None else None
        return self._refine(step_idx, flow, occ, feat_own, feat_other)


class IRRPWC(_IRRBase):
    """Coarse-to-fine refinement over the feature pyramid with one decoder.

    Per level: warp the other frame's level features by the (upsampled,
    doubled) previous flow, build a cost volume, adapt the reference features
    to a fixed width, decode the residual, and add it.  The occlusion decoder
    sees the same inputs plus the carried occlusion logits.
    """

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        widths = config.resolved_encoder_widths
        self.level_adapters = nn.ModuleList([
            ChannelAdapter(widths[exp - 1], config.adapter_channels)
            for exp in config.estimation_exps
        ])

    def _make_decoder(self, out_channels: int, occlusion: bool = False) -> ConvDecoder:
        cfg = self.config
        corr_ch = (2 * cfg.cost_radius + 1) ** 2
        in_ch = cfg.adapter_channels + corr_ch + 2 + (1 if occlusion else 0)
        return ConvDecoder(in_ch, out_channels, width=cfg.decoder_width, depth=cfg.decoder_depth)

    def _refiner_feature_channels(self) -> int:
        return self.config.adapter_channels

    def step(self, step_idx, feat_own, feat_other, flow_prev, occ_prev):
        warped = bilinear_warp(feat_other, flow_prev)
        corr = F.leaky_relu(cost_volume(feat_own, warped, self.config.cost_radius), 0.1)
        adapted = self.level_adapters[step_idx](feat_own)
        dec_in = torch.cat([adapted, corr, flow_prev], dim=1)
        flow = self.flow_decoder(step_idx)(dec_in) + flow_prev
        occ = None
        if occ_prev is not None:
            occ_in = torch.cat([dec_in, occ_prev], dim=1)
            occ = self.occ_decoder(step_idx)(occ_in) + occ_prev
        adapted_other = (self.level_adapters[step_idx](feat_other)
                         if self.config.bilateral_refinement else None)
        return self._refine(step_idx, flow, occ, adapted, adapted_other)


def build_model(config: ModelConfig) -> _IRRBase:
    """Construct a model; weights are a deterministic function of config.seed."""
    config = copy.deepcopy(config)
    config.validate()
    torch.manual_seed(config.seed)
    cls = IRRFlowNet if config.variant == "flownet" else IRRPWC
    model = cls(config)
    return model.to(DTYPES[config.dtype])


def parameter_registry(model: nn.Module) -> dict:
    """Unique parameter count per top-level block, shared tensors counted once.

    `named_parameters` deduplicates shared tensors, crediting each to the
    first block that registered it, so re-used modules appear exactly once.
    """
    registry = {}
    for name, p in model.named_parameters():
        block = name.split(".")[0]
        registry[block] = registry.get(block, 0) + p.numel()
    return registry


def count_parameters(model: nn.Module):
    """Total unique parameter count and the per-block breakdown."""
    registry = parameter_registry(model)
    return sum(registry.values()), registry
