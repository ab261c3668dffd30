"""Geometric and photometric augmentation of scene samples.

Geometric transforms (scale, crop, horizontal flip) are applied consistently
to both images, both flow fields (with the matching vector re-mapping), and
both occlusion maps; pixels whose augmented flow leaves the image are then
marked occluded.  Photometric transforms (brightness, color, gamma, additive
Gaussian noise) touch the images only.
"""

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from irrflow.datagen import SceneSample, mark_out_of_bounds


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    scale_min: float = 1.0
    scale_max: float = 1.25
    brightness_range: tuple = (0.8, 1.2)
    color_range: tuple = (0.9, 1.1)
    gamma_range: tuple = (0.8, 1.2)
    noise_sigma_max: float = 0.02

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("brightness_range", "color_range", "gamma_range"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentConfig":
        data = dict(data)
        for key in ("brightness_range", "color_range", "gamma_range"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)


IDENTITY_AUGMENT = AugmentConfig(flip_prob=0.0, scale_min=1.0, scale_max=1.0,
                                 brightness_range=(1.0, 1.0), color_range=(1.0, 1.0),
                                 gamma_range=(1.0, 1.0), noise_sigma_max=0.0)


def _resize_image(image: np.ndarray, h: int, w: int) -> np.ndarray:
    t = torch.from_numpy(image.astype(np.float64) / 255.0).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    return np.clip(np.rint(out[0].permute(1, 2, 0).numpy() * 255.0), 0, 255).astype(np.uint8)


def _resize_flow(flow: np.ndarray, h: int, w: int) -> np.ndarray:
    src_h, src_w = flow.shape[:2]
    t = torch.from_numpy(flow.astype(np.float64)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)[0]
    out[0] *= w / src_w
    out[1] *= h / src_h
    return out.permute(1, 2, 0).numpy().astype(np.float32)


def _resize_occ(occ: np.ndarray, h: int, w: int) -> np.ndarray:
    t = torch.from_numpy(occ.astype(np.float64))[None, None]
    out = F.interpolate(t, size=(h, w), mode="nearest")
    return (out[0, 0].numpy() >= 0.5).astype(np.uint8)


def scale_sample(sample: SceneSample, factor: float) -> SceneSample:
    """Resize everything by `factor`; flow vectors scale with the resolution."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    h = max(1, round(sample.image1.shape[0] * factor))
    w = max(1, round(sample.image1.shape[1] * factor))
    return SceneSample(
        image1=_resize_image(sample.image1, h, w),
        image2=_resize_image(sample.image2, h, w),
        flow_fw=_resize_flow(sample.flow_fw, h, w),
        flow_bw=_resize_flow(sample.flow_bw, h, w),
        occ1=_resize_occ(sample.occ1, h, w),
        occ2=_resize_occ(sample.occ2, h, w),
        seed=sample.seed,
    )


def crop_sample(sample: SceneSample, top: int, left: int, h: int, w: int) -> SceneSample:
    src_h, src_w = sample.image1.shape[:2]
    if h > src_h or w > src_w or top < 0 or left < 0 or top + h > src_h or left + w > src_w:
        raise ValueError(f"crop ({top},{left},{h},{w}) exceeds image ({src_h},{src_w})")
    sl = (slice(top, top + h), slice(left, left + w))
    return SceneSample(
        image1=sample.image1[sl], image2=sample.image2[sl],
        flow_fw=sample.flow_fw[sl], flow_bw=sample.flow_bw[sl],
        occ1=sample.occ1[sl], occ2=sample.occ2[sl],
        seed=sample.seed,
    )


def hflip_sample(sample: SceneSample) -> SceneSample:
    """Mirror along x; u components negate, v components are preserved."""

    def flip_flow(flow):
        out = flow[:, ::-1].copy()
        out[..., 0] = -out[..., 0]
        return out

    return SceneSample(
        image1=sample.image1[:, ::-1].copy(), image2=sample.image2[:, ::-1].copy(),
        flow_fw=flip_flow(sample.flow_fw), flow_bw=flip_flow(sample.flow_bw),
        occ1=sample.occ1[:, ::-1].copy(), occ2=sample.occ2[:, ::-1].copy(),
        seed=sample.seed,
    )


def _photometric(image: np.ndarray, rng, brightness, color, gamma, sigma) -> np.ndarray:
    img = image.astype(np.float64) / 255.0
    img = np.clip(img * brightness * color, 0.0, 1.0) ** gamma
    img = img + rng.normal(0.0, sigma, size=img.shape) if sigma > 0 else img
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def augment(sample: SceneSample, seed: int, config: AugmentConfig) -> SceneSample:
    """Random augmentation, deterministic in (sample, seed, config).

    Order: scale up, crop back to the original size, optional horizontal
    flip, out-of-bound occlusion marking, then photometric changes.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    h, w = sample.image1.shape[:2]
    out = sample

    factor = float(rng.uniform(config.scale_min, config.scale_max))
    if factor != 1.0:
        out = scale_sample(out, factor)
        if out.image1.shape[0] < h or out.image1.shape[1] < w:
            raise ValueError("scaled sample is smaller than the crop size")
    if out.image1.shape[:2] != (h, w):
        top = int(rng.integers(0, out.image1.shape[0] - h + 1))
        left = int(rng.integers(0, out.image1.shape[1] - w + 1))
        out = crop_sample(out, top, left, h, w)
    if rng.uniform() < config.flip_prob:
        out = hflip_sample(out)

    out.occ1 = mark_out_of_bounds(out.occ1, out.flow_fw)
    out.occ2 = mark_out_of_bounds(out.occ2, out.flow_bw)

    brightness = float(rng.uniform(*config.brightness_range))
    color = rng.uniform(*config.color_range, size=(1, 1, 3))
    gamma = float(rng.uniform(*config.gamma_range))
    sigma = float(rng.uniform(0.0, config.noise_sigma_max))
    out.image1 = _photometric(out.image1, rng, brightness, color, gamma, sigma)
    out.image2 = _photometric(out.image2, rng, brightness, color, gamma, sigma)
    return out
