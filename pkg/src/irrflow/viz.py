"""Visualization: flow fields to color-wheel images, occlusion to grayscale."""

import numpy as np
from PIL import Image


def make_colorwheel() -> np.ndarray:
    """Standard 55-entry flow color wheel (RY/YG/GC/CB/BM/MR segments)."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[0:RY, 0] = 255
    wheel[0:RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG
    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB
    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel


_WHEEL = make_colorwheel()


def flow_to_color(flow, max_flow=None) -> np.ndarray:
    """Map an (H, W, 2) flow field onto the color wheel; returns uint8 RGB."""
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    mag = np.hypot(u, v)
    if max_flow is None:
        max_flow = max(mag.max(), 1e-6)
    u, v = u / max_flow, v / max_flow
    mag = np.clip(mag / max_flow, 0, 1)

    n = _WHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi  # in (-1, 1]
    fk = (angle + 1) / 2 * (n - 1)
    k0 = np.floor(fk).astype(int) % n
    k1 = (k0 + 1) % n
    f = (fk - np.floor(fk))[..., None]
    color = (1 - f) * _WHEEL[k0] + f * _WHEEL[k1]
    color = 255 - mag[..., None] * (255 - color)  # desaturate small motions
    return np.clip(np.rint(color), 0, 255).astype(np.uint8)


def occ_to_image(occ) -> np.ndarray:
    """Occlusion probabilities (0..1) to uint8 grayscale, occluded = white."""
    occ = np.asarray(occ, dtype=np.float64)
    return np.clip(np.rint(occ * 255.0), 0, 255).astype(np.uint8)


def save_flow_image(path, flow, max_flow=None) -> None:
    Image.fromarray(flow_to_color(flow, max_flow), mode="RGB").save(path, format="PNG")


def save_occ_image(path, occ) -> None:
    Image.fromarray(occ_to_image(occ), mode="L").save(path, format="PNG")
