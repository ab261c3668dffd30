"""Synthetic scene generator: layered 2D motions with exact bi-directional
flow and occlusion ground truth.

A scene is a stack of layers (an oversized background plus K foreground
sprites), each moving between the two frames under its own invertible 3x3
matrix.  Because every motion is a closed-form map, forward flow, backward
flow, and both occlusion maps follow analytically from visibility checks.

Geometry conventions: pixel p = (x, y) with x along width; matrices act on
homogeneous (x, y, 1) column vectors.  A layer is visible at an integer pixel
when its binary alpha, looked up at the nearest texel of the inversely
transformed point, is set; the front-most (highest-index) such layer wins.

Occlusion rule: a pixel of layer l in one frame is occluded when any pixel
under the bilinear footprint of its mapped location in the other frame (the
up-to-four integer pixels with nonzero interpolation weight) falls outside
the image or belongs to a different layer.  This makes ground-truth backward
flow, sampled bilinearly at the mapped location of any non-occluded pixel,
consistent with the forward flow to interpolation accuracy.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from irrflow import fileio


@dataclass
class DataConfig:
    """Scene generation settings; distributions are uniform over the ranges."""

    width: int = 64
    height: int = 48
    min_layers: int = 1
    max_layers: int = 3
    min_object_size: int = 12
    max_object_size: int = 28
    bg_max_translation: float = 5.0
    bg_max_rotation_deg: float = 5.0
    bg_scale_range: tuple = (0.95, 1.05)
    fg_max_translation: float = 8.0
    fg_max_rotation_deg: float = 10.0
    fg_scale_range: tuple = (0.9, 1.1)
    texture_cells: int = 6
    margin_slack: int = 4
    max_motion_retries: int = 20

    def to_dict(self) -> dict:
        out = asdict(self)
        out["bg_scale_range"] = list(out["bg_scale_range"])
        out["fg_scale_range"] = list(out["fg_scale_range"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DataConfig":
        data = dict(data)
        for key in ("bg_scale_range", "fg_scale_range"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class Layer:
    texture: np.ndarray    # (th, tw, 3) float64 in [0, 1]
    alpha: np.ndarray      # (th, tw) uint8, binary
    placement: np.ndarray  # 3x3, texture coords -> frame-1 coords
    motion: np.ndarray     # 3x3, frame-1 coords -> frame-2 coords


@dataclass
class MotionSpec:
    width: int
    height: int
    layers: list          # back to front; index 0 is the background
    seed: int


@dataclass
class SceneSample:
    image1: np.ndarray    # (H, W, 3) uint8
    image2: np.ndarray
    flow_fw: np.ndarray   # (H, W, 2) float32
    flow_bw: np.ndarray
    occ1: np.ndarray      # (H, W) uint8, 1 = occluded
    occ2: np.ndarray
    seed: int
    spec: MotionSpec | None = None


def _apply_h(m, xs, ys):
    """Apply a 3x3 homography to coordinate arrays."""
    denom = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    qx = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / denom
    qy = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / denom
    return qx, qy


def _similarity_about(cx, cy, angle, scale, tx, ty):
    cos, sin = math.cos(angle), math.sin(angle)
    a = scale * cos
    b = scale * sin
    # T(c + t) @ R(angle) @ S(scale) @ T(-c)
    return np.array([
        [a, -b, cx + tx - a * cx + b * cy],
        [b, a, cy + ty - b * cx - a * cy],
        [0.0, 0.0, 1.0],
    ])


def _smooth_noise(rng, h, w, cells, channels=3):
    """Multi-octave value noise: random grids bilinearly upsampled.

    Three octaves from coarse blobs down to near-pixel detail keep enough
    texture for correspondence after encoder downsampling.
    """
    out = np.zeros((h, w, channels))
    amplitude = 1.0
    cell = max(2, cells)
    for _ in range(3):
        gh, gw = max(2, h // cell + 1), max(2, w // cell + 1)
        grid = rng.uniform(0, 1, size=(gh, gw, channels))
        ys = np.linspace(0, gh - 1, h)
        xs = np.linspace(0, gw - 1, w)
        y0 = np.floor(ys).astype(int).clip(0, gh - 2)
        x0 = np.floor(xs).astype(int).clip(0, gw - 2)
        fy = (ys - y0)[:, None, None]
        fx = (xs - x0)[None, :, None]
        g00 = grid[y0][:, x0]
        g01 = grid[y0][:, x0 + 1]
        g10 = grid[y0 + 1][:, x0]
        g11 = grid[y0 + 1][:, x0 + 1]
        layer = (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
                 + g10 * fy * (1 - fx) + g11 * fy * fx)
        out += amplitude * layer
        amplitude *= 0.6
        cell = max(1, cell // 2)
    out /= out.max() if out.max() > 0 else 1.0
    base = rng.uniform(0.1, 0.9, size=(1, 1, channels))
    return np.clip(0.7 * out + 0.3 * base, 0.0, 1.0)


def _sprite_alpha(rng, size):
    """Binary sprite mask: a random ellipse or convex polygon."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0
    if rng.uniform() < 0.5:
        a = rng.uniform(0.3, 0.48) * size
        b = rng.uniform(0.3, 0.48) * size
        theta = rng.uniform(0, math.pi)
        dx, dy = xs - cx, ys - cy
        u = dx * math.cos(theta) + dy * math.sin(theta)
        v = -dx * math.sin(theta) + dy * math.cos(theta)
        mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    else:
        k = rng.integers(3, 7)
        angles = np.sort(rng.uniform(0, 2 * math.pi, size=k))
        radius = rng.uniform(0.32, 0.48, size=k) * size
        verts = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], axis=1)
        mask = np.ones((size, size), dtype=bool)
        for i in range(k):
            x1, y1 = verts[i]
            x2, y2 = verts[(i + 1) % k]
            # inside test against each edge of the counter-clockwise polygon
            mask &= (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1) >= 0
    return mask.astype(np.uint8)


def _max_corner_displacement(motion, width, height):
    corners = np.array([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]],
                       dtype=np.float64)
    qx, qy = _apply_h(motion, corners[:, 0], corners[:, 1])
    return float(np.max(np.hypot(qx - corners[:, 0], qy - corners[:, 1])))


def _draw_motion(rng, cx, cy, max_translation, max_rotation_deg, scale_range, retries):
    for _ in range(retries):
        angle = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
        scale = rng.uniform(*scale_range)
        tx = rng.uniform(-max_translation, max_translation)
        ty = rng.uniform(-max_translation, max_translation)
        m = _similarity_about(cx, cy, angle, scale, tx, ty)
        if abs(np.linalg.det(m)) > 1e-8:
            return m
    raise ValueError("could not draw an invertible motion")


def sample_scene(seed: int, config: DataConfig) -> MotionSpec:
    """Deterministically draw a layered scene for the given seed."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    w, h = config.width, config.height
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    bg_motion = _draw_motion(rng, cx, cy, config.bg_max_translation,
                             config.bg_max_rotation_deg, config.bg_scale_range,
                             config.max_motion_retries)
    margin = int(math.ceil(_max_corner_displacement(bg_motion, w, h))) + config.margin_slack
    bg_texture = _smooth_noise(rng, h + 2 * margin, w + 2 * margin, config.texture_cells)
    bg_alpha = np.ones(bg_texture.shape[:2], dtype=np.uint8)
    bg_placement = np.array([[1.0, 0.0, -margin], [0.0, 1.0, -margin], [0.0, 0.0, 1.0]])
    layers = [Layer(bg_texture, bg_alpha, bg_placement, bg_motion)]

    n_layers = int(rng.integers(config.min_layers, config.max_layers + 1))
    for _ in range(n_layers):
        size = int(rng.integers(config.min_object_size, config.max_object_size + 1))
        texture = _smooth_noise(rng, size, size, max(2, config.texture_cells // 2))
        alpha = _sprite_alpha(rng, size)
        px = rng.uniform(-size / 4.0, w - 1 - 3 * size / 4.0)
        py = rng.uniform(-size / 4.0, h - 1 - 3 * size / 4.0)
        placement = np.array([[1.0, 0.0, px], [0.0, 1.0, py], [0.0, 0.0, 1.0]])
        ocx, ocy = px + (size - 1) / 2.0, py + (size - 1) / 2.0
        motion = _draw_motion(rng, ocx, ocy, config.fg_max_translation,
                              config.fg_max_rotation_deg, config.fg_scale_range,
                              config.max_motion_retries)
        layers.append(Layer(texture, alpha, placement, motion))

    return MotionSpec(width=w, height=h, layers=layers, seed=seed)


def _presence_and_color(layer: Layer, to_texture: np.ndarray, xs, ys):
    """Visibility mask and bilinear color for frame pixels of one layer."""
    tx, ty = _apply_h(to_texture, xs, ys)
    th, tw = layer.alpha.shape
    ti = np.rint(tx).astype(np.int64)
    tj = np.rint(ty).astype(np.int64)
    inside = (ti >= 0) & (ti <= tw - 1) & (tj >= 0) & (tj <= th - 1)
    present = np.zeros(xs.shape, dtype=bool)
    present[inside] = layer.alpha[tj[inside], ti[inside]] > 0

    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = (tx - x0)[..., None]
    fy = (ty - y0)[..., None]
    x0c, x1c = x0.clip(0, tw - 1), (x0 + 1).clip(0, tw - 1)
    y0c, y1c = y0.clip(0, th - 1), (y0 + 1).clip(0, th - 1)
    tex = layer.texture
    color = (tex[y0c, x0c] * (1 - fy) * (1 - fx) + tex[y0c, x1c] * (1 - fy) * fx
             + tex[y1c, x0c] * fy * (1 - fx) + tex[y1c, x1c] * fy * fx)
    return present, color


def _frame_transforms(spec: MotionSpec, frame: int):
    """Per-layer (frame coords -> texture coords) inverse transforms."""
    out = []
    for layer in spec.layers:
        if frame == 1:
            out.append(np.linalg.inv(layer.placement))
        else:
            out.append(np.linalg.inv(layer.motion @ layer.placement))
    return out


def _index_map(spec: MotionSpec, frame: int) -> np.ndarray:
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    idx = np.full((spec.height, spec.width), -1, dtype=np.int64)
    for k, to_tex in enumerate(_frame_transforms(spec, frame)):
        present, _ = _presence_and_color(spec.layers[k], to_tex, xs, ys)
        idx[present] = k
    return idx


def render_pair(spec: MotionSpec):
    """Composite both frames back to front.

    Returns (image1, image2, index1, index2) with uint8 images and int64
    per-pixel visible-layer indices.
    """
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    images, indices = [], []
    for frame in (1, 2):
        canvas = np.zeros((spec.height, spec.width, 3))
        idx = np.full((spec.height, spec.width), -1, dtype=np.int64)
        for k, to_tex in enumerate(_frame_transforms(spec, frame)):
            present, color = _presence_and_color(spec.layers[k], to_tex, xs, ys)
            canvas[present] = color[present]
            idx[present] = k
        images.append(np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8))
        indices.append(idx)
    return images[0], images[1], indices[0], indices[1]


def _mapped_coordinates(spec: MotionSpec, frame: int, index_map: np.ndarray):
    """Map every pixel by its visible layer's motion into the other frame."""
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    qx = np.zeros_like(xs)
    qy = np.zeros_like(ys)
    for k, layer in enumerate(spec.layers):
        mask = index_map == k
        if not mask.any():
            continue
        motion = layer.motion if frame == 1 else np.linalg.inv(layer.motion)
        mx, my = _apply_h(motion, xs, ys)
        qx[mask] = mx[mask]
        qy[mask] = my[mask]
    return qx, qy


def analytic_flow(spec: MotionSpec, direction: str = "forward", index_map=None) -> np.ndarray:
    """Exact flow for the visible layer at every pixel; (H, W, 2) float32."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    frame = 1 if direction == "forward" else 2
    if index_map is None:
        index_map = _index_map(spec, frame)
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    qx, qy = _mapped_coordinates(spec, frame, index_map)
    return np.stack([qx - xs, qy - ys], axis=2).astype(np.float32)


def analytic_occlusion(spec: MotionSpec, frame: int = 1, index_maps=None) -> np.ndarray:
    """Occlusion map from visibility checks; (H, W) uint8, 1 = occluded.

    A pixel is occluded when any integer pixel under the bilinear footprint
    of its mapped location is out of bounds or belongs to another layer.
    """
    if frame not in (1, 2):
        raise ValueError("frame must be 1 or 2")
    if index_maps is None:
        index_maps = (_index_map(spec, 1), _index_map(spec, 2))
    idx_own = index_maps[0] if frame == 1 else index_maps[1]
    idx_other = index_maps[1] if frame == 1 else index_maps[0]

    qx, qy = _mapped_coordinates(spec, frame, idx_own)
    x0 = np.floor(qx).astype(np.int64)
    y0 = np.floor(qy).astype(np.int64)
    fx = qx - x0
    fy = qy - y0

    occluded = np.zeros((spec.height, spec.width), dtype=bool)
    h, w = spec.height, spec.width
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            weight = wx * wy
            xi, yi = x0 + dx, y0 + dy
            inside = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
            same = np.zeros_like(inside)
            same[inside] = idx_other[yi[inside].clip(0, h - 1), xi[inside].clip(0, w - 1)] \
                == idx_own[inside]
            occluded |= (weight > 0) & ~(inside & same)
    return occluded.astype(np.uint8)


def make_sample(seed: int, config: DataConfig, keep_spec: bool = False) -> SceneSample:
    """Generate one scene with images, flows, and occlusion maps."""
    spec = sample_scene(seed, config)
    img1, img2, idx1, idx2 = render_pair(spec)
    return SceneSample(
        image1=img1, image2=img2,
        flow_fw=analytic_flow(spec, "forward", idx1),
        flow_bw=analytic_flow(spec, "backward", idx2),
        occ1=analytic_occlusion(spec, 1, (idx1, idx2)),
        occ2=analytic_occlusion(spec, 2, (idx1, idx2)),
        seed=seed,
        spec=spec if keep_spec else None,
    )


def mark_out_of_bounds(occ: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """OR the occlusion map with the indicator of pixels mapping off-image."""
    occ = np.asarray(occ)
    flow = np.asarray(flow)
    if occ.shape != flow.shape[:2] or flow.shape[2] != 2:
        raise ValueError(f"occlusion {occ.shape} and flow {flow.shape} do not align")
    h, w = occ.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    qx = xs + flow[..., 0]
    qy = ys + flow[..., 1]
    outside = (qx < 0) | (qx > w - 1) | (qy < 0) | (qy > h - 1)
    return ((occ > 0) | outside).astype(np.uint8)


def forward_backward_errors(sample: SceneSample):
    """Consistency residual |bw(p + fw(p)) + fw(p)| on non-occluded pixels.

    Returns (errors, mask): bilinear samples of the backward flow at the
    forward-mapped locations, compared against the negated forward flow, and
    the boolean mask of frame-1 pixels that are visible in both frames.
    """
    h, w = sample.occ1.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    qx = xs + sample.flow_fw[..., 0].astype(np.float64)
    qy = ys + sample.flow_fw[..., 1].astype(np.float64)
    x0 = np.floor(qx).astype(np.int64)
    y0 = np.floor(qy).astype(np.int64)
    fx = (qx - x0)[..., None]
    fy = (qy - y0)[..., None]
    bw = sample.flow_bw.astype(np.float64)
    x0c, x1c = x0.clip(0, w - 1), (x0 + 1).clip(0, w - 1)
    y0c, y1c = y0.clip(0, h - 1), (y0 + 1).clip(0, h - 1)
    sampled = (bw[y0c, x0c] * (1 - fy) * (1 - fx) + bw[y0c, x1c] * (1 - fy) * fx
               + bw[y1c, x0c] * fy * (1 - fx) + bw[y1c, x1c] * fy * fx)
    err = np.hypot(*(sampled + sample.flow_fw.astype(np.float64)).transpose(2, 0, 1))
    return err, sample.occ1 == 0


# ---------------------------------------------------------------------------
# dataset on disk

_SAMPLE_FILES = ("img1.png", "img2.png", "flow_fw.flo", "flow_bw.flo",
                 "occ1.pgm", "occ2.pgm")


def write_dataset(samples, directory, config: DataConfig | None = None) -> None:
    """Write samples plus a JSONL manifest recording seeds and config."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg_dict = config.to_dict() if config is not None else None
    chash = fileio.config_hash(cfg_dict) if cfg_dict is not None else None
    records = []
    for i, sample in enumerate(samples):
        stem = f"{i:06d}"
        files = {suffix: f"{stem}_{suffix}" for suffix in _SAMPLE_FILES}
        fileio.write_image(directory / files["img1.png"], sample.image1)
        fileio.write_image(directory / files["img2.png"], sample.image2)
        fileio.write_flow(directory / files["flow_fw.flo"], sample.flow_fw)
        fileio.write_flow(directory / files["flow_bw.flo"], sample.flow_bw)
        fileio.write_occlusion(directory / files["occ1.pgm"], sample.occ1)
        fileio.write_occlusion(directory / files["occ2.pgm"], sample.occ2)
        records.append({"id": stem, "seed": sample.seed, "files": files,
                        "config_hash": chash})
    manifest = {"samples": records}
    if cfg_dict is not None:
        manifest["config"] = cfg_dict
    fileio.write_manifest(directory / "manifest.jsonl",
                          [{"kind": "header", **({"config": cfg_dict} if cfg_dict else {}),
                            "count": len(records)}] + records)


def read_dataset(directory):
    """Load every sample listed in the manifest; returns (samples, header)."""
    from pathlib import Path

    directory = Path(directory)
    records = fileio.read_manifest(directory / "manifest.jsonl")
    if not records or records[0].get("kind") != "header":
        raise ValueError(f"{directory}: manifest missing header record")
    header, rows = records[0], records[1:]
    samples = []
    for row in rows:
        files = row["files"]
        samples.append(SceneSample(
            image1=fileio.read_image(directory / files["img1.png"]),
            image2=fileio.read_image(directory / files["img2.png"]),
            flow_fw=fileio.read_flow(directory / files["flow_fw.flo"]),
            flow_bw=fileio.read_flow(directory / files["flow_bw.flo"]),
            occ1=fileio.read_occlusion(directory / files["occ1.pgm"]),
            occ2=fileio.read_occlusion(directory / files["occ2.pgm"]),
            seed=row["seed"],
        ))
    return samples, header
