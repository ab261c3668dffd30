"""On-disk formats: flow files, occlusion maps, images, dataset manifests,
and model checkpoints.

Flow file ("FLO2"): 4-byte magic, little-endian int32 width and height, then
row-major interleaved float32 (u, v) pairs.  Occlusion maps are binary 8-bit
PGM (0 = visible, 255 = occluded); images are 8-bit RGB PNG.  Checkpoints are
a single deterministic archive (JSON header + raw little-endian tensor bytes)
with a human-readable JSON config sidecar.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image

FLOW_MAGIC = b"FLO2"
CHECKPOINT_MAGIC = b"IRRCKPT1"


def write_flow(path, flow) -> None:
    """Write an (H, W, 2) float flow field."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<ii", w, h))
        fh.write(flow.astype("<f4").tobytes())


def read_flow(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLOW_MAGIC:
            raise ValueError(f"{path}: bad flow magic {magic!r}")
        w, h = struct.unpack("<ii", fh.read(8))
        if w < 1 or h < 1:
            raise ValueError(f"{path}: invalid dimensions ({w}, {h})")
        payload = fh.read()
    expected = w * h * 2 * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, 2).astype(np.float32)


def write_occlusion(path, occ) -> None:
    """Write an (H, W) binary occlusion map as 8-bit PGM."""
    occ = np.asarray(occ)
    if occ.ndim != 2:
        raise ValueError(f"occlusion map must be 2D, got shape {occ.shape}")
    data = (occ >= 0.5).astype(np.uint8) * 255
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_occlusion(path) -> np.ndarray:
    """Read a PGM occlusion map as a binary {0, 1} uint8 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    payload = raw[pos:]
    if len(payload) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {len(payload)} bytes")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return (data >= (maxval + 1) // 2).astype(np.uint8)


def write_image(path, image) -> None:
    """Write an (H, W, 3) uint8 image as PNG."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"image must be (H, W, 3) uint8, got {image.shape} {image.dtype}")
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def write_manifest(path, records) -> None:
    """Write one JSON record per line; one writer, written once."""
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def read_manifest(path) -> list:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


_DTYPE_TO_NAME = {torch.float32: "float32", torch.float64: "float64", torch.int64: "int64"}
_NAME_TO_NP = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}
_NAME_TO_TORCH = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64}


def save_checkpoint(path, model, config, extra: dict | None = None) -> None:
    """Serialize model weights keyed by block name, plus the model config.

    The archive layout is deterministic (sorted tensor names, fixed header)
    so identical weights produce identical bytes.  A `<path>.json` sidecar
    repeats the config for human inspection.
    """
    path = Path(path)
    state = model.state_dict() if hasattr(model, "state_dict") else dict(model)
    names = sorted(state.keys())
    entries, blobs = [], []
    for name in names:
        tensor = state[name].detach().cpu().contiguous()
        dtype = _DTYPE_TO_NAME.get(tensor.dtype)
        if dtype is None:
            raise ValueError(f"unsupported tensor dtype {tensor.dtype} for {name}")
        blob = tensor.numpy().astype(_NAME_TO_NP[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(tensor.shape),
                        "nbytes": len(blob)})
        blobs.append(blob)
    header = {"config": config.to_dict() if hasattr(config, "to_dict") else dict(config),
              "tensors": entries}
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(header["config"], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint archive; returns (config dict, state dict, extra)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len))
        state = {}
        for entry in header["tensors"]:
            blob = fh.read(entry["nbytes"])
            if len(blob) != entry["nbytes"]:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            arr = np.frombuffer(blob, dtype=_NAME_TO_NP[entry["dtype"]]).reshape(entry["shape"])
            state[entry["name"]] = torch.from_numpy(arr.copy()).to(_NAME_TO_TORCH[entry["dtype"]])
    return header["config"], state, header.get("extra")
