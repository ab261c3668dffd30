"""Input validation helpers for the estimator API.

The estimator accepts data in three forms: a list of SceneSample objects, a
dataset directory written by `write_dataset`, or raw image-pair arrays with
an optional target dict.  These helpers normalize all of them.
"""

from pathlib import Path

import numpy as np

from irrflow.datagen import SceneSample, read_dataset


def check_image_pairs(X) -> np.ndarray:
    """Coerce to a (N, 2, H, W, 3) uint8 array of image pairs."""
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], SceneSample):
        X = [(s.image1, s.image2) for s in X]
    if isinstance(X, (list, tuple)):
        X = np.stack([np.stack([np.asarray(a), np.asarray(b)]) for a, b in X])
    X = np.asarray(X)
    if X.ndim != 5 or X.shape[1] != 2 or X.shape[4] != 3:
        raise ValueError(f"expected image pairs of shape (N, 2, H, W, 3), got {X.shape}")
    if X.dtype != np.uint8:
        if X.max() <= 1.0:
            X = np.clip(np.rint(X * 255.0), 0, 255).astype(np.uint8)
        else:
            X = np.clip(np.rint(X), 0, 255).astype(np.uint8)
    return X


def _check_target(y, key, n, h, w, channels=None):
    arr = np.asarray(y[key])
    expected = (n, h, w) if channels is None else (n, h, w, channels)
    if arr.shape != expected:
        raise ValueError(f"target {key!r} must have shape {expected}, got {arr.shape}")
    return arr


def check_training_samples(X, y=None) -> list:
    """Normalize training input to a list of SceneSample.

    X may be a list of SceneSample, a dataset directory (with a manifest at
    its root or in a `train/` subdirectory), or an image-pair array combined
    with a target dict holding `flow_fw` and optionally `flow_bw`, `occ1`,
    `occ2` (missing occlusions default to all-visible, missing backward flow
    to the negated forward flow for shape purposes only).
    """
    if isinstance(X, (str, Path)):
        root = Path(X)
        if (root / "manifest.jsonl").exists():
            samples, _ = read_dataset(root)
        elif (root / "train" / "manifest.jsonl").exists():
            samples, _ = read_dataset(root / "train")
        else:
            raise ValueError(f"no dataset manifest under {root}")
        if not samples:
            raise ValueError(f"dataset at {root} is empty")
        return samples
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], SceneSample):
        return list(X)

    pairs = check_image_pairs(X)
    if y is None or "flow_fw" not in y:
        raise ValueError("training from raw image pairs needs a target dict with 'flow_fw'")
    n, _, h, w, _ = pairs.shape
    flow_fw = _check_target(y, "flow_fw", n, h, w, 2).astype(np.float32)
    flow_bw = (_check_target(y, "flow_bw", n, h, w, 2).astype(np.float32)
               if "flow_bw" in y else -flow_fw)
    occ1 = (_check_target(y, "occ1", n, h, w).astype(np.uint8)
            if "occ1" in y else np.zeros((n, h, w), np.uint8))
    occ2 = (_check_target(y, "occ2", n, h, w).astype(np.uint8)
            if "occ2" in y else np.zeros((n, h, w), np.uint8))
    return [
        SceneSample(image1=pairs[i, 0], image2=pairs[i, 1],
                    flow_fw=flow_fw[i], flow_bw=flow_bw[i],
                    occ1=occ1[i], occ2=occ2[i], seed=i)
        for i in range(n)
    ]
