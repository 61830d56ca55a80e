"""Image and manifest IO shared across the pipeline.

Images travel as float arrays in [0, 1]: layout [H, W, 3] in the image
processing modules, [3, H, W] (model space, scaled to [-1, 1]) inside the
model.  Manifests are CSV files with the columns written by the toy data
generator; content hashes are git-style blob SHA-1s so any artifact's
provenance can be pinned in reports.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_FIELDS = ("path", "label", "size", "count", "tone", "hair", "seed")


def save_image(path, img: np.ndarray) -> None:
    """Write an [H, W, 3] or [H, W] float image in [0, 1] as 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def load_image(path) -> np.ndarray:
    """Read an image file to [H, W, 3] float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def to_model_space(img: np.ndarray) -> np.ndarray:
    """[H, W, 3] pixels in [0, 1] -> [3, H, W] in [-1, 1]."""
    return np.ascontiguousarray(img.transpose(2, 0, 1) * 2.0 - 1.0, dtype=np.float32)


def from_model_space(x: np.ndarray) -> np.ndarray:
    """[3, H, W] in [-1, 1] -> [H, W, 3] pixels in [0, 1]."""
    return np.ascontiguousarray((np.clip(x, -1.0, 1.0).transpose(1, 2, 0) + 1.0) * 0.5)


def chw_pixels_to_hwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(1, 2, 0))


def write_manifest(path, rows: list[dict], fields=MANIFEST_FIELDS) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def prompt_from_row(row: dict) -> str:
    """Attribute prompt for one manifest row, e.g. 'benign small single light-skin clean'."""
    multiplicity = "single" if int(row["count"]) == 1 else "multiple"
    hair = "hairy" if row["hair"] in ("1", "True", "true") else "clean"
    return f"{row['label']} {row['size']} {multiplicity} {row['tone']}-skin {hair}"


def git_blob_sha1(path) -> str:
    """git-style content hash: sha1('blob <len>\\0' + bytes)."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def upsample_nearest_image(img: np.ndarray, target: int) -> np.ndarray:
    """Nearest-neighbor upsample of an [H, W, 3] image to target x target."""
    h, w = img.shape[:2]
    if target % h or target % w:
        raise ValueError(f"nearest upsample target {target} must be a multiple of {h}x{w}")
    return np.repeat(np.repeat(img, target // h, axis=0), target // w, axis=1)


def save_montage(images: list[np.ndarray], path, cols: int = 12, pad: int = 2) -> None:
    """Contact sheet of [H, W, 3] images in [0, 1] on a white background."""
    if not images:
        raise ValueError("montage needs at least one image")
    h, w = images[0].shape[:2]
    rows = (len(images) + cols - 1) // cols
    sheet = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), dtype=np.float32)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        sheet[y : y + h, x : x + w] = img
    save_image(path, sheet)
