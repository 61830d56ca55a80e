"""Data preparation: hair removal and bilinear resizing.

Hair removal follows the classical recipe: directional grayscale closings
expose thin dark structures, a threshold plus an elongation gate keeps only
hair-shaped components (protecting blob-shaped lesions), and masked pixels
are filled by interpolating across the strand along its minor axis.  Only
pixels inside the dilated hair mask are ever modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class HairRemovalParams:
    length: int = 9  # structuring element length, px
    tau: float = 0.06  # candidate threshold, luminance units
    min_elongation: float = 4.0  # covariance eigenvalue ratio gate
    dilation_radius: int = 1

    def __post_init__(self):
        if self.length < 3 or self.length % 2 == 0:
            raise ValueError("structuring element length must be odd and >= 3")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")


def luminance(image: np.ndarray) -> np.ndarray:
    return 0.299 * image[:, :, 0] + 0.587 * image[:, :, 1] + 0.114 * image[:, :, 2]


def _line_footprints(length: int) -> list[np.ndarray]:
    horiz = np.ones((1, length), dtype=bool)
    vert = np.ones((length, 1), dtype=bool)
    diag = np.eye(length, dtype=bool)
    anti = diag[::-1]
    return [horiz, vert, diag, anti]


def _component_stats(coords: np.ndarray) -> tuple[float, np.ndarray]:
    """(elongation, minor-axis unit vector) from pixel coordinates [n, 2]."""
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / coords.shape[0]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    lam_minor, lam_major = float(evals[0]), float(evals[1])
    minor_dir = evecs[:, 0]
    if lam_major < 1e-9:  # point-like component: not hair
        return 1.0, minor_dir
    if lam_minor < 1e-9:  # collinear: maximally elongated
        return np.inf, minor_dir
    return lam_major / lam_minor, minor_dir


def hair_candidates(image: np.ndarray, params: HairRemovalParams) -> np.ndarray:
    """Thresholded directional-closing residue, before the shape gate."""
    lum = luminance(image)
    closing = lum
    for fp in _line_footprints(params.length):
        closing = np.maximum(closing, ndimage.grey_closing(lum, footprint=fp, mode="nearest"))
    return (closing - lum) > params.tau


def _interp_along(channel: np.ndarray, mask: np.ndarray, pixels: np.ndarray, direction: np.ndarray,
                  max_steps: int) -> np.ndarray:
    """Fill values for masked pixels by linear interpolation along `direction`."""
    h, w = channel.shape
    out = np.full(pixels.shape[0], np.nan)
    for i, (py, px) in enumerate(pixels):
        hits = []
        for sign in (1.0, -1.0):
            for k in range(1, max_steps + 1):
                y = int(round(py + sign * k * direction[0]))
                x = int(round(px + sign * k * direction[1]))
                if not (0 <= y < h and 0 <= x < w):
                    break
                if not mask[y, x]:
                    hits.append((k, channel[y, x]))
                    break
        if len(hits) == 2:
            (k1, v1), (k2, v2) = hits
            out[i] = (k2 * v1 + k1 * v2) / (k1 + k2)
        elif len(hits) == 1:
            out[i] = hits[0][1]
    return out


def remove_hair(image: np.ndarray, params: HairRemovalParams = HairRemovalParams()) -> tuple[np.ndarray, np.ndarray]:
    """Detect and inpaint hair; returns (cleaned image, binary hair mask).

    Pixels outside the returned mask are bitwise equal to the input.  Raises
    if the image is smaller than twice the structuring element or if the
    mask would cover everything.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected [H,W,3] image, got {image.shape}")
    h, w = image.shape[:2]
    if h < 2 * params.length or w < 2 * params.length:
        raise ValueError(f"image {h}x{w} smaller than twice the structuring element ({params.length})")

    candidates = hair_candidates(image, params)
    labels, n_comp = ndimage.label(candidates, structure=np.ones((3, 3), dtype=bool))
    kept = np.zeros_like(candidates)
    for comp in range(1, n_comp + 1):
        comp_mask = labels == comp
        elong, _ = _component_stats(np.argwhere(comp_mask))
        if elong >= params.min_elongation:
            kept |= comp_mask

    if not kept.any():
        return image, kept

    structure = np.ones((2 * params.dilation_radius + 1,) * 2, dtype=bool)
    mask = ndimage.binary_dilation(kept, structure=structure)
    if mask.all():
        raise ValueError("hair mask covers the whole image; nothing to interpolate from")

    cleaned = image.copy()
    max_steps = 2 * params.length
    # dilated pixels inherit the direction of the component they grew from
    dilated_comps, n_dil = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    for comp in range(1, n_dil + 1):
        comp_mask = dilated_comps == comp
        _, minor_dir = _component_stats(np.argwhere(comp_mask))
        pixels = np.argwhere(comp_mask)
        for c in range(3):
            values = _interp_along(image[:, :, c], mask, pixels, minor_dir, max_steps)
            missing = np.isnan(values)
            if missing.any():  # fall back to the unmasked 5x5 neighborhood mean
                for i in np.nonzero(missing)[0]:
                    py, px = pixels[i]
                    y0, y1 = max(0, py - 2), min(h, py + 3)
                    x0, x1 = max(0, px - 2), min(w, px + 3)
                    window = image[y0:y1, x0:x1, c]
                    free = ~mask[y0:y1, x0:x1]
                    values[i] = window[free].mean() if free.any() else image[:, :, c][~mask].mean()
            cleaned[comp_mask, c] = values

    # median pass restricted to the replaced pixels
    for c in range(3):
        med = ndimage.median_filter(cleaned[:, :, c], size=3, mode="nearest")
        cleaned[mask, c] = med[mask]
    return cleaned, mask


def resize_bilinear(image: np.ndarray, target) -> np.ndarray:
    """Bilinear resample with half-pixel centers; same-size input is identity."""
    th, tw = (target, target) if np.isscalar(target) else target
    if th < 1 or tw < 1:
        raise ValueError("target extents must be >= 1")
    h, w = image.shape[:2]
    if (h, w) == (th, tw):
        return image.copy()
    ys = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if image.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bot = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(image.dtype, copy=False)
