"""Procedural toy dermatoscopy images with exact ground truth.

Each sample is a skin-tone background plus one or more radial-harmonic
lesions, optionally overdrawn with dark hair strands.  Benign lesions are
near-round (harmonics k <= 2, small amplitudes) with a uniform brown fill;
malignant lesions carry high harmonics (k <= 8, large amplitudes),
two-tone variegation, and angle-dependent boundary blur.  Everything is a
pure function of the sample seed, and every sample ships its lesion mask,
hair mask, and hairless reference for use as test oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data, rng as rngmod
from .preprocess import resize_bilinear

SIZES = {"tiny": 0.08, "small": 0.14, "medium": 0.20, "large": 0.30}
TONES = ("light", "dark")
LABELS = ("benign", "malignant")

_BASE_TONE = {"light": (0.82, 0.62, 0.52), "dark": (0.42, 0.28, 0.20)}
_HAIR_ALPHA_FLOOR = 0.04  # alpha below this is zeroed so hairless == image off-mask


@dataclass(frozen=True)
class LesionSpec:
    label: str
    size: str = "medium"
    count: int = 1
    tone: str = "light"
    hair: bool = False
    seed: int = 0
    resolution: int = 32

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be benign or malignant, got {self.label!r}")
        if self.size not in SIZES:
            raise ValueError(f"size must be one of {tuple(SIZES)}, got {self.size!r}")
        if not 1 <= self.count <= 3:
            raise ValueError("count must be 1..3")
        if self.tone not in TONES:
            raise ValueError(f"tone must be light or dark, got {self.tone!r}")
        radius = SIZES[self.size] * self.resolution
        if 2 * (radius + 2) >= self.resolution:
            raise ValueError(f"lesion size {self.size} does not fit a {self.resolution}px frame")

    def prompt(self) -> str:
        multiplicity = "single" if self.count == 1 else "multiple"
        hair = "hairy" if self.hair else "clean"
        return f"{self.label} {self.size} {multiplicity} {self.tone}-skin {hair}"


@dataclass
class ToySample:
    image: np.ndarray  # [H,W,3] in [0,1]
    label: str
    attributes: dict
    lesion_mask: np.ndarray  # bool [H,W]
    hair_mask: np.ndarray  # bool [H,W]
    hairless: np.ndarray  # [H,W,3]; equals image wherever hair_mask is False


def _smooth_noise(gen: np.random.Generator, res: int, cells: int, channels: int = 1) -> np.ndarray:
    """Low-frequency noise: a coarse Gaussian grid upsampled bilinearly."""
    grid = gen.standard_normal((cells, cells, channels))
    out = resize_bilinear(grid, res)
    return out[:, :, 0] if channels == 1 else out


def _render_lesion(gen: np.random.Generator, spec: LesionSpec, res: int, placed: list) -> tuple:
    """One lesion's (alpha, fill) layers; placement avoids overlap when it fits."""
    r_px = SIZES[spec.size] * res
    for shrink in (1.0, 0.85, 0.7):
        r_try = r_px * shrink
        margin = r_try + 2.0
        done = False
        for _ in range(40):
            cx = float(gen.uniform(margin, res - margin))
            cy = float(gen.uniform(margin, res - margin))
            if all(np.hypot(cx - px, cy - py) > (r_try + pr + 2.0) for px, py, pr in placed):
                done = True
                break
        if done:
            r_px = r_try
            break
    placed.append((cx, cy, r_px))

    if spec.label == "benign":
        ks = np.arange(1, 3)
        amps = gen.uniform(-0.05, 0.05, ks.size)
        base_fill = np.array([0.45, 0.28, 0.18]) + gen.uniform(-0.04, 0.04, 3)
    else:
        # 1/k amplitude decay keeps high harmonics from forming thin dark
        # fingers that would mimic hair under the closing residue
        ks = np.arange(1, 9)
        amps = gen.uniform(-0.22, 0.22, ks.size) / ks
        base_fill = np.array([0.36, 0.22, 0.16]) + gen.uniform(-0.02, 0.02, 3)
    phases = gen.uniform(0, 2 * np.pi, ks.size)

    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64) + 0.5
    rho = np.hypot(xx - cx, yy - cy)
    phi = np.arctan2(yy - cy, xx - cx)
    radius = r_px * np.clip(1.0 + sum(a * np.cos(k * phi + p) for k, a, p in zip(ks, amps, phases)), 0.55, 1.55)

    if spec.label == "benign":
        edge = 0.8
    else:
        blur_dir = gen.uniform(0, 2 * np.pi)
        edge = 0.6 + 1.8 * (0.5 + 0.5 * np.cos(phi - blur_dir))
    alpha = np.clip((radius - rho) / edge + 0.5, 0.0, 1.0)

    fill = np.broadcast_to(base_fill, (res, res, 3)).copy()
    if spec.label == "malignant":
        # variegation is chromatic but nearly iso-luminant: the classifier
        # sees it, the luminance-based hair detector does not
        blotch = _smooth_noise(gen, res, 4)
        second = np.array([0.48, 0.155, 0.10]) + gen.uniform(-0.02, 0.02, 3)
        fill = np.where((blotch > 0.1)[:, :, None], second[None, None, :], fill)
    fill = np.clip(fill + 0.015 * _smooth_noise(gen, res, 6)[:, :, None], 0.0, 1.0)
    return alpha, fill


def _render_hair(gen: np.random.Generator, res: int) -> tuple[np.ndarray, np.ndarray]:
    """(alpha [H,W], color [H,W,3]) for a bundle of quadratic hair strands.

    Strands share a dominant orientation per image (hairs grow in patches),
    which also keeps their mask components strand-shaped rather than webbed.
    """
    n_strands = int(gen.integers(5, 13))
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64) + 0.5
    alpha = np.zeros((res, res))
    color = np.zeros((res, res, 3))
    width = max(0.55, res / 110.0)
    aa = 0.6
    reach = width + 0.5 * aa + 1.0
    ts = np.linspace(0.0, 1.0, 4 * res)[:, None]
    theta0 = gen.uniform(0.0, np.pi)
    for _ in range(n_strands):
        theta = theta0 + gen.uniform(-0.3, 0.3)
        direction = np.array([np.cos(theta), np.sin(theta)])
        anchor = gen.uniform(-0.1 * res, 1.1 * res, 2)
        half = gen.uniform(0.5, 0.9) * res
        p0 = anchor - half * direction
        p2 = anchor + half * direction
        perp = np.array([-direction[1], direction[0]])
        p1 = anchor + perp * gen.uniform(-0.15, 0.15) * res
        curve = (1 - ts) ** 2 * p0 + 2 * ts * (1 - ts) * p1 + ts**2 * p2
        x0, x1 = curve[:, 0].min() - reach, curve[:, 0].max() + reach
        y0, y1 = curve[:, 1].min() - reach, curve[:, 1].max() + reach
        box = (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
        if not box.any():
            continue
        pts = np.stack([xx[box], yy[box]], axis=1)
        d2 = ((pts[:, None, :] - curve[None, :, :]) ** 2).sum(axis=2)
        dist = np.sqrt(d2.min(axis=1))
        a_local = np.clip((width - dist) / aa + 0.5, 0.0, 1.0)
        shade = np.array([0.10, 0.08, 0.06]) + gen.uniform(0.0, 0.06)
        a_img = np.zeros((res, res))
        a_img[box] = a_local
        stronger = a_img > alpha
        alpha = np.where(stronger, a_img, alpha)
        color[stronger] = shade
    alpha[alpha < _HAIR_ALPHA_FLOOR] = 0.0
    return alpha, color


def gen_image(spec: LesionSpec) -> ToySample:
    """Render one fully deterministic toy sample with its ground truth."""
    res = spec.resolution
    gen = rngmod.stream(spec.seed, "toyderm")
    base = np.array(_BASE_TONE[spec.tone]) + gen.uniform(-0.03, 0.03, 3)
    img = np.clip(base[None, None, :] + 0.02 * _smooth_noise(gen, res, 5, 3), 0.0, 1.0)

    lesion_mask = np.zeros((res, res), dtype=bool)
    placed: list = []
    for _ in range(spec.count):
        alpha, fill = _render_lesion(gen, spec, res, placed)
        img = img * (1.0 - alpha[:, :, None]) + fill * alpha[:, :, None]
        lesion_mask |= alpha > 0.5
    img = np.clip(img, 0.0, 1.0)
    hairless = img.copy()

    if spec.hair:
        h_alpha, h_color = _render_hair(gen, res)
        img = img * (1.0 - h_alpha[:, :, None]) + h_color * h_alpha[:, :, None]
        hair_mask = h_alpha > 0.0
    else:
        hair_mask = np.zeros((res, res), dtype=bool)

    return ToySample(
        image=np.clip(img, 0.0, 1.0).astype(np.float32),
        label=spec.label,
        attributes={
            "label": spec.label,
            "size": spec.size,
            "count": spec.count,
            "tone": spec.tone,
            "hair": spec.hair,
            "seed": spec.seed,
        },
        lesion_mask=lesion_mask,
        hair_mask=hair_mask,
        hairless=hairless.astype(np.float32),
    )


def boundary_irregularity(mask: np.ndarray, bins: int = 72) -> float:
    """Radial deviation of a lesion mask: std/mean of per-angle boundary radius.

    Computed purely from mask pixels, independent of generator internals.
    """
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("empty mask")
    cy, cx = ys.mean(), xs.mean()
    rho = np.hypot(xs - cx, ys - cy)
    phi = np.arctan2(ys - cy, xs - cx)
    idx = ((phi + np.pi) / (2 * np.pi) * bins).astype(int) % bins
    radii = np.zeros(bins)
    for b in range(bins):
        sel = idx == b
        if sel.any():
            radii[b] = rho[sel].max()
    radii = radii[radii > 0]
    return float(radii.std() / radii.mean())


def random_spec(label: str, sample_index: int, master_seed: int, resolution: int,
                hair_fraction: float = 0.25, multiple_fraction: float = 0.25) -> LesionSpec:
    """Draw one sample's attributes from its own counter-based stream."""
    gen = rngmod.stream(master_seed, "toyderm-spec", sample_index)
    size = list(SIZES)[int(gen.integers(len(SIZES)))]
    count = 1 if gen.random() >= multiple_fraction else int(gen.integers(2, 4))
    # multi-lesion large specs cannot fit the frame with the required margin
    if count > 1 and size == "large":
        size = "medium"
    tone = TONES[int(gen.integers(2))]
    hair = bool(gen.random() < hair_fraction)
    seed = int(gen.integers(2**62))
    return LesionSpec(label=label, size=size, count=count, tone=tone, hair=hair,
                      seed=seed, resolution=resolution)


def gen_dataset(
    out_dir,
    per_class: int = 256,
    resolution: int = 32,
    master_seed: int = 0,
    hair_fraction: float = 0.25,
    multiple_fraction: float = 0.25,
    progress=None,
) -> Path:
    """Write per_class samples per label plus a CSV manifest; returns its path."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for c, label in enumerate(LABELS):
        for i in range(per_class):
            sample_index = c * per_class + i
            spec = random_spec(label, sample_index, master_seed, resolution,
                               hair_fraction, multiple_fraction)
            sample = gen_image(spec)
            rel = f"images/{label}_{i:05d}.png"
            data.save_image(out / rel, sample.image)
            rows.append(
                {
                    "path": rel,
                    "label": label,
                    "size": spec.size,
                    "count": spec.count,
                    "tone": spec.tone,
                    "hair": int(spec.hair),
                    "seed": spec.seed,
                }
            )
            if progress is not None and (sample_index + 1) % 128 == 0:
                progress(sample_index + 1, 2 * per_class)
    manifest = out / "manifest.csv"
    data.write_manifest(manifest, rows)
    echo = {
        "per_class": per_class,
        "resolution": resolution,
        "master_seed": master_seed,
        "hair_fraction": hair_fraction,
        "multiple_fraction": multiple_fraction,
        "labels": list(LABELS),
    }
    (out / "genconfig.json").write_text(json.dumps(echo, sort_keys=True, indent=1) + "\n")
    return manifest
