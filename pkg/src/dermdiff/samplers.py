"""Inference samplers over the variance-exploding ladder: Euler, Euler
ancestral, and a pseudo linear multistep (Adams-Bashforth) method, all with
classifier-free guidance.

Every sampler consumes a ``denoise(x, s) -> clean estimate`` callable (see
:func:`make_guided_denoiser`), walks the ladder levels from s_K down to the
terminal 0, and returns pixels in [0, 1].  Initial and ancestral noise come
from per-image counter-based streams, so results do not depend on how a
batch of images is chunked across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import conditioning, rng as rngmod
from .scheduler import SamplerLadder

SAMPLER_NAMES = ("euler", "euler_a", "plms")
DEFAULT_CFG_SCALE = 7.0
DEFAULT_STEPS = 22


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "euler"
    steps: int = DEFAULT_STEPS
    cfg_scale: float = DEFAULT_CFG_SCALE
    seed: int = 0
    count: int = 1

    def __post_init__(self):
        if self.method not in SAMPLER_NAMES:
            raise ValueError(f"sampler must be one of {SAMPLER_NAMES}, got {self.method!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.method == "plms" and self.steps < 4:
            import warnings

            warnings.warn("plms with fewer than 4 steps falls back to warmup-only updates", stacklevel=2)
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")


def apply_cfg(d_cond: np.ndarray, d_uncond: np.ndarray, scale: float) -> np.ndarray:
    """Guided prediction: d_uncond + scale * (d_cond - d_uncond)."""
    if d_cond.shape != d_uncond.shape:
        raise ValueError(f"cfg: shapes {d_cond.shape} vs {d_uncond.shape}")
    return d_uncond + scale * (d_cond - d_uncond)


def make_guided_denoiser(
    model, cond_vec: np.ndarray, cfg_scale: float, null_vec: np.ndarray | None = None
) -> Callable[[np.ndarray, float], np.ndarray]:
    """CFG-guided denoiser closure over a model.

    At scale 1 only the conditional branch is evaluated (and at scale 0 only
    the unconditional one); otherwise both run and are blended by
    :func:`apply_cfg`.
    """
    if null_vec is None:
        null_vec = conditioning.null_vector(model.params["cond.table"])
    cond_vec = np.asarray(cond_vec, dtype=np.float32).reshape(-1)
    null_vec = np.asarray(null_vec, dtype=np.float32).reshape(-1)

    def denoise(x: np.ndarray, s: float) -> np.ndarray:
        n = x.shape[0]
        if cfg_scale == 1.0:
            return model.predict(x, s, np.tile(cond_vec, (n, 1)))
        if cfg_scale == 0.0:
            return model.predict(x, s, np.tile(null_vec, (n, 1)))
        d_c = model.predict(x, s, np.tile(cond_vec, (n, 1)))
        d_u = model.predict(x, s, np.tile(null_vec, (n, 1)))
        return apply_cfg(d_c, d_u, cfg_scale)

    return denoise


def to_pixels(x: np.ndarray) -> np.ndarray:
    """Clamp model-space output to [-1, 1] and map to [0, 1]."""
    return (np.clip(x, -1.0, 1.0) + 1.0) * 0.5


def _init_noise(shape: tuple[int, ...], seed: int, start_index: int) -> np.ndarray:
    per_image = [
        rngmod.stream(seed, "sample-init", start_index + i).standard_normal(shape[1:], dtype=np.float32)
        for i in range(shape[0])
    ]
    return np.stack(per_image)


def _default_ancestral(seed: int, start_index: int, batch: int, image_shape):
    def noise_fn(step: int) -> np.ndarray:
        draws = [
            rngmod.stream(seed, "sample-ancestral", start_index + i, step).standard_normal(
                image_shape, dtype=np.float32
            )
            for i in range(batch)
        ]
        return np.stack(draws)

    return noise_fn


def sample_euler(
    denoise,
    ladder: SamplerLadder,
    shape: tuple[int, ...],
    seed: int = 0,
    *,
    start_index: int = 0,
    callback=None,
) -> np.ndarray:
    """Deterministic Euler integration of the denoising trajectory."""
    levels = ladder.levels
    x = (levels[0] * _init_noise(shape, seed, start_index)).astype(np.float32)
    for k in range(ladder.steps):
        s, s_next = levels[k], levels[k + 1]
        d = (x - denoise(x, float(s))) / np.float32(s)
        x = x + np.float32(s_next - s) * d
        if callback is not None:
            callback(k, float(s), float(s_next), x)
    return to_pixels(x)


def sample_euler_a(
    denoise,
    ladder: SamplerLadder,
    shape: tuple[int, ...],
    seed: int = 0,
    *,
    start_index: int = 0,
    noise_fn=None,
    noise_scale: float = 1.0,
    callback=None,
) -> np.ndarray:
    """Euler ancestral: over-removes noise each step, re-injects a fresh draw.

    ``noise_scale`` is a test hook multiplying sigma_up; at 0 the trajectory
    collapses to plain Euler.  Exactly one ancestral draw is consumed per
    step, including the final deterministic one.
    """
    levels = ladder.levels
    x = (levels[0] * _init_noise(shape, seed, start_index)).astype(np.float32)
    if noise_fn is None:
        noise_fn = _default_ancestral(seed, start_index, shape[0], shape[1:])
    for k in range(ladder.steps):
        s, s_next = levels[k], levels[k + 1]
        d = (x - denoise(x, float(s))) / np.float32(s)
        if s_next > 0:
            sigma_up = np.sqrt(s_next**2 * (s**2 - s_next**2) / s**2) * noise_scale
        else:
            sigma_up = 0.0
        sigma_down = s_next if sigma_up == 0.0 else np.sqrt(s_next**2 - sigma_up**2)
        z = noise_fn(k)
        x = x + np.float32(sigma_down - s) * d + np.float32(sigma_up) * z
        if callback is not None:
            callback(k, float(s), float(s_next), x)
    return to_pixels(x)


def sample_plms(
    denoise,
    ladder: SamplerLadder,
    shape: tuple[int, ...],
    seed: int = 0,
    *,
    start_index: int = 0,
    callback=None,
) -> np.ndarray:
    """Pseudo linear multistep: Heun warmup, then 4-term Adams-Bashforth.

    The first two steps each run a two-call improved-Euler update and bank
    both noise-direction estimates, so the 4-term history is ready from the
    third step on.  Each later step makes a single model call and combines
    it with the three most recent estimates as
    (55 e_k - 59 e_{k-1} + 37 e_{k-2} - 9 e_{k-3}) / 24.
    """
    levels = ladder.levels
    x = (levels[0] * _init_noise(shape, seed, start_index)).astype(np.float32)
    history: list[np.ndarray] = []  # newest first, at most 4
    for k in range(ladder.steps):
        s, s_next = levels[k], levels[k + 1]
        e = (x - denoise(x, float(s))) / np.float32(s)
        if k < 2:
            if s_next > 0:
                x_pred = x + np.float32(s_next - s) * e
                e2 = (x_pred - denoise(x_pred, float(s_next))) / np.float32(s_next)
                e_used = 0.5 * (e + e2)
                history.insert(0, e)
                history.insert(0, e2)
            else:
                e_used = e
                history.insert(0, e)
        else:
            e_used = (55.0 * e - 59.0 * history[0] + 37.0 * history[1] - 9.0 * history[2]) / 24.0
            e_used = e_used.astype(np.float32)
            history.insert(0, e)
        del history[4:]
        x = x + np.float32(s_next - s) * e_used
        if callback is not None:
            callback(k, float(s), float(s_next), x)
    return to_pixels(x)


_SAMPLERS = {"euler": sample_euler, "euler_a": sample_euler_a, "plms": sample_plms}


def render(
    model,
    prompt: str,
    ladder: SamplerLadder,
    config: SamplerConfig,
    *,
    vocab: conditioning.Vocabulary = conditioning.DEFAULT_VOCAB,
    chunk: int = 64,
    start_index: int = 0,
) -> np.ndarray:
    """Generate ``config.count`` images for a prompt; pixels in [0, 1].

    Images are produced in fixed-size chunks with per-image noise streams,
    so the output is independent of chunking and worker count.
    """
    ids = conditioning.tokenize(prompt, vocab)
    table = model.params["cond.table"].data
    cond = table[ids].mean(axis=0) if ids else table[0]
    denoise = make_guided_denoiser(model, cond, config.cfg_scale)
    fn = _SAMPLERS[config.method]
    res = model.descriptor.resolution
    out = []
    for lo in range(0, config.count, chunk):
        n = min(chunk, config.count - lo)
        out.append(
            fn(denoise, ladder, (n, 3, res, res), config.seed, start_index=start_index + lo)
        )
    return np.concatenate(out) if len(out) > 1 else out[0]
