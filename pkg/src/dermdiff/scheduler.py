"""Discrete variance-exploding noise schedule.

The forward process is an additive random walk: each step adds fresh
Gaussian noise with per-step deviation sigma_i, so the walk from a clean
image to step t composes into a single draw at the cumulative level
s_t = sqrt(sum_{i<=t} sigma_i^2).  Samplers traverse the cumulative levels
in descending order; see :data:`FORWARD_INDEX_ASCENDING`.
"""

from dataclasses import dataclass, field

import numpy as np

# Direction convention for the per-step ladder: the forward (noising)
# process consumes sigma_1..sigma_T in ascending index order, while the
# samplers walk the cumulative levels from s_K down to 0.  Training draws
# t uniformly from 1..T, so only this indexing convention, not a schedule
# "direction", is observable.
FORWARD_INDEX_ASCENDING = True

DEFAULT_STEPS = 1000
DEFAULT_SIGMA_MIN = 0.02
DEFAULT_SIGMA_MAX = 10.0


@dataclass(frozen=True)
class SigmaSchedule:
    """Per-step noise deviations sigma_1..sigma_T plus cumulative levels."""

    sigmas: np.ndarray
    cumulative: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        sig = np.asarray(self.sigmas, dtype=np.float64)
        if sig.ndim != 1 or sig.size < 1:
            raise ValueError("schedule needs at least one sigma")
        if np.any(sig <= 0):
            raise ValueError("all sigmas must be positive")
        cum = np.sqrt(np.cumsum(sig * sig))
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "cumulative", cum)

    @property
    def steps(self) -> int:
        return self.sigmas.size

    def level(self, t: int) -> float:
        """Cumulative noise level s_t for step t in 1..T."""
        if not 1 <= t <= self.steps:
            raise ValueError(f"step {t} outside 1..{self.steps}")
        return float(self.cumulative[t - 1])


@dataclass(frozen=True)
class SamplerLadder:
    """Descending cumulative levels for inference, terminal level exactly 0."""

    levels: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.size < 2 or lv[-1] != 0.0:
            raise ValueError("ladder must end at exactly 0")
        if np.any(np.diff(lv) >= 0):
            raise ValueError("ladder levels must be strictly descending")
        object.__setattr__(self, "levels", lv)

    @property
    def steps(self) -> int:
        return self.levels.size - 1


def build_sigma_ladder(
    steps: int = DEFAULT_STEPS,
    sigma_min: float = DEFAULT_SIGMA_MIN,
    sigma_max: float = DEFAULT_SIGMA_MAX,
) -> SigmaSchedule:
    """Geometric per-step ladder from sigma_min up to sigma_max."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0 < sigma_min <= sigma_max:
        raise ValueError(f"need 0 < sigma_min <= sigma_max, got {sigma_min}, {sigma_max}")
    if steps == 1:
        return SigmaSchedule(np.array([sigma_max]))
    ratio = sigma_max / sigma_min
    exponents = np.arange(steps, dtype=np.float64) / (steps - 1)
    return SigmaSchedule(sigma_min * ratio**exponents)


def forward_noise(
    x0: np.ndarray, t: int, sched: SigmaSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Noise a clean batch to step t: x0 + s_t * z, z ~ N(0, I).

    Closed-form composition of t literal walk steps x_i = x_{i-1} + sigma_i z_i.
    """
    if not 1 <= t <= sched.steps:
        raise ValueError(f"step {t} outside 1..{sched.steps}")
    if x0.min() < -1.0 - 1e-6 or x0.max() > 1.0 + 1e-6:
        raise ValueError("clean images must lie in [-1, 1]")
    s_t = x0.dtype.type(sched.level(t))
    z = rng.standard_normal(x0.shape, dtype=np.float32).astype(x0.dtype, copy=False)
    return x0 + s_t * z


def sampler_sublevels(sched: SigmaSchedule, num_steps: int) -> SamplerLadder:
    """Pick num_steps cumulative levels at evenly spaced indices, descending, plus 0."""
    if not 1 <= num_steps <= sched.steps:
        raise ValueError(f"sampler steps {num_steps} outside 1..{sched.steps}")
    idx = np.round(np.linspace(sched.steps, 1, num_steps)).astype(int)
    levels = np.concatenate([sched.cumulative[idx - 1], [0.0]])
    return SamplerLadder(levels)
