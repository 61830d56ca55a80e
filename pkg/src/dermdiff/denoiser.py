"""Conditional denoiser: a small U-shaped convnet predicting the clean image.

``DenoiserModel.forward(x, s, c)`` maps a noisy batch at cumulative noise
level s, plus a conditioning vector c, to an estimate of the clean image.
Internally the network is wrapped in noise-dependent input/output scaling
(sigma_data-style preconditioning) so activations stay O(1) across the
whole noise range; externally the contract is simply a same-shape
clean-image prediction, deterministic in (weights, x, s, c).

Architecture: stem conv, three encoder stages at ``widths`` with two
residual blocks each (group norm + SiLU + 3x3 convs), stride-2 conv
downsampling, nearest-neighbor upsampling with skip concatenation, and a
3-channel head.  Noise level and conditioning enter as a shared embedding
added to every block's feature maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import conditioning, rng as rngmod, tensor as T

SIGMA_DATA = 0.5  # working std of images scaled to [-1, 1]


def _resblock_names(prefix: str, c_in: int, c_out: int, emb_dim: int) -> list[tuple[str, tuple[int, ...]]]:
    names = [
        (f"{prefix}.gn1.g", (c_in,)),
        (f"{prefix}.gn1.b", (c_in,)),
        (f"{prefix}.conv1.w", (c_out, c_in, 3, 3)),
        (f"{prefix}.conv1.b", (c_out,)),
        (f"{prefix}.emb.w", (emb_dim, c_out)),
        (f"{prefix}.emb.b", (c_out,)),
        (f"{prefix}.gn2.g", (c_out,)),
        (f"{prefix}.gn2.b", (c_out,)),
        (f"{prefix}.conv2.w", (c_out, c_out, 3, 3)),
        (f"{prefix}.conv2.b", (c_out,)),
    ]
    if c_in != c_out:
        names.append((f"{prefix}.skip.w", (c_out, c_in, 1, 1)))
        names.append((f"{prefix}.skip.b", (c_out,)))
    return names


@dataclass(frozen=True)
class Descriptor:
    """Architecture hyperparameters; fully determines shapes and names."""

    resolution: int = 32
    widths: tuple[int, int, int] = (32, 64, 128)
    blocks_per_stage: int = 2
    groups: int = 8
    emb_dim: int = 128
    cond_dim: int = conditioning.EMBED_DIM
    vocab_size: int = len(conditioning.DEFAULT_VOCAB)
    lora_targets: tuple[str, ...] = ()

    def __post_init__(self):
        if self.resolution not in (32, 64):
            raise ValueError(f"resolution must be 32 or 64, got {self.resolution}")
        if len(self.widths) != 3 or any(w % self.groups for w in self.widths):
            raise ValueError("need three stage widths, each divisible by the group count")
        if not self.lora_targets:
            object.__setattr__(self, "lora_targets", tuple(self.default_lora_targets()))

    def stage_plan(self) -> list[tuple[str, int, int]]:
        """(block prefix, c_in, c_out) for every residual block in order."""
        w0, w1, w2 = self.widths
        plan = []
        for stage, w in (("enc0", w0), ("enc1", w1), ("mid", w2)):
            for b in range(self.blocks_per_stage):
                plan.append((f"{stage}.b{b}", w, w))
        plan.append(("dec1.b0", w2 + w1, w1))
        for b in range(1, self.blocks_per_stage):
            plan.append((f"dec1.b{b}", w1, w1))
        plan.append(("dec0.b0", w1 + w0, w0))
        for b in range(1, self.blocks_per_stage):
            plan.append((f"dec0.b{b}", w0, w0))
        return plan

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        w0, w1, w2 = self.widths
        shapes: dict[str, tuple[int, ...]] = {
            "cond.table": (self.vocab_size, self.cond_dim),
            "cond.proj.w": (self.cond_dim, self.emb_dim),
            "cond.proj.b": (self.emb_dim,),
            "temb.lin1.w": (64, self.emb_dim),
            "temb.lin1.b": (self.emb_dim,),
            "temb.lin2.w": (self.emb_dim, self.emb_dim),
            "temb.lin2.b": (self.emb_dim,),
            "stem.w": (w0, 3, 3, 3),
            "stem.b": (w0,),
            "down0.w": (w1, w0, 3, 3),
            "down0.b": (w1,),
            "down1.w": (w2, w1, 3, 3),
            "down1.b": (w2,),
            "head.gn.g": (w0,),
            "head.gn.b": (w0,),
            "head.w": (3, w0, 3, 3),
            "head.b": (3,),
        }
        for prefix, c_in, c_out in self.stage_plan():
            shapes.update(dict(_resblock_names(prefix, c_in, c_out, self.emb_dim)))
        return shapes

    def default_lora_targets(self) -> list[str]:
        """The 1x1 projection convs plus every embedding projection."""
        targets = ["cond.proj", "temb.lin1", "temb.lin2"]
        for prefix, c_in, c_out in self.stage_plan():
            targets.append(f"{prefix}.emb")
            if c_in != c_out:
                targets.append(f"{prefix}.skip")
        return sorted(targets)

    def to_meta(self) -> dict:
        return {
            "resolution": self.resolution,
            "widths": list(self.widths),
            "blocks_per_stage": self.blocks_per_stage,
            "groups": self.groups,
            "emb_dim": self.emb_dim,
            "cond_dim": self.cond_dim,
            "vocab_size": self.vocab_size,
            "lora_targets": list(self.lora_targets),
        }

    @staticmethod
    def from_meta(meta: dict) -> "Descriptor":
        return Descriptor(
            resolution=meta["resolution"],
            widths=tuple(meta["widths"]),
            blocks_per_stage=meta["blocks_per_stage"],
            groups=meta["groups"],
            emb_dim=meta["emb_dim"],
            cond_dim=meta["cond_dim"],
            vocab_size=meta["vocab_size"],
            lora_targets=tuple(meta["lora_targets"]),
        )


def _sinusoid_features(s: np.ndarray, dtype) -> np.ndarray:
    """Log-scaled sinusoidal features of the noise level, 64 wide."""
    u = np.log(s.astype(np.float64))
    freqs = np.exp(np.linspace(math.log(0.25), math.log(64.0), 32))
    ang = u[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


class DenoiserModel:
    """U-shaped conditional denoiser with named parameters and LoRA hooks."""

    def __init__(self, descriptor: Descriptor = Descriptor(), seed: int = 0, dtype=np.float32):
        self.descriptor = descriptor
        self.params: dict[str, T.Tensor] = {}
        self.adapter = None  # set by lora.attach
        gen = rngmod.stream(seed, "model-init")
        for name, shape in sorted(descriptor.parameter_shapes().items()):
            self.params[name] = T.Tensor(self._init_array(name, shape, gen), requires_grad=True, dtype=dtype)

    @staticmethod
    def _init_array(name: str, shape: tuple[int, ...], gen: np.random.Generator) -> np.ndarray:
        if name.endswith(".g"):
            return np.ones(shape, dtype=np.float64)
        if name.endswith(".b"):
            return np.zeros(shape, dtype=np.float64)
        if name == "cond.table":
            return 0.02 * gen.standard_normal(shape)
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            w = gen.standard_normal(shape) * math.sqrt(2.0 / fan_in)
            return w * 0.1 if name == "head.w" else w
        fan_in = shape[0]
        return gen.standard_normal(shape) * math.sqrt(2.0 / fan_in)

    # -- parameter access -------------------------------------------------

    @property
    def dtype(self):
        return self.params["stem.w"].dtype

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing tensor {name}")
            if arrays[name].shape != t.shape:
                raise ValueError(f"tensor {name}: shape {arrays[name].shape} vs {t.shape}")
            t.data = np.ascontiguousarray(arrays[name], dtype=t.data.dtype)

    def cast(self, dtype) -> "DenoiserModel":
        """Copy of the model with parameters in another dtype (for test oracles)."""
        out = DenoiserModel.__new__(DenoiserModel)
        out.descriptor = self.descriptor
        out.adapter = None
        out.params = {
            name: T.Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, dtype=dtype)
            for name, t in self.params.items()
        }
        return out

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    # -- layers ------------------------------------------------------------

    def _lora_delta_linear(self, name: str, x: T.Tensor) -> T.Tensor | None:
        if self.adapter is None or name not in self.adapter.deltas:
            return None
        a, b = self.adapter.deltas[name]
        h = T.matmul(T.matmul(x, T.transpose(a)), T.transpose(b))
        return T.scale(h, self.adapter.alpha / self.adapter.rank)

    def _lora_delta_conv(self, name: str, x: T.Tensor) -> T.Tensor | None:
        if self.adapter is None or name not in self.adapter.deltas:
            return None
        a, b = self.adapter.deltas[name]
        r, c_in = a.shape
        c_out = b.shape[0]
        h = T.conv2d(x, T.reshape(a, (r, c_in, 1, 1)), stride=1, pad=0)
        h = T.conv2d(h, T.reshape(b, (c_out, r, 1, 1)), stride=1, pad=0)
        return T.scale(h, self.adapter.alpha / self.adapter.rank)

    def _linear(self, name: str, x: T.Tensor) -> T.Tensor:
        y = T.matmul(x, self.params[f"{name}.w"])
        delta = self._lora_delta_linear(name, x)
        if delta is not None:
            y = T.add(y, delta)
        return T.add_bias(y, self.params[f"{name}.b"])

    def _conv(self, name: str, x: T.Tensor, stride: int = 1) -> T.Tensor:
        w = self.params[f"{name}.w"]
        y = T.conv2d(x, w, stride=stride, pad=w.shape[2] // 2)
        delta = self._lora_delta_conv(name, x)
        if delta is not None:
            y = T.add(y, delta)
        return T.add_bias(y, self.params[f"{name}.b"])

    def _gn(self, name: str, x: T.Tensor) -> T.Tensor:
        return T.group_norm(x, self.descriptor.groups, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _resblock(self, prefix: str, x: T.Tensor, emb: T.Tensor, has_skip: bool) -> T.Tensor:
        h = self._conv(f"{prefix}.conv1", T.silu(self._gn(f"{prefix}.gn1", x)))
        h = T.add_spatial(h, self._linear(f"{prefix}.emb", emb))
        h = self._conv(f"{prefix}.conv2", T.silu(self._gn(f"{prefix}.gn2", h)))
        sk = self._conv(f"{prefix}.skip", x) if has_skip else x
        return T.add(sk, h)

    # -- public API ---------------------------------------------------------

    def embed(self, s, batch: int) -> T.Tensor:
        """Shared noise+conditioning embedding, before the conditioning add."""
        s_arr = np.asarray(s, dtype=np.float64).reshape(-1)
        if s_arr.size == 1:
            s_arr = np.full(batch, s_arr[0])
        if s_arr.size != batch:
            raise T.ShapeError(f"noise level count {s_arr.size} vs batch {batch}")
        if np.any(s_arr <= 0):
            raise ValueError("noise level must be positive")
        feats = T.Tensor(_sinusoid_features(s_arr, self.dtype), dtype=self.dtype)
        return self._linear("temb.lin2", T.silu(self._linear("temb.lin1", feats)))

    def forward(self, x, s, cond) -> T.Tensor:
        """Clean-image prediction for noisy input x at noise level(s) s."""
        xt = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x), dtype=self.dtype)
        res = self.descriptor.resolution
        if xt.data.ndim != 4 or xt.shape[1] != 3 or xt.shape[2] != res or xt.shape[3] != res:
            raise T.ShapeError(f"input {xt.shape} does not match descriptor resolution {res}")
        n = xt.shape[0]
        ct = cond if isinstance(cond, T.Tensor) else T.Tensor(np.asarray(cond), dtype=self.dtype)
        if ct.shape != (n, self.descriptor.cond_dim):
            raise T.ShapeError(f"conditioning {ct.shape} vs ({n}, {self.descriptor.cond_dim})")

        s_arr = np.asarray(s, dtype=np.float64).reshape(-1)
        if s_arr.size == 1:
            s_arr = np.full(n, s_arr[0])
        # sigma_data preconditioning keeps activations O(1) at every level
        c_in = (1.0 / np.sqrt(s_arr**2 + SIGMA_DATA**2)).astype(self.dtype)[:, None, None, None]
        c_skip = (SIGMA_DATA**2 / (s_arr**2 + SIGMA_DATA**2)).astype(self.dtype)[:, None, None, None]
        c_out = (s_arr * SIGMA_DATA / np.sqrt(s_arr**2 + SIGMA_DATA**2)).astype(self.dtype)[:, None, None, None]

        emb = T.silu(T.add(self.embed(s_arr, n), self._linear("cond.proj", ct)))

        bps = self.descriptor.blocks_per_stage
        h = self._conv("stem", T.mul(xt, T.Tensor(np.broadcast_to(c_in, xt.shape).copy(), dtype=self.dtype)))
        for b in range(bps):
            h = self._resblock(f"enc0.b{b}", h, emb, has_skip=False)
        skip0 = h
        h = self._conv("down0", h, stride=2)
        for b in range(bps):
            h = self._resblock(f"enc1.b{b}", h, emb, has_skip=False)
        skip1 = h
        h = self._conv("down1", h, stride=2)
        for b in range(bps):
            h = self._resblock(f"mid.b{b}", h, emb, has_skip=False)
        h = T.concat_channels(T.upsample_nearest(h, 2), skip1)
        h = self._resblock("dec1.b0", h, emb, has_skip=True)
        for b in range(1, bps):
            h = self._resblock(f"dec1.b{b}", h, emb, has_skip=False)
        h = T.concat_channels(T.upsample_nearest(h, 2), skip0)
        h = self._resblock("dec0.b0", h, emb, has_skip=True)
        for b in range(1, bps):
            h = self._resblock(f"dec0.b{b}", h, emb, has_skip=False)
        raw = self._conv("head", T.silu(self._gn("head.gn", h)))

        cs = T.Tensor(np.broadcast_to(c_skip, xt.shape).copy(), dtype=self.dtype)
        co = T.Tensor(np.broadcast_to(c_out, raw.shape).copy(), dtype=self.dtype)
        return T.add(T.mul(xt, cs), T.mul(raw, co))

    def predict(self, x: np.ndarray, s, cond: np.ndarray) -> np.ndarray:
        """Inference-only forward returning a plain array (no tape)."""
        with T.no_grad():
            return self.forward(x, s, cond).data

    def describe(self) -> str:
        """Stable architecture summary: layers, shapes, counts, LoRA targets."""
        d = self.descriptor
        lines = [
            f"DenoiserModel resolution={d.resolution} widths={list(d.widths)} "
            f"blocks_per_stage={d.blocks_per_stage} groups={d.groups}",
            f"embedding: sinusoid(64) -> {d.emb_dim} -> {d.emb_dim}; cond {d.cond_dim} -> {d.emb_dim}",
        ]
        shapes = self.descriptor.parameter_shapes()
        for name in sorted(shapes):
            size = int(np.prod(shapes[name]))
            lines.append(f"  {name:24s} {str(tuple(shapes[name])):20s} {size}")
        lines.append(f"total parameters: {self.parameter_count()}")
        lines.append("lora targets: " + ", ".join(d.lora_targets))
        return "\n".join(lines)
