"""Low-rank adapters on dense and 1x1-conv layers, with ratio-beta merging.

An adapter adds (alpha/rank) * B @ A to a target layer's weight during the
forward pass.  B starts at zero, so a freshly attached adapter leaves the
model output bitwise unchanged.  ``merge`` folds beta-scaled deltas into a
standalone model: beta=0 recovers the base model exactly, beta=1 matches
the adapter-active forward.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod, tensor as T
from .denoiser import DenoiserModel


@dataclass
class LoraAdapter:
    """Per-target (A, B) factor pairs; delta W = (alpha/rank) * B @ A."""

    rank: int
    alpha: float
    targets: tuple[str, ...]
    deltas: dict[str, tuple[T.Tensor, T.Tensor]] = field(default_factory=dict)

    def trainable_params(self) -> dict[str, T.Tensor]:
        out = {}
        for name, (a, b) in self.deltas.items():
            out[f"{name}.lora.A"] = a
            out[f"{name}.lora.B"] = b
        return out

    def delta_matrix(self, name: str) -> np.ndarray:
        """Effective [out, in] weight delta for one target."""
        a, b = self.deltas[name]
        return (self.alpha / self.rank) * (b.data @ a.data)


def _target_dims(model: DenoiserModel, name: str) -> tuple[int, int]:
    """(in, out) extents of a LoRA-capable layer; rejects anything else."""
    key = f"{name}.w"
    if key not in model.params:
        raise KeyError(f"unknown LoRA target {name!r}")
    w = model.params[key]
    if w.data.ndim == 2:  # linear stored [in, out]
        return w.shape[0], w.shape[1]
    if w.data.ndim == 4 and w.shape[2] == 1 and w.shape[3] == 1:  # 1x1 conv [out, in, 1, 1]
        return w.shape[1], w.shape[0]
    raise ValueError(f"LoRA target {name!r} is not a dense or 1x1-conv layer (shape {w.shape})")


def attach(
    model: DenoiserModel,
    rank: int = 4,
    targets: tuple[str, ...] | None = None,
    alpha: float | None = None,
    seed: int = 0,
) -> LoraAdapter:
    """Attach zero-initialized low-rank adapters and freeze the base weights.

    The token embedding table stays trainable: the few-shot recipe trains
    adapters plus personalized token embeddings.
    """
    if model.adapter is not None:
        raise ValueError("model already has an adapter attached")
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if targets is None:
        targets = tuple(model.descriptor.lora_targets)
    adapter = LoraAdapter(rank=rank, alpha=float(alpha if alpha is not None else rank), targets=tuple(targets))
    gen = rngmod.stream(seed, "lora-init")
    for name in adapter.targets:
        d_in, d_out = _target_dims(model, name)
        if rank > min(d_in, d_out):
            raise ValueError(f"rank {rank} exceeds min(in={d_in}, out={d_out}) for target {name!r}")
        a = T.Tensor(0.01 * gen.standard_normal((rank, d_in)), requires_grad=True, dtype=model.dtype)
        b = T.Tensor(np.zeros((d_out, rank)), requires_grad=True, dtype=model.dtype)
        adapter.deltas[name] = (a, b)
    for pname, p in model.params.items():
        if pname != "cond.table":
            p.requires_grad = False
    model.adapter = adapter
    return adapter


def detach(model: DenoiserModel) -> None:
    """Remove the adapter and unfreeze the base weights."""
    model.adapter = None
    for p in model.params.values():
        p.requires_grad = True


def merge(model: DenoiserModel, adapter: LoraAdapter, beta: float) -> DenoiserModel:
    """Standalone model with W = W0 + beta * deltaW on every target."""
    if not 0.0 <= beta <= 1.0:
        warnings.warn(f"merge ratio beta={beta} outside [0, 1]; proceeding", stacklevel=2)
    merged = DenoiserModel(model.descriptor, dtype=model.dtype)
    merged.load_state({name: t.data.copy() for name, t in model.params.items()})
    for name in adapter.targets:
        key = f"{name}.w"
        if key not in merged.params:
            raise KeyError(f"adapter target {name!r} not present in model")
        w = merged.params[key]
        d_in, d_out = _target_dims(model, name)
        a, b = adapter.deltas[name]
        if a.shape != (adapter.rank, d_in) or b.shape != (d_out, adapter.rank):
            raise ValueError(f"adapter factors for {name!r} do not match layer dims ({d_in}, {d_out})")
        if beta == 0.0:
            continue
        delta = (beta * adapter.alpha / adapter.rank) * (b.data @ a.data)
        if w.data.ndim == 2:
            w.data = (w.data + delta.T.astype(w.data.dtype)).astype(w.data.dtype)
        else:
            w.data = (w.data + delta.astype(w.data.dtype)[:, :, None, None]).astype(w.data.dtype)
    return merged
