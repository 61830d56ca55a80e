"""Training loop: denoising loss with AdamW, warmup LR, and checkpoints.

Each optimizer step draws ``batch_size * grad_accum`` samples from
counter-based streams keyed by the global sample index, so an accumulated
run replays exactly the same (image, t, noise, dropout) sequence as the
equivalent large-batch run.  ``mode='lora'`` updates only adapter factors
plus the token embedding table; base weights stay bitwise untouched.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt, conditioning, rng as rngmod, tensor as T
from .scheduler import SigmaSchedule

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    epochs: int = 120
    grad_accum: int = 1
    lr: float = 1e-3  # toy default; paper-parity runs use 2e-6
    min_lr: float = 1e-6
    lora_lr: float = 1e-4
    warmup_steps: int = 100
    weight_decay: float = 0.01
    seed: int = 0
    mode: str = "base"
    cond_dropout: float = 0.1
    max_steps: int | None = None
    checkpoint_every: int = 500

    def __post_init__(self):
        for name in ("batch_size", "epochs", "grad_accum", "warmup_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mode not in ("base", "lora"):
            raise ValueError(f"mode must be base or lora, got {self.mode!r}")

    @staticmethod
    def paper_parity(**overrides) -> "TrainConfig":
        return replace(TrainConfig(lr=2e-6), **overrides)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Constant-with-warmup: linear ramp to lr, floored at min_lr afterwards."""
    if step < 1:
        raise ValueError("step counts from 1")
    value = cfg.lr * min(1.0, step / cfg.warmup_steps)
    if step >= cfg.warmup_steps:
        value = max(value, cfg.min_lr)
    return value


class AdamWState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adamw_step(params: dict[str, T.Tensor], state: AdamWState, lr: float, weight_decay: float) -> None:
    """Decoupled AdamW update in place; gradients must be finite."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in sorted(params):
        p = params[name]
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise T.NonFiniteError(f"NaN/Inf gradient for parameter {name!r} at optimizer step {t}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= (lr * update + lr * weight_decay * p.data).astype(p.data.dtype)


@dataclass
class TrainResult:
    steps: int
    loss_trace: list[tuple[int, float, float]]  # (step, loss, lr)
    final_loss: float
    wall_seconds: float
    checkpoints: list[str] = field(default_factory=list)


def _trainable(model, adapter) -> dict[str, T.Tensor]:
    out = {name: p for name, p in model.params.items() if p.requires_grad}
    if adapter is not None:
        out.update(adapter.trainable_params())
    return out


def train(
    model,
    dataset: list[tuple[np.ndarray, list[int]]],
    sched: SigmaSchedule,
    cfg: TrainConfig,
    out_dir=None,
    dataset_hash: str | None = None,
    progress=None,
) -> TrainResult:
    """Run the denoising training loop.

    ``dataset`` is a list of (image [3,R,R] in [-1,1], prompt token ids).
    Writes ``trace.csv``, periodic + final checkpoints, a deterministic
    ``train_manifest.json``, and a volatile ``timing.json`` under out_dir.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    res = model.descriptor.resolution
    for img, _ in dataset[:1]:
        if img.shape != (3, res, res):
            raise ValueError(f"dataset images must be (3,{res},{res}), got {img.shape}")
    adapter = model.adapter
    if cfg.mode == "lora" and adapter is None:
        raise ValueError("mode='lora' requires an attached adapter")
    params = _trainable(model, adapter)
    if not params:
        raise ValueError("no trainable parameters")
    table = model.params["cond.table"]

    eff_batch = cfg.batch_size * cfg.grad_accum
    steps_per_epoch = max(1, math.ceil(len(dataset) / eff_batch))
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    base_lr_cfg = cfg if cfg.mode == "base" else replace(cfg, lr=cfg.lora_lr)

    state = AdamWState()
    trace: list[tuple[int, float, float]] = []
    checkpoints: list[str] = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()

    for step in range(1, total_steps + 1):
        for p in params.values():
            p.zero_grad()
        micro_losses = []
        for micro in range(cfg.grad_accum):
            gbase = (step - 1) * eff_batch + micro * cfg.batch_size
            idx, levels, noises, id_lists = [], [], [], []
            for j in range(cfg.batch_size):
                g = gbase + j
                idx.append(int(rngmod.stream(cfg.seed, "train-pick", g).integers(0, len(dataset))))
                t_j = int(rngmod.stream(cfg.seed, "train-t", g).integers(1, sched.steps + 1))
                levels.append(sched.level(t_j))
                noises.append(rngmod.stream(cfg.seed, "train-z", g).standard_normal((3, res, res), dtype=np.float32))
                dropped = rngmod.stream(cfg.seed, "train-drop", g).random() < cfg.cond_dropout
                id_lists.append([0] if dropped else dataset[idx[-1]][1])
            x0 = np.stack([dataset[i][0] for i in idx])
            s_arr = np.asarray(levels)
            noisy = x0 + s_arr.astype(np.float32)[:, None, None, None] * np.stack(noises)
            with T.Tape() as tape:
                cond = conditioning.encode(table, id_lists)
                pred = model.forward(noisy, s_arr, cond)
                loss = T.mse(pred, T.Tensor(x0))
                scaled = T.scale(loss, 1.0 / cfg.grad_accum)
                tape.backward(scaled)
            micro_losses.append(float(loss.data))
        lr = lr_at(step, base_lr_cfg)
        adamw_step(params, state, lr, cfg.weight_decay)
        mean_loss = float(np.mean(micro_losses))
        if not math.isfinite(mean_loss):
            raise T.NonFiniteError(f"non-finite training loss at step {step}")
        trace.append((step, mean_loss, lr))
        if progress is not None and (step % 100 == 0 or step == total_steps):
            progress(step, total_steps, mean_loss)
        if out_path is not None and (step % cfg.checkpoint_every == 0 or step == total_steps):
            name = f"ckpt_step{step:06d}.dt2m"
            _save(out_path / name, model, adapter, cfg, sched)
            checkpoints.append(name)

    wall = time.perf_counter() - t_start
    if out_path is not None:
        final = "adapter.dt2m" if cfg.mode == "lora" else "model.dt2m"
        _save(out_path / final, model, adapter, cfg, sched)
        checkpoints.append(final)
        with open(out_path / "trace.csv", "w") as f:
            f.write("step,loss,lr\n")
            for step, loss, lr in trace:
                f.write(f"{step},{loss:.8f},{lr:.8g}\n")
        manifest = {
            "config": _config_echo(cfg),
            "dataset_hash": dataset_hash,
            "dataset_size": len(dataset),
            "steps": total_steps,
            "final_loss": round(trace[-1][1], 8),
            "checkpoints": checkpoints,
            "schedule": {
                "steps": sched.steps,
                "sigma_min": float(sched.sigmas[0]),
                "sigma_max": float(sched.sigmas[-1]),
            },
        }
        (out_path / "train_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
        (out_path / "timing.json").write_text(json.dumps({"wall_seconds": wall}) + "\n")
    return TrainResult(
        steps=total_steps,
        loss_trace=trace,
        final_loss=trace[-1][1],
        wall_seconds=wall,
        checkpoints=checkpoints,
    )


def _config_echo(cfg: TrainConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def _save(path, model, adapter, cfg: TrainConfig, sched: SigmaSchedule) -> None:
    sched_meta = {
        "steps": sched.steps,
        "sigma_min": float(sched.sigmas[0]),
        "sigma_max": float(sched.sigmas[-1]),
    }
    if cfg.mode == "lora":
        ckpt.save_adapter(path, adapter, extra_meta={"schedule": sched_meta})
    else:
        ckpt.save_model(path, model, extra_meta={"schedule": sched_meta})
