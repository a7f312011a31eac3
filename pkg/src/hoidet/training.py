"""Optimization loop: batched steps, step-decay schedule, checkpoints.

All stochastic draws (shuffling, dropout) derive from the schedule seed
plus the epoch/step index, so resuming from an epoch-boundary checkpoint
reproduces the exact remaining trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, backward
from .data import SceneSample
from .errors import ConfigError, NumericsError
from .fileio import atomic_write_json
from .losses import LossBreakdown, LossWeights, compute_loss
from .model import HOIModel, load_checkpoint, save_checkpoint
from .optim import AdamW, clip_grad_norm_
from .rng import derive_rng


@dataclass
class Schedule:
    epochs: int = 150
    batch_size: int = 16
    lr: float = 1e-4
    lr_backbone: float = 1e-5
    decay_epochs: tuple[int, ...] = (100, 130)
    decay_factor: float = 0.1
    grad_clip: float = 0.1
    weight_decay: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only

    def validate(self) -> None:
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.lr < 0 or self.lr_backbone < 0:
            problems.append("learning rates must be >= 0")
        if not 0 < self.decay_factor <= 1:
            problems.append("decay_factor must be in (0, 1]")
        if problems:
            raise ConfigError("invalid schedule:\n  " + "\n  ".join(problems))

    def lr_at(self, epoch: int, base: float) -> float:
        drops = sum(1 for d in self.decay_epochs if epoch >= d)
        return base * (self.decay_factor ** drops)


def make_param_groups(model: HOIModel, lr: float, lr_backbone: float) -> list[dict]:
    backbone, rest = [], []
    for name, p in model.named_parameters():
        (backbone if name.startswith("backbone.") else rest).append((name, p))
    return [
        {"name": "backbone", "params": backbone, "lr": lr_backbone},
        {"name": "rest", "params": rest, "lr": lr},
    ]


def train_step(model: HOIModel, batch: list[SceneSample], optimizer: AdamW,
               weights: LossWeights, step: int, seed: int,
               grad_clip: float = 0.1) -> LossBreakdown:
    """Forward, match, loss, backward, clipped AdamW update."""
    model.train()
    rng = derive_rng(seed, "dropout", step)
    images = Tensor(np.stack([s.image for s in batch]))
    outputs = model.forward(images, rng=rng)
    total, breakdown, _ = compute_loss(outputs, [s.gts for s in batch], weights)
    optimizer.zero_grad()
    backward(total)
    if grad_clip > 0:
        clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return breakdown


@dataclass
class FitResult:
    final_checkpoint: str
    metrics_path: str
    steps: int
    last_breakdown: LossBreakdown | None = None
    checkpoints: list[str] = field(default_factory=list)


def fit(model: HOIModel, samples: list[SceneSample], schedule: Schedule,
        weights: LossWeights, out_dir: str | Path,
        resume_from: str | Path | None = None) -> FitResult:
    """Epoch loop with step-decay learning rates and periodic checkpoints."""
    schedule.validate()
    weights.validate()
    if not samples:
        raise ConfigError("fit: empty training set")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    optimizer = AdamW(make_param_groups(model, schedule.lr, schedule.lr_backbone),
                      weight_decay=schedule.weight_decay)
    start_epoch, step = 0, 0
    metrics_path = out_dir / "metrics.jsonl"
    mode = "w"
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        model.load_state_dict(ckpt.params)
        optimizer.load_state_arrays(ckpt.arrays, int(ckpt.meta.get("optimizer_t", 0)))
        start_epoch = int(ckpt.meta.get("epoch", 0))
        step = int(ckpt.meta.get("step", 0))
        mode = "a"

    checkpoints: list[str] = []
    last_breakdown: LossBreakdown | None = None

    def write_checkpoint(path: Path, epoch: int) -> None:
        save_checkpoint(path, model,
                        meta={"epoch": epoch, "step": step, "optimizer_t": optimizer.t},
                        arrays=optimizer.state_arrays())

    with open(metrics_path, mode, encoding="utf-8") as metrics:
        for epoch in range(start_epoch, schedule.epochs):
            lr = schedule.lr_at(epoch, schedule.lr)
            lr_backbone = schedule.lr_at(epoch, schedule.lr_backbone)
            optimizer.set_lr("rest", lr)
            optimizer.set_lr("backbone", lr_backbone)
            order = derive_rng(schedule.seed, "shuffle", epoch).permutation(len(samples))
            for lo in range(0, len(samples), schedule.batch_size):
                batch = [samples[i] for i in order[lo:lo + schedule.batch_size]]
                try:
                    breakdown = train_step(model, batch, optimizer, weights,
                                           step=step, seed=schedule.seed,
                                           grad_clip=schedule.grad_clip)
                except NumericsError as exc:
                    atomic_write_json(out_dir / "failure.json", {
                        "step": step, "epoch": epoch, "error": str(exc),
                        "last_breakdown": last_breakdown.as_dict() if last_breakdown else None,
                    })
                    raise
                step += 1
                last_breakdown = breakdown
                record = {"step": step, "epoch": epoch,
                          "lr": lr, "lr_backbone": lr_backbone}
                record.update(breakdown.as_dict())
                metrics.write(json.dumps(record) + "\n")
            metrics.flush()
            done = epoch + 1
            if schedule.checkpoint_every and done % schedule.checkpoint_every == 0 \
                    and done < schedule.epochs:
                path = ckpt_dir / f"epoch_{done:04d}.ckpt"
                write_checkpoint(path, done)
                checkpoints.append(str(path))

    final_path = out_dir / "final.ckpt"
    write_checkpoint(final_path, schedule.epochs)
    checkpoints.append(str(final_path))
    return FitResult(final_checkpoint=str(final_path), metrics_path=str(metrics_path),
                     steps=step, last_breakdown=last_breakdown, checkpoints=checkpoints)
