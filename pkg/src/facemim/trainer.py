"""Pretraining loop: masking, dual-branch forward, optimizer and EMA steps.

Everything that varies over time is a pure function of the step counter —
learning rate, EMA momentum, per-epoch sample order, and per-(sample,
epoch) mask seeds — so a run can be resumed from a checkpoint bit-exactly.
Gradient accumulation emulates large effective batches; the optimizer and
EMA update fire once per effective step.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .dataset import FaceSample
from .errors import TrainingDiverged, ValidationError
from .losses import ALIGN_VARIANTS, LossWeights, pretrain_loss
from .masking import STRATEGIES, MaskConfig, derive_mask_seed, sample_mask
from .model import (
    TARGET_VIEWS,
    BackboneConfig,
    DualBranchModel,
    EmaSchedule,
    ema_update,
)
from .regions import patchify_regions


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    warmup_epochs: int = 2
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    batch_size: int = 8
    accum_iters: int = 1
    mask_strategy: str = "crfr_p"
    mask_ratio: float = 0.75
    region_weight: float = 0.007
    align_weight: float = 0.1
    align_variant: str = "asymmetric_ncs"
    normalize_targets: bool = True
    tau_base: float = 0.996
    target_view: str = "full"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValidationError("need 0 <= warmup_epochs < epochs")
        if self.batch_size < 1 or self.accum_iters < 1:
            raise ValidationError("batch_size and accum_iters must be >= 1")
        if self.mask_strategy not in STRATEGIES:
            raise ValidationError(f"unknown masking strategy: {self.mask_strategy}")
        if self.target_view not in TARGET_VIEWS:
            raise ValidationError(f"unknown target view: {self.target_view}")
        if self.align_variant not in ALIGN_VARIANTS:
            raise ValidationError(f"unknown alignment variant: {self.align_variant}")

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.accum_iters

    def loss_weights(self) -> LossWeights:
        return LossWeights(region=self.region_weight, align=self.align_weight)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass(frozen=True)
class StepRecord:
    step: int
    lr: float
    tau: float
    losses: dict
    wall_time: float

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "lr": self.lr,
            "tau": self.tau,
            **{f"loss_{k}": v for k, v in self.losses.items()},
            "wall_time": self.wall_time,
        }


def lr_at(cfg: TrainConfig, step: int, steps_per_epoch: int) -> float:
    """Linear warmup from zero, then cosine decay to zero at the last step.

    The peak follows the linear scaling rule: base_lr * effective_batch/256.
    """
    peak = cfg.base_lr * cfg.effective_batch / 256.0
    warmup = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warmup:
        return peak * step / warmup
    progress = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_optimizer(model: DualBranchModel, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW over the online branch; biases and norms skip weight decay."""
    decay, no_decay = [], []
    for p in model.parameters():
        if not p.requires_grad:
            continue
        (no_decay if p.ndim < 2 else decay).append(p)
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=0.0,
        betas=cfg.betas,
    )


class Pretrainer:
    """Owns the model, the optimizer, and the step counter for one run."""

    def __init__(
        self,
        backbone: BackboneConfig,
        cfg: TrainConfig,
        samples: list[FaceSample],
        dtype: torch.dtype = torch.float32,
    ):
        if not samples:
            raise ValidationError("pretraining needs at least one sample")
        self.backbone = backbone
        self.cfg = cfg
        self.samples = samples
        self.dtype = dtype
        self.steps_per_epoch = len(samples) // cfg.effective_batch
        if self.steps_per_epoch < 1:
            raise ValidationError(
                f"effective batch {cfg.effective_batch} exceeds the "
                f"{len(samples)}-sample dataset"
            )
        self.total_steps = cfg.epochs * self.steps_per_epoch
        self.ema = EmaSchedule(total_steps=self.total_steps, tau_base=cfg.tau_base)

        torch.manual_seed(cfg.seed)
        self.model = DualBranchModel(backbone).to(dtype)
        self.optimizer = build_optimizer(self.model, cfg)
        self.global_step = 0

        self.tables = [
            patchify_regions(s.parsing, backbone.patch_size) for s in samples
        ]
        self._images = [
            torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1))).to(dtype)
            for s in samples
        ]

    # ---- deterministic data order and masks --------------------------------

    def _epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([self.cfg.seed, epoch]))
        )
        return rng.permutation(len(self.samples))

    def _step_indices(self, step: int) -> np.ndarray:
        epoch = step // self.steps_per_epoch
        pos = (step % self.steps_per_epoch) * self.cfg.effective_batch
        return self._epoch_order(epoch)[pos : pos + self.cfg.effective_batch]

    def _sample_masks(self, indices: np.ndarray, epoch: int):
        masks, region_masks, target_masks = [], [], []
        need_other = self.cfg.target_view == "visible_other_mask"
        for i in indices:
            sample = self.samples[i]
            pair = sample_mask(
                self.tables[i],
                MaskConfig(
                    strategy=self.cfg.mask_strategy,
                    ratio=self.cfg.mask_ratio,
                    seed=derive_mask_seed(self.cfg.seed, sample.sample_id, epoch),
                ),
            )
            masks.append(pair.mask)
            region_masks.append(pair.region_mask)
            if need_other:
                other = sample_mask(
                    self.tables[i],
                    MaskConfig(
                        strategy=self.cfg.mask_strategy,
                        ratio=self.cfg.mask_ratio,
                        seed=derive_mask_seed(
                            self.cfg.seed, sample.sample_id + "#target", epoch
                        ),
                    ),
                )
                target_masks.append(other.mask)
        to_t = lambda rows: torch.from_numpy(np.stack(rows))
        return (
            to_t(masks),
            to_t(region_masks),
            to_t(target_masks) if need_other else None,
        )

    # ---- one effective step -------------------------------------------------

    def train_step(self) -> StepRecord:
        t0 = time.perf_counter()
        step = self.global_step
        if step >= self.total_steps:
            raise ValidationError(f"run already finished ({self.total_steps} steps)")
        lr = lr_at(self.cfg, step, self.steps_per_epoch)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        epoch = step // self.steps_per_epoch
        indices = self._step_indices(step)

        self.optimizer.zero_grad(set_to_none=True)
        sums: dict[str, float] = {}
        bs = self.cfg.batch_size
        for micro in range(self.cfg.accum_iters):
            part = indices[micro * bs : (micro + 1) * bs]
            images = torch.stack([self._images[i] for i in part])
            mask, region_mask, target_mask = self._sample_masks(part, epoch)
            outputs = self.model.forward_pretrain(
                images, mask, view=self.cfg.target_view, target_mask=target_mask
            )
            bundle = pretrain_loss(
                outputs,
                images,
                mask,
                region_mask,
                self.backbone.patch_size,
                self.cfg.loss_weights(),
                normalize_targets=self.cfg.normalize_targets,
                align_variant=self.cfg.align_variant,
            )
            (bundle.total / self.cfg.accum_iters).backward()
            for k, v in bundle.as_floats().items():
                sums[k] = sums.get(k, 0.0) + v

        losses = {k: v / self.cfg.accum_iters for k, v in sums.items()}
        if not all(math.isfinite(v) for v in losses.values()):
            raise TrainingDiverged(
                f"non-finite loss at step {step}",
                record={"step": step, "lr": lr, "losses": losses},
            )
        self.optimizer.step()
        tau = self.ema.tau(step)
        ema_update(self.model, tau)
        self.global_step = step + 1
        return StepRecord(
            step=step, lr=lr, tau=tau, losses=losses,
            wall_time=time.perf_counter() - t0,
        )

    def train(self, n_steps: int | None = None, on_step=None) -> list[StepRecord]:
        records = []
        end = self.total_steps if n_steps is None else self.global_step + n_steps
        while self.global_step < min(end, self.total_steps):
            record = self.train_step()
            records.append(record)
            if on_step is not None:
                on_step(record)
        return records

    # ---- checkpointing --------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        save_checkpoint(
            path, self.model, self.optimizer, self.global_step,
            self.backbone, self.cfg,
        )

    @classmethod
    def from_checkpoint(
        cls, path, samples: list[FaceSample], dtype: torch.dtype = torch.float32
    ) -> "Pretrainer":
        payload = load_checkpoint(path)
        trainer = cls(
            BackboneConfig.from_dict(payload["backbone"]),
            TrainConfig.from_dict(payload["train_config"]),
            samples,
            dtype=dtype,
        )
        trainer.model.load_state_dict(payload["model"])
        trainer.optimizer.load_state_dict(payload["optimizer"])
        trainer.global_step = payload["step"]
        torch.set_rng_state(payload["torch_rng"])
        return trainer


CHECKPOINT_FORMAT = "facemim-checkpoint"


def save_checkpoint(path, model, optimizer, step, backbone, train_cfg) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "backbone": backbone.to_dict(),
        "train_config": train_cfg.to_dict(),
        "step": step,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ValidationError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"not a recognized checkpoint: {path}")
    return payload
