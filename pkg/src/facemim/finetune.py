"""Downstream finetuning: pretrained encoder plus a binary head.

Only the online encoder is taken from a pretraining checkpoint; target
branch weights and the pretext decoders never participate downstream. The
classifier head sits on the mean of all non-class tokens and is trained
with standard cross-entropy, end to end unless the backbone is frozen.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import FaceSample
from .errors import ValidationError
from .metrics import compute_auc
from .model import BackboneConfig, VitEncoder

HEADS = ("linear", "mlp")


@dataclass(frozen=True)
class FinetuneConfig:
    head: str = "linear"
    epochs: int = 20
    base_lr: float = 1e-3
    batch_size: int = 8
    weight_decay: float = 0.05
    freeze_backbone: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValidationError(f"unknown head type: {self.head}")
        if self.epochs < 1:
            raise ValidationError("finetuning needs at least one epoch")


def extract_online_encoder_state(model_state: Mapping) -> dict:
    """Pull the online-encoder subtree out of a checkpoint state dict.

    Reads only online_encoder.* entries, so the target branch is never
    touched (asserted by tests via an access-tracing mapping).
    """
    prefix = "online_encoder."
    keys = [k for k in model_state.keys() if k.startswith(prefix)]
    if not keys:
        raise ValidationError("checkpoint has no online encoder weights")
    return {k[len(prefix):]: model_state[k] for k in keys}


class FinetuneClassifier(nn.Module):
    """Encoder backbone with a binary classifier over pooled tokens."""

    def __init__(self, backbone_cfg: BackboneConfig, head: str = "linear"):
        super().__init__()
        self.cfg = backbone_cfg
        self.encoder = VitEncoder(backbone_cfg)
        dim = backbone_cfg.encoder_dim
        if head == "linear":
            self.head = nn.Linear(dim, 2)
        else:
            self.head = nn.Sequential(
                nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, 2)
            )

    def forward(self, images):
        tokens = self.encoder(images)
        if self.cfg.use_class_token:
            tokens = tokens[:, 1:]
        return self.head(tokens.mean(dim=1))

    def scores(self, images) -> torch.Tensor:
        """Probability of class 1 per image."""
        with torch.no_grad():
            return F.softmax(self.forward(images), dim=-1)[:, 1]


@dataclass
class FinetuneHistory:
    epochs: list[dict] = field(default_factory=list)

    def last(self) -> dict:
        return self.epochs[-1]


def _stack_images(samples: list[FaceSample], cfg: BackboneConfig) -> torch.Tensor:
    for s in samples:
        if s.image.shape[:2] != (cfg.image_size, cfg.image_size):
            raise ValidationError(
                f"sample {s.sample_id} is {s.image.shape[1]}x{s.image.shape[0]} "
                f"but the checkpoint backbone expects {cfg.image_size}"
            )
    return torch.stack(
        [torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1))) for s in samples]
    )


def finetune(
    checkpoint_payload: dict,
    samples: list[FaceSample],
    cfg: FinetuneConfig,
    on_epoch=None,
) -> tuple[FinetuneClassifier, FinetuneHistory]:
    """Train a classifier initialized from a pretraining checkpoint."""
    if any(s.label is None for s in samples):
        raise ValidationError("finetuning needs a label on every sample")
    backbone_cfg = BackboneConfig.from_dict(checkpoint_payload["backbone"])
    torch.manual_seed(cfg.seed)
    model = FinetuneClassifier(backbone_cfg, head=cfg.head)
    model.encoder.load_state_dict(
        extract_online_encoder_state(checkpoint_payload["model"])
    )
    if cfg.freeze_backbone:
        model.encoder.requires_grad_(False)

    images = _stack_images(samples, backbone_cfg)
    labels = torch.tensor([s.label for s in samples], dtype=torch.long)
    optimizer = torch.optim.AdamW(
        [p for p in model.parameters() if p.requires_grad],
        lr=cfg.base_lr,
        weight_decay=cfg.weight_decay,
    )
    order_rng = np.random.Generator(np.random.Philox(cfg.seed))
    history = FinetuneHistory()
    n = len(samples)
    for epoch in range(cfg.epochs):
        model.train()
        order = order_rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = model(images[idx])
            loss = F.cross_entropy(logits, labels[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
        model.eval()
        scores = model.scores(images).numpy()
        preds = (scores >= 0.5).astype(int)
        record = {
            "epoch": epoch,
            "loss": epoch_loss / batches,
            "train_acc": float((preds == labels.numpy()).mean()),
            "train_auc": compute_auc(scores, labels.numpy()),
        }
        history.epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return model, history
