"""Dual-branch pretraining model.

The gradient-trained online branch holds the encoder, the pixel decoder
(reconstruction head), a shallow representation decoder, a projector, and
a predictor. The target branch mirrors the encoder / representation
decoder / projector subtree exactly, is initialized as a copy, and is only
ever moved by the exponential-moving-average update, never by gradients.

Three target-view wirings are supported for the alignment path:
  full               target encodes all patches (default)
  visible_other_mask target encodes the visible patches of an independent mask
  masked_same_mask   target encodes the masked patches; the online side
                     predicts their representations with cross-attention
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import ValidationError
from .vit import Block, init_transformer_weights, sincos_pos_embed_2d

TARGET_VIEWS = ("full", "visible_other_mask", "masked_same_mask")


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 64
    patch_size: int = 8
    in_channels: int = 3
    encoder_depth: int = 4
    encoder_dim: int = 192
    encoder_heads: int = 3
    decoder_depth: int = 2
    decoder_dim: int = 96
    decoder_heads: int = 3
    rep_decoder_depth: int = 2
    projector_hidden: int = 384
    projector_dim: int = 128
    predictor_hidden: int = 384
    use_class_token: bool = True

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValidationError(
                f"image size {self.image_size} not divisible by patch "
                f"{self.patch_size}"
            )
        if self.rep_decoder_depth < 0:
            raise ValidationError("rep decoder depth must be >= 0")
        dims = (
            self.encoder_dim, self.decoder_dim, self.projector_hidden,
            self.projector_dim, self.predictor_hidden, self.encoder_depth,
            self.decoder_depth, self.encoder_heads, self.decoder_heads,
        )
        if any(d <= 0 for d in dims):
            raise ValidationError("model dimensions and depths must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels

    @classmethod
    def vit_base(cls) -> "BackboneConfig":
        return cls(
            image_size=224, patch_size=16, encoder_depth=12, encoder_dim=768,
            encoder_heads=12, decoder_depth=8, decoder_dim=512,
            decoder_heads=16, rep_decoder_depth=2, projector_hidden=4096,
            projector_dim=256, predictor_hidden=4096,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, N, p*p*C), patches in row-major grid order."""
    b, c, h, w = images.shape
    p = patch_size
    gh, gw = h // p, w // p
    x = images.reshape(b, c, gh, p, gw, p)
    x = torch.einsum("bchpwq->bhwpqc", x)
    return x.reshape(b, gh * gw, p * p * c)


def unpatchify(patches: torch.Tensor, patch_size: int, channels: int) -> torch.Tensor:
    """Inverse of patchify for square grids."""
    b, n, _ = patches.shape
    p = patch_size
    g = int(math.isqrt(n))
    x = patches.reshape(b, g, g, p, p, channels)
    x = torch.einsum("bhwpqc->bchpwq", x)
    return x.reshape(b, channels, g * p, g * p)


def visible_indices(mask: torch.Tensor) -> torch.Tensor:
    """(B, N) bool mask -> (B, N_visible) ascending indices of unmasked
    patches; every row must have the same popcount."""
    b, n = mask.shape
    counts = (~mask).sum(dim=1)
    if not bool((counts == counts[0]).all()):
        raise ValidationError("masks in a batch must hide the same patch count")
    return (~mask).nonzero(as_tuple=True)[1].reshape(b, -1)


def masked_indices(mask: torch.Tensor) -> torch.Tensor:
    return visible_indices(~mask)


def _gather_tokens(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    return torch.gather(x, 1, idx.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


class VitEncoder(nn.Module):
    """Patch embedding + transformer stack over an arbitrary patch subset."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Linear(cfg.patch_dim, cfg.encoder_dim)
        self.use_cls = cfg.use_class_token
        if self.use_cls:
            self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.encoder_dim))
        self.register_buffer(
            "pos_embed",
            sincos_pos_embed_2d(cfg.encoder_dim, cfg.grid, cfg.grid, cls_token=True),
        )
        self.blocks = nn.ModuleList(
            Block(cfg.encoder_dim, cfg.encoder_heads) for _ in range(cfg.encoder_depth)
        )
        self.norm = nn.LayerNorm(cfg.encoder_dim)

    def forward(self, images, keep_idx=None, return_attention=False):
        """Encode the patches selected by keep_idx (all patches when None).

        Returns (B, [1+]K, D) tokens, class token first when enabled; with
        return_attention also a per-block list of (B, heads, T, T) weights.
        """
        x = patchify(images, self.cfg.patch_size)
        x = self.patch_embed(x) + self.pos_embed[:, 1:].to(x.dtype)
        if keep_idx is not None:
            x = _gather_tokens(x, keep_idx)
        if self.use_cls:
            cls = (self.cls_token + self.pos_embed[:, :1].to(x.dtype)).expand(
                x.shape[0], -1, -1
            )
            x = torch.cat([cls, x], dim=1)
        weights = []
        for blk in self.blocks:
            if return_attention:
                x, w = blk(x, return_weights=True)
                weights.append(w)
            else:
                x = blk(x)
        x = self.norm(x)
        if return_attention:
            return x, weights
        return x


class PixelDecoder(nn.Module):
    """Restores per-patch pixels from visible tokens plus mask tokens."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.encoder_dim, cfg.decoder_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.decoder_dim))
        self.register_buffer(
            "pos_embed",
            sincos_pos_embed_2d(cfg.decoder_dim, cfg.grid, cfg.grid, cls_token=True),
        )
        self.blocks = nn.ModuleList(
            Block(cfg.decoder_dim, cfg.decoder_heads) for _ in range(cfg.decoder_depth)
        )
        self.norm = nn.LayerNorm(cfg.decoder_dim)
        self.pred = nn.Linear(cfg.decoder_dim, cfg.patch_dim)

    def forward(self, tokens, mask):
        """tokens: encoder output over visible patches; mask: (B, N) bool.

        Returns (B, N, patch_dim) predictions for every patch position.
        """
        x = self.embed(tokens)
        has_cls = self.cfg.use_class_token
        cls, vis = (x[:, :1], x[:, 1:]) if has_cls else (None, x)
        b, n = mask.shape
        if vis.shape[1] != int((~mask[0]).sum()):
            raise ValidationError(
                f"token count {vis.shape[1]} does not match mask with "
                f"{int((~mask[0]).sum())} visible patches"
            )
        idx = visible_indices(mask)
        placed = torch.zeros(
            b, n, vis.shape[-1], dtype=vis.dtype, device=vis.device
        ).scatter(1, idx.unsqueeze(-1).expand(-1, -1, vis.shape[-1]), vis)
        full = torch.where(
            mask.unsqueeze(-1),
            self.mask_token.to(vis.dtype).expand(b, n, -1),
            placed,
        )
        full = full + self.pos_embed[:, 1:].to(vis.dtype)
        if has_cls:
            x = torch.cat([cls + self.pos_embed[:, :1].to(vis.dtype), full], dim=1)
        else:
            x = full
        for blk in self.blocks:
            x = blk(x)
        x = self.pred(self.norm(x))
        return x[:, 1:] if has_cls else x


class RepDecoder(nn.Module):
    """Shallow transformer mapping encoder tokens into the shared
    representation space; the identity when depth is zero."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.depth = cfg.rep_decoder_depth
        self.register_buffer(
            "pos_embed",
            sincos_pos_embed_2d(cfg.encoder_dim, cfg.grid, cfg.grid, cls_token=True),
        )
        if self.depth:
            self.blocks = nn.ModuleList(
                Block(cfg.encoder_dim, cfg.encoder_heads) for _ in range(self.depth)
            )
            self.norm = nn.LayerNorm(cfg.encoder_dim)
            self.pred = nn.Linear(cfg.encoder_dim, cfg.encoder_dim)

    def add_pos(self, tokens, positions=None, has_cls=True):
        """Add positional rows; positions (B, K) selects a patch subset."""
        pos = self.pos_embed.to(tokens.dtype)
        if positions is None:
            table = pos[:, 1:].expand(tokens.shape[0], -1, -1)
        else:
            table = _gather_tokens(
                pos[:, 1:].expand(tokens.shape[0], -1, -1), positions
            )
        if has_cls:
            table = torch.cat([pos[:, :1].expand(tokens.shape[0], -1, -1), table], 1)
        return tokens + table

    def forward(self, tokens, context=None):
        if not self.depth:
            return tokens
        x = tokens
        for blk in self.blocks:
            x = blk(x, context=context)
        return self.pred(self.norm(x))


class ProjectionMlp(nn.Module):
    """BYOL-style 2-layer head with layer instead of batch normalization."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.LayerNorm(hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, out_dim),
        )

    def forward(self, x):
        return self.net(x)


@dataclass(frozen=True)
class EmaSchedule:
    """Momentum schedule: starts at tau_base and cosine-anneals to 1."""

    total_steps: int
    tau_base: float = 0.996

    def tau(self, step: int) -> float:
        k = min(max(step, 0), self.total_steps)
        return 1.0 - (1.0 - self.tau_base) * (
            math.cos(math.pi * k / self.total_steps) + 1.0
        ) / 2.0


class DualBranchModel(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.online_encoder = VitEncoder(cfg)
        self.pixel_decoder = PixelDecoder(cfg)
        self.online_rep_decoder = RepDecoder(cfg)
        self.online_projector = ProjectionMlp(
            cfg.encoder_dim, cfg.projector_hidden, cfg.projector_dim
        )
        self.predictor = ProjectionMlp(
            cfg.projector_dim, cfg.predictor_hidden, cfg.projector_dim
        )
        # mask token for the representation path (encoder width); the pixel
        # decoder keeps its own at decoder width
        self.rep_mask_token = nn.Parameter(torch.zeros(1, 1, cfg.encoder_dim))

        self.apply(init_transformer_weights)
        if cfg.use_class_token:
            nn.init.normal_(self.online_encoder.cls_token, std=0.02)
        nn.init.normal_(self.pixel_decoder.mask_token, std=0.02)
        nn.init.normal_(self.rep_mask_token, std=0.02)

        # target branch: exact copy of the mirrored subtree, EMA-only
        self.target_encoder = copy.deepcopy(self.online_encoder)
        self.target_rep_decoder = copy.deepcopy(self.online_rep_decoder)
        self.target_projector = copy.deepcopy(self.online_projector)
        for module in self.target_modules():
            module.requires_grad_(False)

    # ---- branch plumbing -------------------------------------------------

    def online_mirrored_modules(self) -> list[nn.Module]:
        return [self.online_encoder, self.online_rep_decoder, self.online_projector]

    def target_modules(self) -> list[nn.Module]:
        return [self.target_encoder, self.target_rep_decoder, self.target_projector]

    def ema_pairs(self):
        """(online, target) parameter pairs, in matching order."""
        for src, dst in zip(self.online_mirrored_modules(), self.target_modules()):
            yield from zip(src.parameters(), dst.parameters())

    def _encoder(self, branch: str) -> VitEncoder:
        return {"online": self.online_encoder, "target": self.target_encoder}[branch]

    def _rep_decoder(self, branch: str) -> RepDecoder:
        return {"online": self.online_rep_decoder, "target": self.target_rep_decoder}[
            branch
        ]

    def _pool(self, tokens: torch.Tensor) -> torch.Tensor:
        """Mean over non-class tokens."""
        if self.cfg.use_class_token:
            tokens = tokens[:, 1:]
        return tokens.mean(dim=1)

    # ---- spec-level operations --------------------------------------------

    def encode_visible(self, images, mask):
        """Online-encode only the visible patches of the mask."""
        if mask.shape[1] != self.cfg.n_patches:
            raise ValidationError(
                f"mask length {mask.shape[1]} != patch count {self.cfg.n_patches}"
            )
        return self.online_encoder(images, keep_idx=visible_indices(mask))

    def decode_pixels(self, tokens, mask):
        """Predict per-patch pixels from visible-token latents."""
        return self.pixel_decoder(tokens, mask)

    def encode_full(self, images, branch: str = "online", return_attention=False):
        """Encode all patches; the target branch records no gradients."""
        encoder = self._encoder(branch)
        if branch == "target":
            with torch.no_grad():
                return encoder(images, return_attention=return_attention)
        return encoder(images, return_attention=return_attention)

    def rep_decode(self, tokens, branch: str = "online", positions=None):
        """Run the branch's representation decoder over encoder tokens and
        mean-pool non-class outputs to one vector per image."""
        dec = self._rep_decoder(branch)
        if not dec.depth:
            return self._pool(tokens)
        x = dec.add_pos(tokens, positions=positions, has_cls=self.cfg.use_class_token)
        return self._pool(dec(x))

    def project_predict(self, pooled, branch: str = "online"):
        """Online: projector then predictor; target: projector only."""
        if branch == "online":
            return self.predictor(self.online_projector(pooled))
        with torch.no_grad():
            return self.target_projector(pooled)

    # ---- alignment-path wiring per target view -----------------------------

    def _online_representation(self, tokens, mask, view: str):
        has_cls = self.cfg.use_class_token
        dec = self.online_rep_decoder
        b = tokens.shape[0]
        if view == "visible_other_mask":
            return self.rep_decode(tokens, "online", positions=visible_indices(mask))
        if view == "masked_same_mask":
            midx = masked_indices(mask)
            queries = self.rep_mask_token.expand(b, midx.shape[1], -1)
            queries = dec.add_pos(queries, positions=midx, has_cls=False)
            if not dec.depth:
                return queries.mean(dim=1)
            keys = dec.add_pos(
                tokens[:, 1:] if has_cls else tokens,
                positions=visible_indices(mask),
                has_cls=False,
            )
            if has_cls:
                keys = torch.cat([tokens[:, :1], keys], dim=1)
            context = torch.cat([keys, queries], dim=1)
            out = dec(queries, context=context)
            return out.mean(dim=1)
        # full: visible tokens plus mask tokens at the hidden positions
        if not dec.depth:
            return self._pool(tokens)
        vis = tokens[:, 1:] if has_cls else tokens
        idx = visible_indices(mask)
        n, d = self.cfg.n_patches, vis.shape[-1]
        placed = torch.zeros(b, n, d, dtype=vis.dtype, device=vis.device).scatter(
            1, idx.unsqueeze(-1).expand(-1, -1, d), vis
        )
        full = torch.where(
            mask.unsqueeze(-1), self.rep_mask_token.to(vis.dtype).expand(b, n, d), placed
        )
        if has_cls:
            full = torch.cat([tokens[:, :1], full], dim=1)
        x = dec.add_pos(full, has_cls=has_cls)
        return self._pool(dec(x))

    @torch.no_grad()
    def _target_representation(self, images, mask, view: str, target_mask=None):
        if view == "full":
            tokens = self.target_encoder(images)
            return self.rep_decode(tokens, "target")
        if view == "visible_other_mask":
            if target_mask is None:
                raise ValidationError(
                    "visible_other_mask target view needs an independent mask"
                )
            idx = visible_indices(target_mask)
        else:  # masked_same_mask: the target view is the masked patches
            idx = masked_indices(mask)
        tokens = self.target_encoder(images, keep_idx=idx)
        return self.rep_decode(tokens, "target", positions=idx)

    def forward_pretrain(self, images, mask, view: str = "full", target_mask=None):
        """One full pretext forward pass.

        Returns dict with per-patch pixel predictions and the two head
        vectors (the target one detached by construction).
        """
        if view not in TARGET_VIEWS:
            raise ValidationError(f"unknown target view: {view}")
        tokens = self.encode_visible(images, mask)
        pred = self.decode_pixels(tokens, mask)
        r_online = self._online_representation(tokens, mask, view)
        v_online = self.project_predict(r_online, "online")
        r_target = self._target_representation(images, mask, view, target_mask)
        v_target = self.project_predict(r_target, "target")
        return {"pred": pred, "v_online": v_online, "v_target": v_target}


def ema_update(model: DualBranchModel, tau: float) -> None:
    """Blend target parameters toward the online branch: t <- tau*t + (1-tau)*o."""
    with torch.no_grad():
        for online, target in model.ema_pairs():
            if online.shape != target.shape:
                raise ValidationError("online/target parameter trees diverged")
            target.mul_(tau).add_(online, alpha=1.0 - tau)
