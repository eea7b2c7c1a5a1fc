"""Vision encoder, text encoder, bidirectional fusion encoder and heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from xvl.utils.config import ModelConfig
from xvl.utils.errors import DataError

NORM_EPS = 1e-12


def l2_normalize(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Unit-normalize along the last axis; zero vectors map to zero."""
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention that also returns its probabilities."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        context: torch.Tensor,
        key_mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (output (B, Lq, d), probabilities (B, heads, Lq, Lk)).

        key_mask is boolean (B, Lk); False keys receive zero attention.
        """
        if query.shape[-1] != context.shape[-1]:
            raise ValueError(
                f"Embedding dimension mismatch: query {query.shape[-1]} vs key {context.shape[-1]}"
            )
        q = self._split(self.query(query))
        k = self._split(self.key(context))
        v = self._split(self.value(context))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = scores.softmax(dim=-1)
        out = self.dropout(probs) @ v
        b, _, n, _ = out.shape
        out = out.transpose(1, 2).reshape(b, n, self.heads * self.head_dim)
        return self.out(out), probs


def _mlp(dim: int, ratio: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(dim, dim * ratio),
        nn.GELU(),
        nn.Linear(dim * ratio, dim),
        nn.Dropout(dropout),
    )


class EncoderLayer(nn.Module):
    """Pre-norm transformer layer."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(config.dim)
        self.attn = Attention(config.dim, config.heads, config.dropout)
        self.norm2 = nn.LayerNorm(config.dim)
        self.mlp = _mlp(config.dim, config.mlp_ratio, config.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)[0]
        return x + self.mlp(self.norm2(x))


class FusionLayer(nn.Module):
    """Self-attention over the query modality, cross-attention into the other one."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(config.dim)
        self.self_attn = Attention(config.dim, config.heads, config.dropout)
        self.norm2 = nn.LayerNorm(config.dim)
        self.cross_attn = Attention(config.dim, config.heads, config.dropout)
        self.norm3 = nn.LayerNorm(config.dim)
        self.mlp = _mlp(config.dim, config.mlp_ratio, config.dropout)

    def forward(
        self,
        x: torch.Tensor,
        other: torch.Tensor,
        mask: torch.Tensor | None,
        other_mask: torch.Tensor | None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, mask)[0]
        cross, probs = self.cross_attn(self.norm2(x), other, other_mask)
        x = x + cross
        return x + self.mlp(self.norm3(x)), probs


class VisionEncoder(nn.Module):
    """Linear patch projection plus [CLS] and positions, then a transformer stack."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.image_size % config.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        self.config = config
        self.patch_embed = nn.Linear(config.patch_size**2, config.dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, config.dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches + 1, config.dim))
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.vision_layers))
        self.norm = nn.LayerNorm(config.dim, eps=1e-6)

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W) or (B, 1, H, W) -> (B, N, patch*patch), row-major patches."""
        if images.dim() == 4:
            if images.shape[1] != 1:
                raise DataError(f"Expected one channel, got {images.shape[1]}")
            images = images[:, 0]
        if images.dim() != 3:
            raise DataError(f"Expected a batch of 2-D images, got shape {tuple(images.shape)}")
        size, p = self.config.image_size, self.config.patch_size
        if images.shape[1:] != (size, size):
            raise DataError(
                f"Image dims {tuple(images.shape[1:])} do not match the configured "
                f"{size}x{size} (patch {p})"
            )
        b, g = images.shape[0], size // p
        patches = images.reshape(b, g, p, g, p).permute(0, 1, 3, 2, 4)
        return patches.reshape(b, g * g, p * p)

    def embed_patches(self, images: torch.Tensor) -> torch.Tensor:
        """Pre-transformer token sequence {p_cls, p_1..p_N} over standardized pixels."""
        pixels = (self.patchify(images) - self.config.pixel_mean) / self.config.pixel_std
        tokens = self.patch_embed(pixels)
        tokens = torch.cat([self.cls_token.expand(tokens.shape[0], -1, -1), tokens], dim=1)
        if self.config.positional:
            tokens = tokens + self.pos_embed
        return tokens

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.embed_patches(images)
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


class TextEncoder(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.token_embed = nn.Embedding(vocab_size, config.dim, padding_idx=0)
        self.pos_embed = nn.Embedding(config.max_len, config.dim)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.text_layers))
        self.norm = nn.LayerNorm(config.dim, eps=1e-6)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.config.max_len:
            raise DataError(f"Sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        x = self.token_embed(ids)
        if self.config.positional:
            x = x + self.pos_embed(torch.arange(ids.shape[1], device=ids.device))
        for layer in self.layers:
            x = layer(x, mask)
        return self.norm(x)


@dataclass
class FusionOutput:
    """Fused sequences of both paths and their cross-attention maps.

    Maps are (layers, B, heads, Lq, Lk): t2i has text queries over image keys,
    i2t has image queries over text keys.
    """

    text: torch.Tensor
    image: torch.Tensor
    t2i_maps: torch.Tensor
    i2t_maps: torch.Tensor
    t2i_layers: list[torch.Tensor]
    i2t_layers: list[torch.Tensor]

    @property
    def v_cls_t2i(self) -> torch.Tensor:
        return self.text[:, 0]

    @property
    def v_cls_i2t(self) -> torch.Tensor:
        return self.image[:, 0]


class Projector(nn.Module):
    """Linear projection followed by L2 normalization."""

    def __init__(self, dim: int, embed_dim: int, eps: float = NORM_EPS):
        super().__init__()
        self.linear = nn.Linear(dim, embed_dim)
        self.eps = eps

    def forward(self, x: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
        return l2_normalize(self.linear(x) * scale, self.eps)


class XVLModel(nn.Module):
    """Three encoders, two projectors, the ITM head, the MLM head and a temperature."""

    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.vision = VisionEncoder(config)
        self.text = TextEncoder(config, vocab_size)
        # Separate weights per path
        self.fusion_t2i = nn.ModuleList(FusionLayer(config) for _ in range(config.fusion_layers))
        self.fusion_i2t = nn.ModuleList(FusionLayer(config) for _ in range(config.fusion_layers))
        self.norm_t2i = nn.LayerNorm(config.dim, eps=1e-6)
        self.norm_i2t = nn.LayerNorm(config.dim, eps=1e-6)
        self.image_proj = Projector(config.dim, config.embed_dim, config.norm_eps)
        self.text_proj = Projector(config.dim, config.embed_dim, config.norm_eps)
        self.itm = nn.Linear(2 * config.dim, 2)
        self.mlm = nn.Sequential(
            nn.Linear(config.dim, config.dim),
            nn.GELU(),
            nn.LayerNorm(config.dim, eps=1e-6),
            nn.Linear(config.dim, vocab_size),
        )
        self.log_temp = nn.Parameter(torch.tensor(math.log(config.temp_init)))
        self.apply(_init_weights)
        # Unit-variance [CLS] and positions, like the token embeddings
        nn.init.normal_(self.vision.cls_token)
        nn.init.normal_(self.vision.pos_embed)

    @property
    def temperature(self) -> torch.Tensor:
        return self.log_temp.exp().clamp(self.config.temp_min, self.config.temp_max)

    def encode_image(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W) images -> (B, N + 1, d) patch embeddings, index 0 is p_cls."""
        return self.vision(images)

    def encode_text(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L) ids and mask -> (B, L, d) word embeddings, index 0 is w_cls."""
        return self.text(ids, mask)

    def fuse(
        self,
        patches: torch.Tensor,
        words: torch.Tensor,
        text_mask: torch.Tensor | None = None,
        image_mask: torch.Tensor | None = None,
    ) -> FusionOutput:
        """Text-attends-image and image-attends-text paths over uni-modal outputs."""
        if patches.shape[-1] != words.shape[-1]:
            raise ValueError(
                f"Embedding dimension mismatch: patches {patches.shape[-1]} "
                f"vs words {words.shape[-1]}"
            )
        if patches.shape[0] != words.shape[0]:
            raise ValueError("patches and words must have the same batch size")
        text, t2i_layers = words, []
        for layer in self.fusion_t2i:
            text, probs = layer(text, patches, text_mask, image_mask)
            t2i_layers.append(probs)
        image, i2t_layers = patches, []
        for layer in self.fusion_i2t:
            image, probs = layer(image, words, image_mask, text_mask)
            i2t_layers.append(probs)
        return FusionOutput(
            text=self.norm_t2i(text),
            image=self.norm_i2t(image),
            t2i_maps=torch.stack(t2i_layers),
            i2t_maps=torch.stack(i2t_layers),
            t2i_layers=t2i_layers,
            i2t_layers=i2t_layers,
        )

    def project(self, cls: torch.Tensor, which: str) -> torch.Tensor:
        """[CLS] vector(s) -> unit-norm joint-space feature."""
        if which == "image":
            return self.image_proj(cls)
        if which == "text":
            return self.text_proj(cls)
        raise ValueError(f"which must be 'image' or 'text', got {which!r}")

    def itm_head(self, v_cls_t2i: torch.Tensor, v_cls_i2t: torch.Tensor) -> torch.Tensor:
        """(B, 2) logits; index 1 is 'matched'."""
        return self.itm(torch.cat([v_cls_t2i, v_cls_i2t], dim=-1))

    def mlm_head(self, fused_words: torch.Tensor) -> torch.Tensor:
        """(B, L, d) -> (B, L, |V|) vocabulary logits."""
        return self.mlm(fused_words)

    def match_logits(
        self, images: torch.Tensor, ids: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        fused = self.fuse(self.encode_image(images), self.encode_text(ids, mask), mask)
        return self.itm_head(fused.v_cls_t2i, fused.v_cls_i2t)


def match_logit(itm_logits: torch.Tensor) -> torch.Tensor:
    """Scalar match logit l1 - l0 per row."""
    return itm_logits[..., 1] - itm_logits[..., 0]


def match_probability(itm_logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(itm_logits, dim=-1)[..., 1]


def _init_weights(module: nn.Module) -> None:
    """Xavier linear layers and unit-variance embeddings (training from scratch)."""
    if isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.normal_(module.weight)
        if module.padding_idx is not None:
            with torch.no_grad():
                module.weight[module.padding_idx].zero_()


def build_model(config: ModelConfig, vocab_size: int, seed: int = 0) -> XVLModel:
    """Construct a model with seeded initialization, leaving the global RNG untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return XVLModel(config, vocab_size)
