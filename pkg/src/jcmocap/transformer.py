"""Pre-normalization transformer encoder blocks with key masking.

All three encoders in the selector cascade share this implementation:
LayerNorm before both the multi-head self-attention and the feed-forward
sub-blocks, residual connections after each, GELU activations, and
additive -1e9 attention logits at masked key positions.  Masked
positions' outputs are forced to zero after every block, which makes the
stack exactly invariant to appended padding.

Forward passes are pure given the parameters; parameters are read-only
during inference and may be shared across concurrent evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


class ShapeMismatch(ValueError):
    """Token tensor incompatible with the encoder configuration."""


_MASK_LOGIT = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    depth: int
    width: int
    heads: int
    head_dim: int
    ffn_dim: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        for name in ("width", "heads", "head_dim", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def trunc_normal_(tensor: torch.Tensor, std: float,
                  generator: torch.Generator, bound: float = 2.0) -> None:
    """Fill with N(0, std^2) samples, resampling anything beyond +/-bound*std."""
    tensor.normal_(0.0, std, generator=generator)
    limit = bound * std
    while True:
        bad = tensor.abs() > limit
        n_bad = int(bad.sum())
        if n_bad == 0:
            return
        fresh = torch.empty(n_bad, dtype=tensor.dtype)
        fresh.normal_(0.0, std, generator=generator)
        tensor[bad] = fresh


class EncoderBlock(nn.Module):
    """One pre-LN attention + feed-forward block."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        inner = cfg.heads * cfg.head_dim
        kw = {"dtype": torch.float64}
        self.ln_attn = nn.LayerNorm(cfg.width, **kw)
        self.q = nn.Linear(cfg.width, inner, **kw)
        self.k = nn.Linear(cfg.width, inner, **kw)
        self.v = nn.Linear(cfg.width, inner, **kw)
        self.out = nn.Linear(inner, cfg.width, **kw)
        self.ln_ffn = nn.LayerNorm(cfg.width, **kw)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.width, cfg.ffn_dim, **kw),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.width, **kw),
        )
        self.drop = nn.Dropout(cfg.dropout) if cfg.dropout > 0 else nn.Identity()

    def _check(self, tokens: torch.Tensor, mask: torch.Tensor | None):
        if tokens.shape[-1] != self.cfg.width:
            raise ShapeMismatch(
                f"token width {tokens.shape[-1]} != encoder width {self.cfg.width}"
            )
        if mask is not None and mask.shape != tokens.shape[:-1]:
            raise ShapeMismatch(
                f"mask shape {tuple(mask.shape)} incompatible with tokens "
                f"{tuple(tokens.shape)}"
            )

    def attention(self, tokens: torch.Tensor, mask: torch.Tensor | None = None,
                  return_weights: bool = False):
        """Masked multi-head softmax attention on pre-normalized tokens."""
        self._check(tokens, mask)
        B = tokens.shape[:-2]
        S, W = tokens.shape[-2], tokens.shape[-1]
        cfg = self.cfg
        h = self.ln_attn(tokens)

        def split(t):
            return t.reshape(*B, S, cfg.heads, cfg.head_dim).transpose(-3, -2)

        q, k, v = split(self.q(h)), split(self.k(h)), split(self.v(h))
        logits = q @ k.transpose(-1, -2) / math.sqrt(cfg.head_dim)
        if mask is not None:
            key_mask = mask[..., None, None, :]
            logits = logits.masked_fill(~key_mask, _MASK_LOGIT)
        weights = torch.softmax(logits, dim=-1)
        ctx = (self.drop(weights) @ v).transpose(-3, -2).reshape(*B, S, -1)
        out = self.out(ctx)
        if return_weights:
            return out, weights
        return out

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None):
        x = tokens + self.attention(tokens, mask)
        x = x + self.drop(self.ffn(self.ln_ffn(x)))
        if mask is not None:
            x = x * mask.unsqueeze(-1)
        return x


class Encoder(nn.Module):
    """A stack of ``cfg.depth`` encoder blocks; depth 0 is the identity."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.depth))

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None):
        if tokens.shape[-1] != self.cfg.width:
            raise ShapeMismatch(
                f"token width {tokens.shape[-1]} != encoder width {self.cfg.width}"
            )
        for block in self.blocks:
            tokens = block(tokens, mask)
        return tokens


def init_encoder_weights(module: nn.Module, generator: torch.Generator,
                         std: float = 0.02) -> None:
    """Truncated-normal projections, zero biases, default LayerNorm."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            trunc_normal_(m.weight.data, std, generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.LayerNorm):
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
