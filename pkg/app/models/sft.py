"""Symmetric fusion Transformer.

The scene is a complete digraph with self-loops. Each layer builds the context
array C[j, i] = phi(f_i ++ f_j ++ r'_{i->j}); token j then cross-attends over row
C[j], followed by a point-wise feed-forward layer (both post-norm residual), and
the relative positional embedding is refreshed as r' <- r' + psi(C).
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from app.models.nn_core import LAYER_NORM_EPS, MLP, MLPBlock, MultiHeadAttention
from app.utils.errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class SftConfig:
    layers: int = 4
    heads: int = 8
    embed_dim: int = 128
    ff_dim: Optional[int] = None
    rpe_update: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigurationError("SFT needs at least one layer")
        if self.heads < 1 or self.embed_dim % self.heads != 0:
            raise ConfigurationError(f"embed_dim={self.embed_dim} is not divisible by heads={self.heads}")

    @property
    def feedforward_dim(self) -> int:
        return self.ff_dim or 2 * self.embed_dim


class SftLayer(nn.Module):
    def __init__(self, embed_dim: int, heads: int, ff_dim: int, update_rpe: bool = True):
        super().__init__()
        self.embed_dim = embed_dim
        self.context_mlp = MLPBlock(3 * embed_dim, embed_dim)
        self.attention = MultiHeadAttention(embed_dim, heads)
        self.attention_norm = nn.LayerNorm(embed_dim, eps=LAYER_NORM_EPS)
        self.feedforward = MLP([embed_dim, ff_dim, embed_dim])
        self.feedforward_norm = nn.LayerNorm(embed_dim, eps=LAYER_NORM_EPS)
        # psi is only built where its output is consumed by a later layer
        self.rpe_mlp = MLPBlock(embed_dim, embed_dim) if update_rpe else None

    def build_context(self, tokens: torch.Tensor, rpe: torch.Tensor) -> torch.Tensor:
        """Context array [N, N, D]; row j holds c_{i->j} for every source i"""
        n, d = tokens.shape
        if rpe.shape != (n, n, d):
            raise ShapeError(f"rpe shape {tuple(rpe.shape)} does not match tokens {tuple(tokens.shape)}")
        source = tokens.unsqueeze(0).expand(n, n, d)
        target = tokens.unsqueeze(1).expand(n, n, d)
        return self.context_mlp(torch.cat([source, target, rpe], dim=-1))

    def forward(self, tokens: torch.Tensor, rpe: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        context = self.build_context(tokens, rpe)
        x = self.attention_norm(tokens + self.attention(tokens, context, context))
        x = self.feedforward_norm(x + self.feedforward(x))
        if self.rpe_mlp is not None:
            rpe = rpe + self.rpe_mlp(context)
        return x, rpe


class SymmetricFusionTransformer(nn.Module):
    """L stacked SFT layers; the final layer skips the unused RPE update"""

    def __init__(self, config: SftConfig):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList(
            SftLayer(
                config.embed_dim,
                config.heads,
                config.feedforward_dim,
                update_rpe=config.rpe_update and i < config.layers - 1,
            )
            for i in range(config.layers)
        )

    def forward(self, tokens: torch.Tensor, rpe: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            tokens, rpe = layer(tokens, rpe)
        return tokens
