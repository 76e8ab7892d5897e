from typing import Optional, Sequence

import torch
import torch.nn as nn

from app.models.nn_core import Linear, MLPBlock, TemporalConvBlock
from app.utils.errors import MalformedSceneError
from app.utils.validators import check_trailing_dim

ACTOR_FEATURES = 3  # (dx, dy, valid)
MAP_FEATURES = 4  # (x, y, dir_x, dir_y)
REL_POSE_FEATURES = 5


class ActorEncoder(nn.Module):
    """Temporal conv tokenizer for normalized agent histories.

    Three conv blocks (32 -> 64 -> 128 channels, stride 1/2/2), average pooling
    over the remaining steps, then a linear layer to the embedding size.
    """

    def __init__(self, embed_dim: int, channels: Sequence[int] = (32, 64, 128), strides: Sequence[int] = (1, 2, 2)):
        super().__init__()
        widths = [ACTOR_FEATURES, *channels]
        self.blocks = nn.ModuleList(
            TemporalConvBlock(c_in, c_out, stride) for c_in, c_out, stride in zip(widths[:-1], widths[1:], strides)
        )
        self.out = Linear(widths[-1], embed_dim)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """[N_a, H, 3] -> [N_a, D]; a single [H, 3] history gives [D]"""
        check_trailing_dim(features, ACTOR_FEATURES, "actor features")
        single = features.dim() == 2
        x = features.unsqueeze(0) if single else features
        for block in self.blocks:
            x = block(x)
        token = self.out(x.mean(dim=1))
        return token.squeeze(0) if single else token


class MapEncoder(nn.Module):
    """Point-set tokenizer for normalized polylines: shared point MLP, max-pool, MLP"""

    def __init__(self, embed_dim: int, hidden: Sequence[int] = (64, 128)):
        super().__init__()
        widths = [MAP_FEATURES, *hidden]
        self.point_mlp = nn.Sequential(*(MLPBlock(a, b) for a, b in zip(widths[:-1], widths[1:])))
        self.head = MLPBlock(widths[-1], embed_dim)

    def forward(self, features: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """[N_m, P, 4] (+ point mask [N_m, P]) -> [N_m, D]; a single [P, 4] polyline gives [D]"""
        check_trailing_dim(features, MAP_FEATURES, "map features")
        single = features.dim() == 2
        x = features.unsqueeze(0) if single else features
        if mask is None:
            mask = torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
        elif single:
            mask = mask.unsqueeze(0)
        if x.shape[0] > 0 and int(mask.sum(dim=1).min()) < 2:
            raise MalformedSceneError("polyline features need at least 2 points")

        points = self.point_mlp(x)
        points = points.masked_fill(~mask[..., None], float("-inf"))
        token = self.head(points.max(dim=1).values)
        return token.squeeze(0) if single else token


class RelPoseEncoder(nn.Module):
    """Pointwise MLP from the 5-D relative pose to the relative positional embedding"""

    def __init__(self, embed_dim: int):
        super().__init__()
        self.mlp = nn.Sequential(MLPBlock(REL_POSE_FEATURES, embed_dim), Linear(embed_dim, embed_dim))

    def forward(self, rel: torch.Tensor) -> torch.Tensor:
        """[N, N, 5] -> [N, N, D]"""
        check_trailing_dim(rel, REL_POSE_FEATURES, "relative pose")
        return self.mlp(rel)
