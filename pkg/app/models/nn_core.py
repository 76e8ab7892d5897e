"""Dense layers used throughout the network.

Built on torch: forward evaluation, reverse-mode gradients (autograd) and Adam
come from the library; this module fixes initialization, shapes and the exact
layer compositions the architecture uses.
"""
import math
import random
from collections import OrderedDict
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.utils.errors import ConfigurationError, ContractViolation, ShapeError

LAYER_NORM_EPS = 1e-5


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def resolve_dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


def init_uniform_(weight: torch.Tensor, bias: Optional[torch.Tensor], fan_in: int) -> None:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias"""
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound)
        if bias is not None:
            bias.zero_()


# Functional forms
def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """y = x W^T + b over the trailing axis"""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input extent {x.shape[-1]} != weight in-features {weight.shape[1]}")
    return F.linear(x, weight, bias)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = LAYER_NORM_EPS) -> torch.Tensor:
    return F.layer_norm(x, (x.shape[-1],), gain, bias, eps)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def temporal_conv(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor], stride: int = 1) -> torch.Tensor:
    """Cross-correlation along time with kernel 3 and zero padding 1.

    x is [H, C_in] or [B, H, C_in]; weight is [C_out, C_in, 3].
    """
    if stride not in (1, 2):
        raise ConfigurationError(f"temporal_conv: stride must be 1 or 2, got {stride}")
    batched = x.dim() == 3
    seq = x if batched else x.unsqueeze(0)
    if seq.shape[-1] != weight.shape[1]:
        raise ShapeError(f"temporal_conv: {seq.shape[-1]} input channels, kernel expects {weight.shape[1]}")
    out = F.conv1d(seq.transpose(1, 2), weight, bias, stride=stride, padding=1).transpose(1, 2)
    return out if batched else out.squeeze(0)


# Modules
class Linear(nn.Linear):
    def reset_parameters(self) -> None:
        init_uniform_(self.weight, self.bias, self.in_features)


class MLPBlock(nn.Module):
    """Linear layer, layer normalization and ReLU"""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = Linear(in_dim, out_dim)
        self.norm = nn.LayerNorm(out_dim, eps=LAYER_NORM_EPS)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.norm(self.linear(x)))


class MLP(nn.Module):
    """Plain ReLU perceptron; no activation after the last layer"""

    def __init__(self, dims: Sequence[int]):
        super().__init__()
        if len(dims) < 2:
            raise ConfigurationError("MLP needs at least input and output widths")
        self.layers = nn.ModuleList(Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class TemporalConvBlock(nn.Module):
    """Kernel-3 temporal convolution followed by layer normalization and ReLU"""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        if stride not in (1, 2):
            raise ConfigurationError(f"stride must be 1 or 2, got {stride}")
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, 3))
        self.bias = nn.Parameter(torch.empty(out_channels))
        self.norm = nn.LayerNorm(out_channels, eps=LAYER_NORM_EPS)
        init_uniform_(self.weight, self.bias, in_channels * 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, H, C_in] -> [B, H', C_out]
        return F.relu(self.norm(temporal_conv(x, self.weight, self.bias, self.stride)))


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention where each query row attends over its own key set.

    query [M, D], key/value [M, S, D] -> [M, D]
    """

    def __init__(self, embed_dim: int, heads: int):
        super().__init__()
        if heads < 1 or embed_dim % heads != 0:
            raise ConfigurationError(f"embed_dim={embed_dim} is not divisible by heads={heads}")
        self.embed_dim = embed_dim
        self.heads = heads
        self.head_dim = embed_dim // heads
        self.q_proj = Linear(embed_dim, embed_dim)
        # bias-free: a key bias cancels in the softmax
        self.k_proj = Linear(embed_dim, embed_dim, bias=False)
        self.v_proj = Linear(embed_dim, embed_dim)
        self.out_proj = Linear(embed_dim, embed_dim)

    def forward(self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor,
                key_mask: Optional[torch.Tensor] = None, need_weights: bool = False):
        m, s, d = key.shape
        if query.shape != (m, d) or value.shape != key.shape:
            raise ShapeError(f"attention shapes q={tuple(query.shape)} k={tuple(key.shape)} v={tuple(value.shape)}")
        h, dh = self.heads, self.head_dim

        q = self.q_proj(query).view(m, h, 1, dh)
        k = self.k_proj(key).view(m, s, h, dh).transpose(1, 2)
        v = self.v_proj(value).view(m, s, h, dh).transpose(1, 2)

        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(dh)  # [M, h, 1, S]
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = softmax(scores, dim=-1)
        out = self.out_proj(torch.matmul(weights, v).reshape(m, d))
        if need_weights:
            return out, weights.squeeze(2)
        return out


# Gradients and optimization
def gradient_store(module: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    """Accumulated gradients, zeros for parameters that received none"""
    return OrderedDict(
        (name, p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in module.named_parameters()
    )


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(param) into every parameter's .grad"""
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractViolation("backward expects a scalar tensor")
    if loss.grad_fn is None:
        raise ContractViolation("backward called without a recorded forward pass")
    loss.backward()


def build_optimizer(params: Iterable[nn.Parameter], lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def adam_step(optimizer: torch.optim.Adam, lr: Optional[float] = None) -> None:
    """One bias-corrected Adam update, optionally at a new learning rate"""
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.step()
