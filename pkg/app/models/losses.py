"""Winner-takes-all training objective.

    total = omega * (PosLoss + YawLoss) + (1 - omega) * ClsLoss

The winner k* of each agent is the mode whose endpoint is closest to the ground
truth; only that mode is regressed. Position and yaw terms are evaluated in the
agent's local frame.
"""
from dataclasses import dataclass
from typing import Dict

import torch
import torch.nn.functional as F

from app.models.decoder import yaw_from_velocity_tensor

SMOOTH_L1_BETA = 1.0


@dataclass
class LossBreakdown:
    total: torch.Tensor
    reg_pos: torch.Tensor
    reg_yaw: torch.Tensor
    cls: torch.Tensor
    winners: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "reg_pos": float(self.reg_pos.detach()),
            "reg_yaw": float(self.reg_yaw.detach()),
            "cls": float(self.cls.detach()),
        }

    @property
    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.total.detach()).all())


def select_winner(positions: torch.Tensor, future: torch.Tensor) -> torch.Tensor:
    """k* = argmin_k ||pos_k[T] - gt[T]||, ties to the smallest k.

    positions [A, K, T, 2], future [A, T, 2] -> [A]
    """
    with torch.no_grad():
        endpoint_error = torch.linalg.vector_norm(positions[:, :, -1] - future[:, None, -1], dim=-1)
        return torch.argmin(endpoint_error, dim=1)


def _gather_mode(values: torch.Tensor, winners: torch.Tensor) -> torch.Tensor:
    index = winners.view(-1, 1, *([1] * (values.dim() - 2))).expand(-1, 1, *values.shape[2:])
    return torch.gather(values, 1, index).squeeze(1)


def position_loss(predicted: torch.Tensor, future: torch.Tensor) -> torch.Tensor:
    """Smooth-L1 (transition 1 m) averaged over steps and both axes"""
    return F.smooth_l1_loss(predicted, future, reduction="mean", beta=SMOOTH_L1_BETA)


def yaw_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean of (1 - cos(angle between yaw vectors)) / 2, in [0, 1]"""
    cos = F.cosine_similarity(predicted, target, dim=-1, eps=1e-12)
    return ((1.0 - cos) / 2.0).mean()


def classification_loss(scores: torch.Tensor, winners: torch.Tensor, margin: float) -> torch.Tensor:
    """Max-margin hinge on post-softmax scores: mean over k != k* of max(0, s_k + m - s_k*)"""
    num_modes = scores.shape[-1]
    if num_modes == 1:
        return scores.sum() * 0.0
    winning = torch.gather(scores, 1, winners.view(-1, 1))
    hinge = F.relu(scores + margin - winning)
    others = torch.ones_like(scores, dtype=torch.bool).scatter(1, winners.view(-1, 1), False)
    per_agent = (hinge * others).sum(dim=1) / (num_modes - 1)
    return per_agent.mean()


def ground_truth_yaws(future: torch.Tensor, dt: float) -> torch.Tensor:
    """Yaws of local-frame futures [A, T, 2] from step differences starting at the origin.

    The origin is the observed position; low-speed steps carry the previous yaw.
    """
    padded = torch.cat([torch.zeros_like(future[:, :1]), future], dim=1)
    return yaw_from_velocity_tensor(torch.diff(padded, dim=1) / dt)


def total_loss(out: Dict[str, torch.Tensor], future: torch.Tensor, dt: float, omega: float = 0.8,
               margin: float = 0.2, use_yaw_loss: bool = True) -> LossBreakdown:
    """Loss breakdown averaged over every agent in the batch"""
    winners = select_winner(out["positions"], future)
    reg_pos = position_loss(_gather_mode(out["positions"], winners), future)
    if use_yaw_loss:
        reg_yaw = yaw_loss(_gather_mode(out["yaws"], winners), ground_truth_yaws(future, dt))
    else:
        reg_yaw = reg_pos.new_zeros(())
    cls = classification_loss(out["scores"], winners, margin)
    total = omega * (reg_pos + reg_yaw) + (1.0 - omega) * cls
    return LossBreakdown(total=total, reg_pos=reg_pos, reg_yaw=reg_yaw, cls=cls, winners=winners)
