"""Multimodal motion decoder.

Every fused actor token is mapped to K coefficient sets (one regression MLP per
mode) and K probability scores (one classification MLP + softmax). Coefficients
are turned into local positions and velocities by constant linear maps, yaws
follow the velocity tangent, and everything is restored to the global frame with
the agent's anchor pose.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from app.config import settings
from app.models.bezier import (
    basis_matrix,
    monomial_derivative_matrix,
    monomial_matrix,
    sample_times,
)
from app.models.nn_core import MLP
from app.models.scene_model import AnchorPose, rotate_to_global, to_global
from app.utils.errors import ConfigurationError


class TrajectoryBasis:
    """Position and velocity matrices [T, C] for one parameterization.

    bezier: C = n + 1 control points; monomial: C = n + 1 coefficients in
    normalized time; raw: C = T direct offsets, velocities by backward
    differences from the local origin (the observed position).
    """

    def __init__(self, parameterization: str, degree: int, horizon: int, dt: float):
        self.parameterization = parameterization
        self.degree = degree
        self.horizon = horizon
        self.dt = dt
        self.tau_max = horizon * dt
        t = sample_times(horizon)

        if parameterization == "bezier":
            diff = np.zeros((degree, degree + 1))
            diff[np.arange(degree), np.arange(degree)] = -1.0
            diff[np.arange(degree), np.arange(1, degree + 1)] = 1.0
            self.position_matrix = basis_matrix(degree, t)
            self.velocity_matrix = degree / self.tau_max * basis_matrix(degree - 1, t) @ diff
        elif parameterization == "monomial":
            self.position_matrix = monomial_matrix(degree, t)
            self.velocity_matrix = monomial_derivative_matrix(degree, t, self.tau_max)
        elif parameterization == "raw":
            self.position_matrix = np.eye(horizon)
            self.velocity_matrix = (np.eye(horizon) - np.eye(horizon, k=-1)) / dt
        else:
            raise ConfigurationError(f"unknown parameterization {parameterization!r}")

    @property
    def num_coeffs(self) -> int:
        return self.position_matrix.shape[1]


def yaw_from_velocity_tensor(velocities: torch.Tensor, threshold: float = None) -> torch.Tensor:
    """Differentiable unit tangents [..., T, 2] with low-speed carry-forward.

    Steps slower than the threshold repeat the last fast step's yaw; before any
    fast step the local anchor heading (1, 0) is used.
    """
    threshold = settings.LOW_SPEED_THRESHOLD if threshold is None else threshold
    speed_sq = (velocities**2).sum(dim=-1)
    fast = speed_sq >= threshold**2
    steps = torch.arange(velocities.shape[-2], device=velocities.device).expand_as(speed_sq)
    last_fast = torch.where(fast, steps, torch.full_like(steps, -1)).cummax(dim=-1).values

    unit = velocities / torch.sqrt(speed_sq.clamp_min(threshold**2)).unsqueeze(-1)
    index = last_fast.clamp_min(0).unsqueeze(-1).expand_as(velocities)
    carried = torch.gather(unit, -2, index)
    fallback = torch.zeros_like(velocities)
    fallback[..., 0] = 1.0
    return torch.where((last_fast >= 0).unsqueeze(-1), carried, fallback)


@dataclass(frozen=True)
class ModeOutput:
    control_points: np.ndarray
    score: float


@dataclass(frozen=True)
class AgentPrediction:
    """K hypotheses of one agent: local coefficients, scores and global samples"""

    agent_id: str
    anchor: Optional[AnchorPose]
    control_points: np.ndarray  # [K, C, 2] local frame
    scores: np.ndarray  # [K]
    positions: np.ndarray  # [K, T, 2] global, m
    velocities: np.ndarray  # [K, T, 2] global, m/s
    yaws: np.ndarray  # [K, T, 2] global unit vectors

    @property
    def modes(self) -> List[ModeOutput]:
        return [ModeOutput(self.control_points[k], float(self.scores[k])) for k in range(len(self.scores))]


@dataclass(frozen=True)
class PredictionSet:
    scenario_id: str
    agents: Tuple[AgentPrediction, ...]

    def __len__(self) -> int:
        return len(self.agents)

    def by_id(self) -> Dict[str, AgentPrediction]:
        return {agent.agent_id: agent for agent in self.agents}


class MotionDecoder(nn.Module):
    def __init__(self, embed_dim: int, modes: int, basis: TrajectoryBasis):
        super().__init__()
        self.modes = modes
        self.basis = basis
        out_dim = basis.num_coeffs * 2
        self.regression_heads = nn.ModuleList(MLP([embed_dim, 2 * embed_dim, out_dim]) for _ in range(modes))
        self.classification_head = MLP([embed_dim, embed_dim, modes])
        self.register_buffer("position_matrix", torch.as_tensor(basis.position_matrix), persistent=False)
        self.register_buffer("velocity_matrix", torch.as_tensor(basis.velocity_matrix), persistent=False)

    def forward(self, tokens: torch.Tensor) -> Dict[str, torch.Tensor]:
        """[N_a, D] actor tokens -> local-frame outputs of every mode"""
        n = tokens.shape[0]
        coeffs = torch.stack([head(tokens) for head in self.regression_heads], dim=1)
        coeffs = coeffs.view(n, self.modes, self.basis.num_coeffs, 2)
        logits = self.classification_head(tokens)
        positions = torch.einsum("tc,akcd->aktd", self.position_matrix.to(coeffs.dtype), coeffs)
        velocities = torch.einsum("tc,akcd->aktd", self.velocity_matrix.to(coeffs.dtype), coeffs)
        return {
            "coeffs": coeffs,
            "logits": logits,
            "scores": torch.softmax(logits, dim=-1),
            "positions": positions,
            "velocities": velocities,
            "yaws": yaw_from_velocity_tensor(velocities),
        }

    def decode_agent(self, token: torch.Tensor, anchor: AnchorPose, agent_id: str = "") -> AgentPrediction:
        return self.decode_all(token.unsqueeze(0), [anchor], [agent_id], "").agents[0]

    @torch.no_grad()
    def decode_all(self, tokens: torch.Tensor, anchors: Sequence[AnchorPose], agent_ids: Sequence[str],
                   scenario_id: str) -> PredictionSet:
        """Predictions for every actor token from one decoder pass"""
        out = self.forward(tokens)
        return restore_global(out, anchors, agent_ids, scenario_id)


def restore_global(out: Dict[str, torch.Tensor], anchors: Sequence[AnchorPose], agent_ids: Sequence[str],
                   scenario_id: str) -> PredictionSet:
    """Map local decoder outputs into the global frame of each agent's anchor"""
    arrays = {key: value.detach().cpu().double().numpy() for key, value in out.items()}
    agents = []
    for a, (anchor, agent_id) in enumerate(zip(anchors, agent_ids)):
        agents.append(
            AgentPrediction(
                agent_id=agent_id,
                anchor=anchor,
                control_points=arrays["coeffs"][a],
                scores=arrays["scores"][a],
                positions=to_global(arrays["positions"][a], anchor),
                velocities=rotate_to_global(arrays["velocities"][a], anchor),
                yaws=rotate_to_global(arrays["yaws"][a], anchor),
            )
        )
    return PredictionSet(scenario_id=scenario_id, agents=tuple(agents))
