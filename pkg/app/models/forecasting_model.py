from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from app.config import TrainingConfig, settings
from app.data.scene import Scene
from app.models.decoder import MotionDecoder, PredictionSet, TrajectoryBasis, restore_global
from app.models.encoders import ActorEncoder, MapEncoder, RelPoseEncoder
from app.models.nn_core import count_parameters, resolve_dtype
from app.models.scene_model import (
    AnchorPose,
    build_anchor_poses,
    compute_rel_pose_tensor,
    normalize_agent,
    normalize_map,
    to_local,
)
from app.models.sft import SftConfig, SymmetricFusionTransformer
from app.utils.errors import MalformedSceneError


@dataclass
class SceneTensors:
    """Encoder-ready view of one scene; token order is agents then map elements"""

    scenario_id: str
    agent_ids: List[str]
    anchors: List[AnchorPose]
    actor_features: torch.Tensor  # [N_a, H, 3]
    map_features: torch.Tensor  # [N_m, P, 4]
    map_mask: torch.Tensor  # [N_m, P]
    rel_pose: torch.Tensor  # [N, N, 5]
    is_target: torch.Tensor  # [N_a]
    future_local: Optional[torch.Tensor] = None  # [N_a, T, 2]

    @property
    def num_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def num_tokens(self) -> int:
        return self.rel_pose.shape[0]


def prepare_scene(scene: Scene, dtype: torch.dtype = torch.float64, max_map_points: int = None) -> SceneTensors:
    """Anchor poses, local features and relative poses of one scene"""
    max_map_points = max_map_points or settings.MAX_MAP_POINTS
    if len(scene.agents) == 0:
        raise MalformedSceneError(f"scene {scene.scenario_id} has no agents")
    anchors = build_anchor_poses(scene)
    agent_anchors = anchors[: scene.num_agents]

    actor = np.stack([normalize_agent(agent, anchor) for agent, anchor in zip(scene.agents, agent_anchors)])

    polylines = [normalize_map(poly, anchor, max_map_points)
                 for poly, anchor in zip(scene.map_elements, anchors[scene.num_agents:])]
    width = max((p.shape[0] for p in polylines), default=2)
    map_features = np.zeros((len(polylines), width, 4))
    map_mask = np.zeros((len(polylines), width), dtype=bool)
    for m, points in enumerate(polylines):
        map_features[m, : points.shape[0]] = points
        map_mask[m, : points.shape[0]] = True

    future = None
    if scene.has_futures:
        future = np.stack([to_local(agent.future, anchor) for agent, anchor in zip(scene.agents, agent_anchors)])
        future = torch.as_tensor(future, dtype=dtype)

    return SceneTensors(
        scenario_id=scene.scenario_id,
        agent_ids=[agent.id for agent in scene.agents],
        anchors=anchors,
        actor_features=torch.as_tensor(actor, dtype=dtype),
        map_features=torch.as_tensor(map_features, dtype=dtype),
        map_mask=torch.as_tensor(map_mask),
        rel_pose=torch.as_tensor(compute_rel_pose_tensor(anchors), dtype=dtype),
        is_target=torch.as_tensor([agent.is_target for agent in scene.agents]),
        future_local=future,
    )


class SimplForecastingModel(nn.Module):
    """Encoders, symmetric fusion Transformer and multimodal decoder in one module"""

    def __init__(self, config: TrainingConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.actor_encoder = ActorEncoder(d)
        self.map_encoder = MapEncoder(d)
        self.rpe_encoder = RelPoseEncoder(d)
        sft_config = SftConfig(layers=config.sft_layers, heads=config.heads, embed_dim=d, rpe_update=config.rpe_update)
        self.fusion = SymmetricFusionTransformer(sft_config)
        basis = TrajectoryBasis(config.parameterization, config.degree, config.horizon, config.dt)
        self.decoder = MotionDecoder(d, config.modes, basis)
        self.to(resolve_dtype(config.dtype))
        logger.debug(f"built forecasting model with {count_parameters(self)} parameters")

    @property
    def dtype(self) -> torch.dtype:
        return resolve_dtype(self.config.dtype)

    def prepare(self, scene: Scene) -> SceneTensors:
        return prepare_scene(scene, self.dtype)

    def encode(self, inputs: SceneTensors):
        """Instance tokens [N, D] (actors first) and relative positional embedding [N, N, D]"""
        actor_tokens = self.actor_encoder(inputs.actor_features)
        if inputs.map_features.shape[0] > 0:
            map_tokens = self.map_encoder(inputs.map_features, inputs.map_mask)
            tokens = torch.cat([actor_tokens, map_tokens], dim=0)
        else:
            tokens = actor_tokens
        return tokens, self.rpe_encoder(inputs.rel_pose)

    def fuse(self, inputs: SceneTensors) -> torch.Tensor:
        tokens, rpe = self.encode(inputs)
        return self.fusion(tokens, rpe)

    def forward(self, inputs: SceneTensors) -> Dict[str, torch.Tensor]:
        fused = self.fuse(inputs)
        return self.decoder(fused[: inputs.num_agents])

    @torch.no_grad()
    def predict(self, scene: Scene) -> PredictionSet:
        """Global-frame predictions for every agent from a single forward pass"""
        was_training = self.training
        self.eval()
        try:
            inputs = self.prepare(scene)
            out = self.forward(inputs)
            return restore_global(out, inputs.anchors[: inputs.num_agents], inputs.agent_ids, scene.scenario_id)
        finally:
            self.train(was_training)
