from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError

from app.data.scene import Scene
from app.models.checkpoint import load_checkpoint
from app.models.decoder import AgentPrediction, PredictionSet
from app.models.forecasting_model import SimplForecastingModel
from app.utils.errors import MalformedSceneError
from app.utils.report_writer import read_json, write_json


# Prediction file schema
class ModeRecord(BaseModel):
    score: float
    control_points: List[List[float]]
    positions: List[List[float]]
    velocities: List[List[float]]
    yaws: List[List[float]]


class AgentPredictionRecord(BaseModel):
    id: str
    modes: List[ModeRecord]


class PredictionRecord(BaseModel):
    scenario_id: str
    agents: List[AgentPredictionRecord]


def prediction_to_dict(prediction: PredictionSet) -> Dict[str, Any]:
    agents = []
    for agent in prediction.agents:
        modes = [
            {
                "score": mode.score,
                "control_points": mode.control_points.tolist(),
                "positions": agent.positions[k].tolist(),
                "velocities": agent.velocities[k].tolist(),
                "yaws": agent.yaws[k].tolist(),
            }
            for k, mode in enumerate(agent.modes)
        ]
        agents.append({"id": agent.agent_id, "modes": modes})
    return {"scenario_id": prediction.scenario_id, "agents": agents}


def prediction_from_dict(raw: Dict[str, Any]) -> PredictionSet:
    try:
        record = PredictionRecord(**raw)
    except (TypeError, ValidationError) as e:
        raise MalformedSceneError(f"prediction does not match the prediction file format: {e}") from e

    agents = []
    for agent in record.agents:
        if not agent.modes:
            raise MalformedSceneError(f"prediction for agent {agent.id} has no modes")

        def stack(field: str) -> np.ndarray:
            return np.asarray([getattr(mode, field) for mode in agent.modes], dtype=np.float64)

        positions = stack("positions")
        if positions.ndim != 3 or positions.shape[-1] != 2:
            raise MalformedSceneError(f"prediction for agent {agent.id} has ragged or non-2D positions")
        agents.append(
            AgentPrediction(
                agent_id=agent.id,
                anchor=None,
                control_points=stack("control_points"),
                scores=stack("score"),
                positions=positions,
                velocities=stack("velocities"),
                yaws=stack("yaws"),
            )
        )
    return PredictionSet(scenario_id=record.scenario_id, agents=tuple(agents))


def save_predictions(predictions: Sequence[PredictionSet], path: Union[str, Path]) -> Path:
    """One object for a single scene, a list of objects otherwise"""
    payload = [prediction_to_dict(p) for p in predictions]
    return write_json(payload[0] if len(payload) == 1 else payload, path)


def load_predictions(path: Union[str, Path]) -> List[PredictionSet]:
    raw = read_json(path)
    items = raw if isinstance(raw, list) else [raw]
    if not all(isinstance(item, dict) for item in items):
        raise MalformedSceneError(f"{path} must hold prediction objects")
    return [prediction_from_dict(item) for item in items]


class ForecastService:
    """Runs a trained model over scenes"""

    def __init__(self, model: SimplForecastingModel):
        self.model = model

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path]) -> "ForecastService":
        return cls(load_checkpoint(path))

    def predict(self, scene: Scene) -> PredictionSet:
        return self.model.predict(scene)

    def predict_all(self, scenes: Sequence[Scene]) -> List[PredictionSet]:
        predictions = [self.predict(scene) for scene in scenes]
        logger.info(f"predicted {sum(len(p) for p in predictions)} agents in {len(predictions)} scenes")
        return predictions
