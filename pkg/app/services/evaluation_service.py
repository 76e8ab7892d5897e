from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from app.config import settings
from app.data.scene import AgentTrack, Scene
from app.models.decoder import AgentPrediction, PredictionSet
from app.models.scene_model import build_anchor_pose_agent
from app.utils import metrics
from app.utils.errors import MalformedSceneError
from app.utils.report_writer import write_csv

REPORT_COLUMNS = ("scene_id", "agent_id", "min_ade", "min_fde", "miss_rate", "brier_min_fde",
                  "min_aye", "min_fye", "best_mode", "k")
AGGREGATE_ID = "ALL"


def evaluation_agents(scene: Scene, targets_only: bool = True) -> List[AgentTrack]:
    """Agents that carry a full future, restricted to flagged targets by default"""
    return [
        agent for agent in scene.agents
        if agent.future is not None and agent.future.shape[0] == scene.future_len
        and (agent.is_target or not targets_only)
    ]


def score_agent(prediction: AgentPrediction, agent: AgentTrack, dt: float) -> Dict[str, float]:
    if prediction.positions.shape[1:] != agent.future.shape:
        raise MalformedSceneError(
            f"prediction for {agent.id} has shape {prediction.positions.shape[1:]}, "
            f"future has {agent.future.shape}"
        )
    heading = build_anchor_pose_agent(agent).heading
    gt_yaws = metrics.ground_truth_yaws(agent.history[-1, :2], agent.future, dt, heading)
    return metrics.agent_metrics(prediction.positions, prediction.scores, prediction.yaws, agent.future, gt_yaws)


class EvaluationService:
    """Scores prediction sets against scene ground truth"""

    def __init__(self, targets_only: bool = True, miss_threshold: float = None):
        self.targets_only = targets_only
        self.miss_threshold = settings.MISS_THRESHOLD if miss_threshold is None else miss_threshold

    def score(self, predictions: Sequence[PredictionSet], scenes: Sequence[Scene]) -> Tuple[List[Dict], metrics.MetricReport]:
        """Per scene-agent rows plus the aggregate report"""
        by_scene = {p.scenario_id: p for p in predictions}
        rows = []
        k = 0
        for scene in scenes:
            agents = evaluation_agents(scene, self.targets_only)
            if not agents:
                continue
            if scene.scenario_id not in by_scene:
                raise MalformedSceneError(f"no predictions for scene {scene.scenario_id}")
            predicted = by_scene[scene.scenario_id].by_id()
            for agent in agents:
                if agent.id not in predicted:
                    raise MalformedSceneError(f"no prediction for agent {agent.id} in scene {scene.scenario_id}")
                prediction = predicted[agent.id]
                row = score_agent(prediction, agent, scene.dt)
                row["miss_rate"] = float(row["min_fde"] > self.miss_threshold)
                row.update(scene_id=scene.scenario_id, agent_id=agent.id, k=len(prediction.scores))
                k = max(k, row["k"])
                rows.append(row)

        return rows, metrics.aggregate(rows, k, self.miss_threshold)

    def write_report(self, rows: Sequence[Dict], report: metrics.MetricReport, path: Union[str, Path]) -> Path:
        aggregate = report.as_dict()
        aggregate_row = {key: aggregate.get(key, np.nan) for key in REPORT_COLUMNS}
        aggregate_row.update(scene_id=AGGREGATE_ID, agent_id=AGGREGATE_ID, best_mode=np.nan, k=report.k)
        path = write_csv([*rows, aggregate_row], path, REPORT_COLUMNS)
        logger.info(
            f"evaluated {report.num_agents} agents: minADE={report.min_ade:.3f} minFDE={report.min_fde:.3f} "
            f"MR={report.miss_rate:.3f} b-minFDE={report.brier_min_fde:.3f} "
            f"minAYE={report.min_aye:.3f} minFYE={report.min_fye:.3f}"
        )
        return path
