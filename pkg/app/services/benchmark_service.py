"""Inference latency harness.

Wall-clock medians of repeated forward passes after warm-up, single worker.
Agent-centric emulation re-normalizes the scene into each target's frame and
runs one full pass per target.
"""
import time
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Union

import numpy as np
import torch
from loguru import logger

from app.config import settings
from app.data.scene import Scene
from app.data.synth_data import make_token_scene
from app.models.forecasting_model import SimplForecastingModel
from app.models.scene_model import build_anchor_pose_agent
from app.utils.errors import ConfigurationError
from app.utils.report_writer import write_csv

COLUMNS = ("scene_id", "N_tokens", "N_agents", "N_targets", "mode", "wall_ms")


def median_wall_ms(fn: Callable[[], object], repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(samples))


def target_frame(scene: Scene, agent_index: int) -> Scene:
    """The scene expressed in the anchor frame of one agent"""
    anchor = build_anchor_pose_agent(scene.agents[agent_index])
    theta = -float(np.arctan2(anchor.heading[1], anchor.heading[0]))
    c, s = np.cos(theta), np.sin(theta)
    return scene.transformed(theta, -np.array([[c, -s], [s, c]]) @ anchor.position)


class BenchmarkService:
    """Times single-pass and agent-centric inference of a model"""

    def __init__(self, model: SimplForecastingModel, repeats: int = None, warmup: int = None):
        self.model = model.eval()
        self.repeats = settings.BENCH_REPEATS if repeats is None else repeats
        self.warmup = settings.BENCH_WARMUP if warmup is None else warmup
        if self.repeats < 1 or self.warmup < 0:
            raise ConfigurationError("repeats must be >= 1 and warmup >= 0")
        torch.set_num_threads(settings.NUM_THREADS)

    def _row(self, scene: Scene, targets: int, mode: str, wall_ms: float) -> Dict:
        return {"scene_id": scene.scenario_id, "N_tokens": scene.num_tokens, "N_agents": scene.num_agents,
                "N_targets": targets, "mode": mode, "wall_ms": wall_ms}

    def single_pass(self, scene: Scene) -> float:
        """Every agent is decoded by the same pass, whatever the target count"""
        return median_wall_ms(lambda: self.model.predict(scene), self.repeats, self.warmup)

    def agent_centric(self, scene: Scene, targets: int) -> float:
        """One pass per target, each on the scene in that target's frame"""
        views = [target_frame(scene, i) for i in range(targets)]

        def run():
            for view in views:
                self.model.predict(view)

        return median_wall_ms(run, self.repeats, self.warmup)

    def run(self, scenes: Sequence[Scene], emulate_agent_centric: bool = False) -> List[Dict]:
        rows = []
        for scene in scenes:
            targets = sum(agent.is_target for agent in scene.agents)
            rows.append(self._row(scene, targets, "single_pass", self.single_pass(scene)))
            if emulate_agent_centric:
                for m in range(1, scene.num_agents + 1):
                    rows.append(self._row(scene, m, "agent_centric", self.agent_centric(scene, m)))
            logger.debug(f"benchmarked {scene.scenario_id} ({scene.num_tokens} tokens)")
        return rows

    def token_sweep(self, sizes: Sequence[int]) -> List[Dict]:
        """Single-pass latency of generated scenes with the given token counts"""
        rows = []
        for size in sizes:
            if size < 1:
                raise ConfigurationError(f"token count must be >= 1, got {size}")
            num_agents = max(size // 2, 1)
            scene = make_token_scene(num_agents, size - num_agents, history=self.model.config.history,
                                     horizon=self.model.config.horizon, dt=self.model.config.dt)
            rows.append(self._row(scene, num_agents, "token_sweep", self.single_pass(scene)))
        return rows

    @staticmethod
    def write(rows: Sequence[Dict], path: Union[str, Path]) -> Path:
        return write_csv(rows, path, COLUMNS)
