"""Deterministic synthetic lane-following scenes.

Lanes are dense straight or constant-curvature centerlines. Each agent drives
along one lane at a constant speed; its history carries Gaussian position noise,
its future continues the lane noise-free. Scenes with several lanes always keep
at least one lane free of agents.
"""
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from app.config import GeneratorConfig
from app.data.scene import AgentKind, AgentTrack, MapPolyline, PolylineKind, Scene, save_scene
from app.models.bezier import fit_bezier, sample_times
from app.models.decoder import AgentPrediction, PredictionSet
from app.models.scene_model import build_anchor_pose_agent, to_local
from app.utils.errors import StorageError
from app.utils.report_writer import write_json


class Lane:
    """Dense polyline with arc-length lookup"""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64)
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.seg_dir = seg / self.seg_len[:, None]
        self.arc = np.concatenate([[0.0], np.cumsum(self.seg_len)])

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def _segment(self, s: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self.seg_len) - 1)

    def position(self, s: Sequence[float]) -> np.ndarray:
        """Points at arc lengths s, extrapolated linearly past either end"""
        s = np.asarray(s, dtype=np.float64)
        idx = self._segment(s)
        return self.points[idx] + (s - self.arc[idx])[:, None] * self.seg_dir[idx]

    def tangent(self, s: Sequence[float]) -> np.ndarray:
        return self.seg_dir[self._segment(np.asarray(s, dtype=np.float64))]

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Arc length and squared distance of the closest lane point to each point"""
        points = np.asarray(points, dtype=np.float64)
        start = self.points[:-1]
        rel = points[:, None, :] - start[None]
        t = np.clip(np.einsum("psd,sd->ps", rel, self.seg_dir), 0.0, self.seg_len[None])
        closest = start[None] + t[..., None] * self.seg_dir[None]
        dist_sq = np.sum((points[:, None, :] - closest) ** 2, axis=-1)
        best = np.argmin(dist_sq, axis=1)
        rows = np.arange(points.shape[0])
        return self.arc[best] + t[rows, best], dist_sq[rows, best]


def _make_lane(rng: np.random.Generator, config: GeneratorConfig) -> np.ndarray:
    length = config.lane_length
    count = int(np.ceil(length / config.lane_spacing)) + 1
    s = np.linspace(0.0, length, count)
    if rng.random() < config.arc_fraction:
        kappa = rng.uniform(*config.curvature_range) * rng.choice([-1.0, 1.0])
        if abs(kappa) < 1e-9:
            local = np.stack([s, np.zeros_like(s)], axis=1)
        else:
            local = np.stack([np.sin(kappa * s) / kappa, (1.0 - np.cos(kappa * s)) / kappa], axis=1)
    else:
        local = np.stack([s, np.zeros_like(s)], axis=1)

    theta = rng.uniform(0.0, 2.0 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    reach = config.region_size / 2.0 - length / 2.0
    center = rng.uniform(-reach, reach, size=2)
    local = local - local.mean(axis=0)
    return local @ rot.T + center


def generate_scene(config: GeneratorConfig, index: int) -> Scene:
    """One scene from the per-scene seed (config.seed, index)"""
    rng = np.random.default_rng([config.seed, index])
    num_lanes = int(rng.integers(config.lanes_per_scene[0], config.lanes_per_scene[1] + 1))
    lanes = [Lane(_make_lane(rng, config)) for _ in range(num_lanes)]
    followed = 1 if num_lanes == 1 else int(rng.integers(1, num_lanes))

    num_agents = int(rng.integers(config.agents_per_scene[0], config.agents_per_scene[1] + 1))
    steps = config.history + config.horizon
    agents = []
    for a in range(num_agents):
        lane = lanes[int(rng.integers(0, followed))]
        speed = rng.uniform(*config.speed_range)
        travel = (steps - 1) * speed * config.dt
        start = rng.uniform(0.0, max(lane.length - travel, 0.0))
        track = lane.position(start + speed * config.dt * np.arange(steps))
        history = track[: config.history] + rng.normal(0.0, config.noise_std, size=(config.history, 2))
        agents.append(
            AgentTrack(
                id=f"agent_{a}",
                kind=AgentKind.VEHICLE,
                history=np.concatenate([history, np.ones((config.history, 1))], axis=1),
                future=track[config.history:].copy(),
                is_target=True,
            )
        )

    polylines = tuple(
        MapPolyline(id=f"lane_{m}", kind=PolylineKind.LANE_CENTERLINE, points=lane.points)
        for m, lane in enumerate(lanes)
    )
    return Scene(
        scenario_id=f"synth_{config.seed}_{index:05d}",
        dt=config.dt,
        history_len=config.history,
        future_len=config.horizon,
        agents=tuple(agents),
        map_elements=polylines,
    )


def generate(config: GeneratorConfig) -> List[Scene]:
    return [generate_scene(config, i) for i in range(config.num_scenes)]


def write_dataset(scenes: Sequence[Scene], config: GeneratorConfig, out_dir: Union[str, Path]) -> Path:
    """Scene files plus a manifest with scene ids and the generator config"""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create dataset directory {out_dir}: {e}") from e
    for scene in scenes:
        save_scene(scene, out_dir / f"{scene.scenario_id}.json")
    manifest = {"generator_config": config.model_dump(mode="json"), "scenes": [s.scenario_id for s in scenes]}
    write_json(manifest, out_dir / "manifest.json", indent=2)
    logger.info(f"wrote {len(scenes)} scenes to {out_dir}")
    return out_dir


def _oracle_agent(agent: AgentTrack, lanes: Sequence[Lane], dt: float, horizon: int, degree: int) -> AgentPrediction:
    valid = agent.valid
    observed = agent.positions[valid]
    times = np.flatnonzero(valid) * dt

    projections = [lane.project(observed) for lane in lanes]
    best = int(np.argmin([dist_sq.mean() for _, dist_sq in projections]))
    lane, arc = lanes[best], projections[best][0]

    if arc.size > 1:
        speed, offset = np.polyfit(times, arc, 1)
    else:
        speed, offset = 0.0, float(arc[0])
    speed = max(float(speed), 0.0)
    t_obs = (len(agent.valid) - 1) * dt
    future_arc = offset + speed * t_obs + speed * dt * np.arange(1, horizon + 1)

    positions = lane.position(future_arc)
    tangents = lane.tangent(future_arc)
    anchor = build_anchor_pose_agent(agent)
    tau = sample_times(horizon) * horizon * dt
    control = fit_bezier(to_local(positions, anchor), tau, min(degree, horizon - 1), tau_max=horizon * dt)
    return AgentPrediction(
        agent_id=agent.id,
        anchor=anchor,
        control_points=control.control_points[None],
        scores=np.ones(1),
        positions=positions[None],
        velocities=(speed * tangents)[None],
        yaws=tangents[None],
    )


def oracle_predictor(scene: Scene, degree: int = 5) -> PredictionSet:
    """Single-mode prediction that continues each agent's best-matching lane at its fitted speed"""
    lanes = [Lane(poly.points) for poly in scene.map_elements if poly.kind == PolylineKind.LANE_CENTERLINE]
    if not lanes:
        lanes = [Lane(poly.points) for poly in scene.map_elements]
    agents = tuple(_oracle_agent(agent, lanes, scene.dt, scene.future_len, degree) for agent in scene.agents)
    return PredictionSet(scenario_id=scene.scenario_id, agents=agents)


def make_token_scene(num_agents: int, num_lanes: int, history: int = 20, horizon: int = 30,
                     dt: float = 0.1, seed: int = 0) -> Scene:
    """Scene with a prescribed token count for latency sweeps"""
    rng = np.random.default_rng([seed, num_agents, num_lanes])
    agents = []
    for a in range(num_agents):
        start = rng.uniform(-80.0, 80.0, size=2)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        velocity = rng.uniform(2.0, 15.0) * np.array([np.cos(heading), np.sin(heading)])
        steps = np.arange(history + horizon)[:, None] * dt
        track = start + steps * velocity
        agents.append(
            AgentTrack(
                id=f"agent_{a}",
                kind=AgentKind.VEHICLE,
                history=np.concatenate([track[:history], np.ones((history, 1))], axis=1),
                future=track[history:],
                is_target=True,
            )
        )
    polylines = []
    for m in range(num_lanes):
        start = rng.uniform(-90.0, 90.0, size=2)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        points = start + np.linspace(0.0, 20.0, 10)[:, None] * np.array([np.cos(heading), np.sin(heading)])
        polylines.append(MapPolyline(id=f"lane_{m}", kind=PolylineKind.LANE_CENTERLINE, points=points))
    return Scene(
        scenario_id=f"tokens_{num_agents + num_lanes:04d}",
        dt=dt,
        history_len=history,
        future_len=horizon,
        agents=tuple(agents),
        map_elements=tuple(polylines),
    )
