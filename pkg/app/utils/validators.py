from typing import TYPE_CHECKING

import numpy as np

from app.utils.errors import MalformedSceneError, ShapeError

if TYPE_CHECKING:
    from app.data.scene import Scene

MIN_POINT_SPACING = 1e-6


def validate_scene(scene: "Scene") -> None:
    """Check the Scene, AgentTrack and MapPolyline invariants"""
    sid = scene.scenario_id
    if not scene.dt > 0:
        raise MalformedSceneError(f"scene {sid}: dt must be > 0, got {scene.dt}")
    if scene.history_len < 1 or scene.future_len < 1:
        raise MalformedSceneError(f"scene {sid}: history_len and future_len must be >= 1")
    if len(scene.agents) < 1:
        raise MalformedSceneError(f"scene {sid}: at least one agent is required")

    seen = set()
    for agent in scene.agents:
        if agent.id in seen:
            raise MalformedSceneError(f"scene {sid}: duplicate agent id {agent.id}")
        seen.add(agent.id)
        if agent.history.shape != (scene.history_len, 3):
            raise MalformedSceneError(
                f"scene {sid}: agent {agent.id} history has shape {agent.history.shape}, "
                f"expected ({scene.history_len}, 3)"
            )
        if not np.all(np.isfinite(agent.history)):
            raise MalformedSceneError(f"scene {sid}: agent {agent.id} history is not finite")
        if agent.history[-1, 2] <= 0.5:
            raise MalformedSceneError(f"scene {sid}: agent {agent.id} is not observed at the current step")
        if agent.future is not None:
            if agent.future.shape != (scene.future_len, 2):
                raise MalformedSceneError(
                    f"scene {sid}: agent {agent.id} future has shape {agent.future.shape}, "
                    f"expected ({scene.future_len}, 2)"
                )
            if not np.all(np.isfinite(agent.future)):
                raise MalformedSceneError(f"scene {sid}: agent {agent.id} future is not finite")

    for poly in scene.map_elements:
        validate_polyline_points(poly.points, f"scene {sid}: polyline {poly.id}")


def validate_polyline_points(points: np.ndarray, label: str = "polyline") -> None:
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        raise MalformedSceneError(f"{label}: needs at least 2 points of (x, y)")
    if not np.all(np.isfinite(points)):
        raise MalformedSceneError(f"{label}: points are not finite")
    gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if np.any(gaps <= MIN_POINT_SPACING):
        raise MalformedSceneError(f"{label}: consecutive points are coincident")


def check_trailing_dim(array, expected: int, label: str) -> None:
    """Raise ShapeError unless the last extent of ``array`` equals ``expected``"""
    if array.shape[-1] != expected:
        raise ShapeError(f"{label}: trailing extent {array.shape[-1]} != {expected}")
