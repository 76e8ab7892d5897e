"""Scene model types and the scene file format.

A scene file is UTF-8 JSON holding one scene in the global frame::

    {"scenario_id": ..., "dt": ..., "history_len": H, "future_len": T,
     "agents": [{"id", "kind", "is_target", "history": [[x, y, valid], ...],
                 "future": [[x, y], ...]}],
     "map": [{"id", "kind", "points": [[x, y], ...]}]}
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from app.utils.errors import MalformedSceneError, StorageError
from app.utils.report_writer import read_json, write_json
from app.utils.validators import validate_scene


class AgentKind(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    OTHER = "other"


class PolylineKind(str, Enum):
    LANE_CENTERLINE = "lane_centerline"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class AgentTrack:
    """Observed history (H x [x, y, valid]) and optional future (T x [x, y])"""

    id: str
    kind: AgentKind
    history: np.ndarray
    future: Optional[np.ndarray] = None
    is_target: bool = False

    @property
    def positions(self) -> np.ndarray:
        return self.history[:, :2]

    @property
    def valid(self) -> np.ndarray:
        return self.history[:, 2] > 0.5


@dataclass(frozen=True)
class MapPolyline:
    id: str
    kind: PolylineKind
    points: np.ndarray


@dataclass(frozen=True)
class Scene:
    scenario_id: str
    dt: float
    history_len: int
    future_len: int
    agents: Tuple[AgentTrack, ...]
    map_elements: Tuple[MapPolyline, ...] = field(default_factory=tuple)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def num_tokens(self) -> int:
        return len(self.agents) + len(self.map_elements)

    @property
    def has_futures(self) -> bool:
        return all(agent.future is not None for agent in self.agents)

    def with_targets(self, target_ids: Sequence[str]) -> "Scene":
        """Copy of the scene with is_target set exactly for the given agent ids"""
        wanted = set(target_ids)
        agents = tuple(replace(agent, is_target=agent.id in wanted) for agent in self.agents)
        return replace(self, agents=agents)

    def transformed(self, rotation: float, translation: Sequence[float]) -> "Scene":
        """Copy of the scene under the rigid transform x -> R(rotation) x + translation"""
        c, s = np.cos(rotation), np.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        shift = np.asarray(translation, dtype=np.float64)

        def move(points: np.ndarray) -> np.ndarray:
            return points @ rot.T + shift

        agents = []
        for agent in self.agents:
            history = agent.history.copy()
            history[:, :2] = move(agent.history[:, :2])
            future = None if agent.future is None else move(agent.future)
            agents.append(replace(agent, history=history, future=future))
        polylines = tuple(replace(poly, points=move(poly.points)) for poly in self.map_elements)
        return replace(self, agents=tuple(agents), map_elements=polylines)


# Scene file schema
class AgentRecord(BaseModel):
    id: str
    kind: AgentKind = AgentKind.VEHICLE
    is_target: bool = False
    history: List[Tuple[float, float, float]]
    future: Optional[List[Tuple[float, float]]] = None


class MapRecord(BaseModel):
    id: str
    kind: PolylineKind = PolylineKind.LANE_CENTERLINE
    points: List[Tuple[float, float]]


class SceneRecord(BaseModel):
    scenario_id: str
    dt: float
    history_len: int
    future_len: int
    agents: List[AgentRecord]
    map: List[MapRecord] = []


def scene_from_dict(raw: Dict[str, Any]) -> Scene:
    """Parse and validate a scene mapping"""
    try:
        record = SceneRecord(**raw)
    except ValidationError as e:
        raise MalformedSceneError(f"scene does not match the scene file format: {e}") from e

    agents = tuple(
        AgentTrack(
            id=a.id,
            kind=a.kind,
            history=np.asarray(a.history, dtype=np.float64).reshape(-1, 3),
            future=None if a.future is None else np.asarray(a.future, dtype=np.float64).reshape(-1, 2),
            is_target=a.is_target,
        )
        for a in record.agents
    )
    polylines = tuple(
        MapPolyline(id=m.id, kind=m.kind, points=np.asarray(m.points, dtype=np.float64).reshape(-1, 2))
        for m in record.map
    )
    scene = Scene(
        scenario_id=record.scenario_id,
        dt=record.dt,
        history_len=record.history_len,
        future_len=record.future_len,
        agents=agents,
        map_elements=polylines,
    )
    validate_scene(scene)
    return scene


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    agents = []
    for agent in scene.agents:
        record: Dict[str, Any] = {
            "id": agent.id,
            "kind": agent.kind.value,
            "is_target": bool(agent.is_target),
            "history": [[float(x), float(y), int(v > 0.5)] for x, y, v in agent.history],
        }
        if agent.future is not None:
            record["future"] = [[float(x), float(y)] for x, y in agent.future]
        agents.append(record)
    return {
        "scenario_id": scene.scenario_id,
        "dt": float(scene.dt),
        "history_len": int(scene.history_len),
        "future_len": int(scene.future_len),
        "agents": agents,
        "map": [
            {"id": poly.id, "kind": poly.kind.value, "points": [[float(x), float(y)] for x, y in poly.points]}
            for poly in scene.map_elements
        ],
    }


def load_scene(path: Union[str, Path]) -> Scene:
    """Read one scene file"""
    path = Path(path)
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise MalformedSceneError(f"scene file {path} must hold a single object")
    return scene_from_dict(raw)


def save_scene(scene: Scene, path: Union[str, Path]) -> Path:
    return write_json(scene_to_dict(scene), path)


def scene_paths(location: Union[str, Path]) -> List[Path]:
    """A scene file, or every *.json scene file of a directory in name order"""
    location = Path(location)
    if location.is_dir():
        return sorted(p for p in location.glob("*.json") if p.name != "manifest.json")
    if location.is_file():
        return [location]
    raise StorageError(f"no scene file or directory at {location}")


def load_scenes(location: Union[str, Path]) -> List[Scene]:
    return [load_scene(path) for path in scene_paths(location)]
