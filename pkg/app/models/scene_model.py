"""Instance-centric scene representation.

Every agent track and map polyline gets its own anchor pose (position plus unit
heading). Instance features are expressed in that local frame, and the geometry
between instances is carried by the all-to-all relative pose tensor, whose entry
at row j, column i describes the pose of instance i as seen from instance j::

    [sin(alpha), cos(alpha), sin(beta), cos(beta), |d|]
"""
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from loguru import logger

from app.config import settings
from app.data.scene import AgentTrack, MapPolyline, Scene
from app.utils.errors import MalformedSceneError
from app.utils.validators import validate_polyline_points

FALLBACK_HEADING = np.array([1.0, 0.0])
DEGENERATE_DISTANCE = 1e-9
SELF_LOOP = np.array([0.0, 1.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True)
class AnchorPose:
    """Local reference frame of one instance: position p and unit heading v"""

    position: np.ndarray
    heading: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        """Columns are the local x and y axes in the global frame"""
        vx, vy = self.heading
        return np.array([[vx, -vy], [vy, vx]])


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]


def to_local(points: np.ndarray, anchor: AnchorPose) -> np.ndarray:
    """Translate by -p then rotate by -heading"""
    return (np.asarray(points, dtype=np.float64) - anchor.position) @ anchor.rotation


def to_global(points: np.ndarray, anchor: AnchorPose) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ anchor.rotation.T + anchor.position


def rotate_to_global(vectors: np.ndarray, anchor: AnchorPose) -> np.ndarray:
    """Rotate direction vectors (velocities, yaws) from the local into the global frame"""
    return np.asarray(vectors, dtype=np.float64) @ anchor.rotation.T


def build_anchor_pose_agent(track: AgentTrack) -> AnchorPose:
    """Anchor at the last valid observed position, heading along recent motion.

    Heading is the unit vector from the earliest to the last position within the
    final HEADING_WINDOW valid steps. Agents that moved less than
    STATIONARY_THRESHOLD over their whole valid history get the fallback heading
    (1, 0).
    """
    valid_idx = np.flatnonzero(track.valid)
    if valid_idx.size == 0:
        raise MalformedSceneError(f"agent {track.id} has no valid history step")

    positions = track.positions
    last = positions[valid_idx[-1]]
    total = np.linalg.norm(last - positions[valid_idx[0]])
    if total < settings.STATIONARY_THRESHOLD:
        logger.debug(f"agent {track.id} is stationary, using fallback heading")
        return AnchorPose(position=last.copy(), heading=FALLBACK_HEADING.copy())

    window = valid_idx[-settings.HEADING_WINDOW:]
    displacement = last - positions[window[0]]
    norm = np.linalg.norm(displacement)
    if norm < DEGENERATE_DISTANCE:
        return AnchorPose(position=last.copy(), heading=FALLBACK_HEADING.copy())
    return AnchorPose(position=last.copy(), heading=displacement / norm)


def build_anchor_pose_map(poly: MapPolyline) -> AnchorPose:
    """Anchor at the polyline centroid, heading along the endpoint displacement"""
    points = np.asarray(poly.points, dtype=np.float64)
    if points.shape[0] < 2:
        raise MalformedSceneError(f"polyline {poly.id} needs at least 2 points")
    centroid = points.mean(axis=0)
    displacement = points[-1] - points[0]
    norm = np.linalg.norm(displacement)
    if norm < DEGENERATE_DISTANCE:
        logger.warning(f"polyline {poly.id} has coincident endpoints, using fallback heading")
        return AnchorPose(position=centroid, heading=FALLBACK_HEADING.copy())
    return AnchorPose(position=centroid, heading=displacement / norm)


def build_anchor_poses(scene: Scene) -> list:
    """Anchors in token order: agents first, then map elements"""
    anchors = [build_anchor_pose_agent(agent) for agent in scene.agents]
    anchors.extend(build_anchor_pose_map(poly) for poly in scene.map_elements)
    return anchors


def resample_polyline(points: np.ndarray, max_points: int) -> np.ndarray:
    """Resample to ``max_points`` equally spaced by arc length when longer"""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] <= max_points:
        return points
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], max_points)
    return np.stack([np.interp(targets, arc, points[:, 0]), np.interp(targets, arc, points[:, 1])], axis=1)


def normalize_agent(track: AgentTrack, anchor: AnchorPose) -> np.ndarray:
    """Per-step (local displacement since the previous valid step, valid flag), shape [H, 3].

    Invalid steps are zero-filled with flag 0; the first valid step has zero
    displacement.
    """
    local = to_local(track.positions, anchor)
    features = np.zeros((local.shape[0], 3), dtype=np.float64)
    valid_idx = np.flatnonzero(track.valid)
    features[valid_idx, 2] = 1.0
    if valid_idx.size > 1:
        features[valid_idx[1:], :2] = local[valid_idx[1:]] - local[valid_idx[:-1]]
    return features


def normalize_map(poly: MapPolyline, anchor: AnchorPose, max_points: int = None) -> np.ndarray:
    """Per-point (local position, local unit direction to the next point), shape [P, 4].

    The last point reuses the direction of the final segment.
    """
    max_points = max_points or settings.MAX_MAP_POINTS
    validate_polyline_points(np.asarray(poly.points), f"polyline {poly.id}")
    local = to_local(resample_polyline(poly.points, max_points), anchor)
    seg = np.diff(local, axis=0)
    seg = seg / np.linalg.norm(seg, axis=1, keepdims=True)
    directions = np.concatenate([seg, seg[-1:]], axis=0)
    return np.concatenate([local, directions], axis=1)


def normalize_instance(instance: Union[AgentTrack, MapPolyline], anchor: AnchorPose) -> np.ndarray:
    if isinstance(instance, AgentTrack):
        return normalize_agent(instance, anchor)
    if isinstance(instance, MapPolyline):
        return normalize_map(instance, anchor)
    raise TypeError(f"cannot normalize {type(instance).__name__}")


def compute_rel_pose(a: AnchorPose, b: AnchorPose) -> np.ndarray:
    """Relative pose r_{a->b} of source a seen from target b"""
    sin_a = float(_cross(a.heading, b.heading))
    cos_a = float(_dot(a.heading, b.heading))
    d = a.position - b.position
    dist = float(np.linalg.norm(d))
    if dist < DEGENERATE_DISTANCE:
        sin_b, cos_b = 0.0, 1.0
    else:
        sin_b = float(_cross(d, b.heading)) / dist
        cos_b = float(_dot(d, b.heading)) / dist
    return np.array([sin_a, cos_a, sin_b, cos_b, dist])


def compute_rel_pose_tensor(anchors: Sequence[AnchorPose]) -> np.ndarray:
    """All-to-all relative poses, shape [N, N, 5]; r_{i->j} at row j, column i"""
    if len(anchors) == 0:
        return np.zeros((0, 0, 5))
    positions = np.stack([a.position for a in anchors]).astype(np.float64)
    headings = np.stack([a.heading for a in anchors]).astype(np.float64)

    # [j, i] -> source i, target j
    v_src = headings[None, :, :]
    v_tgt = headings[:, None, :]
    d = positions[None, :, :] - positions[:, None, :]
    dist = np.linalg.norm(d, axis=-1)

    degenerate = dist < DEGENERATE_DISTANCE
    safe = np.where(degenerate, 1.0, dist)
    sin_b = np.where(degenerate, 0.0, _cross(d, v_tgt) / safe)
    cos_b = np.where(degenerate, 1.0, _dot(d, v_tgt) / safe)

    rel = np.stack([_cross(v_src, v_tgt), _dot(v_src, v_tgt), sin_b, cos_b, dist], axis=-1)
    diag = np.arange(len(anchors))
    rel[diag, diag] = SELF_LOOP
    return rel
