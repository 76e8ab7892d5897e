"""Best-of-K displacement and yaw metrics.

All functions take one agent: predictions [K, T, 2], ground truth [T, 2].
"""
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.models.bezier import yaw_from_velocity


@dataclass(frozen=True)
class MetricReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    brier_min_fde: float
    min_aye: float
    min_fye: float
    num_agents: int
    k: int

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def displacement_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Euclidean error per mode and step, [K, T]"""
    return np.linalg.norm(np.asarray(pred) - np.asarray(gt)[None], axis=-1)


def min_ade(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(displacement_errors(pred, gt).mean(axis=1).min())


def min_fde(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(displacement_errors(pred, gt)[:, -1].min())


def best_mode(pred: np.ndarray, gt: np.ndarray) -> int:
    """Index of the minFDE mode, ties to the smallest index"""
    return int(np.argmin(displacement_errors(pred, gt)[:, -1]))


def miss_rate(min_fdes: Sequence[float], threshold: Optional[float] = None) -> float:
    """Fraction of agents whose minFDE is strictly greater than the threshold"""
    threshold = settings.MISS_THRESHOLD if threshold is None else threshold
    values = np.asarray(min_fdes, dtype=np.float64)
    if values.size == 0:
        return 0.0
    return float(np.mean(values > threshold))


def brier_min_fde(pred: np.ndarray, scores: np.ndarray, gt: np.ndarray) -> float:
    """minFDE + (1 - p)^2 with p the score of the minFDE mode"""
    p = float(np.asarray(scores)[best_mode(pred, gt)])
    return min_fde(pred, gt) + (1.0 - p) ** 2


def wrap_angle(angle: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]"""
    return -(np.mod(-np.asarray(angle) + np.pi, 2.0 * np.pi) - np.pi)


def yaw_errors(pred_yaws: np.ndarray, gt_yaws: np.ndarray, mode: int) -> Tuple[float, float]:
    """(average, final) absolute wrapped yaw error in radians of one mode"""
    pred = np.asarray(pred_yaws)[mode]
    gt = np.asarray(gt_yaws)
    diff = wrap_angle(np.arctan2(pred[:, 1], pred[:, 0]) - np.arctan2(gt[:, 1], gt[:, 0]))
    errors = np.abs(diff)
    return float(errors.mean()), float(errors[-1])


def ground_truth_yaws(observed: np.ndarray, future: np.ndarray, dt: float, heading: np.ndarray,
                      threshold: Optional[float] = None) -> np.ndarray:
    """Unit yaws of a future from step differences starting at the observed position"""
    path = np.vstack([np.asarray(observed, dtype=np.float64)[None], np.asarray(future, dtype=np.float64)])
    return yaw_from_velocity(np.diff(path, axis=0) / dt, heading, threshold)


def agent_metrics(positions: np.ndarray, scores: np.ndarray, yaws: np.ndarray, gt: np.ndarray,
                  gt_yaws: np.ndarray) -> Dict[str, float]:
    """Every per-agent metric; yaw errors are taken on the minFDE mode"""
    mode = best_mode(positions, gt)
    aye, fye = yaw_errors(yaws, gt_yaws, mode)
    return {
        "min_ade": min_ade(positions, gt),
        "min_fde": min_fde(positions, gt),
        "brier_min_fde": brier_min_fde(positions, scores, gt),
        "min_aye": aye,
        "min_fye": fye,
        "best_mode": mode,
    }


def aggregate(rows: Sequence[Dict[str, float]], k: int, threshold: Optional[float] = None) -> MetricReport:
    if not rows:
        nan = float("nan")
        return MetricReport(nan, nan, nan, nan, nan, nan, 0, k)
    column = lambda key: np.array([row[key] for row in rows], dtype=np.float64)  # noqa: E731
    return MetricReport(
        min_ade=float(column("min_ade").mean()),
        min_fde=float(column("min_fde").mean()),
        miss_rate=miss_rate(column("min_fde"), threshold),
        brier_min_fde=float(column("brier_min_fde").mean()),
        min_aye=float(column("min_aye").mean()),
        min_fye=float(column("min_fye").mean()),
        num_agents=len(rows),
        k=k,
    )
