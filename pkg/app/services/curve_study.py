"""Distribution of fitted trajectory coefficients per basis.

Every agent track (valid history followed by the future, when present) is taken
into its anchor frame and fitted with the monomial and the Bernstein basis over
the whole observation window. Only x-axis coefficients are reported.
"""
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from app.data.scene import AgentTrack, Scene
from app.models.bezier import fit_bezier, fit_monomial
from app.models.scene_model import build_anchor_pose_agent, to_local
from app.utils.errors import ConfigurationError, FittingError
from app.utils.report_writer import write_csv

BASES = ("monomial", "bernstein")
COLUMNS = ("basis", "order", "value")


def track_samples(agent: AgentTrack, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Local-frame positions of the valid track and their timestamps"""
    valid = agent.valid
    steps = np.flatnonzero(valid)
    points = agent.positions[valid]
    if agent.future is not None:
        history_len = agent.history.shape[0]
        steps = np.concatenate([steps, history_len + np.arange(agent.future.shape[0])])
        points = np.vstack([points, agent.future])
    return to_local(points, build_anchor_pose_agent(agent)), steps * dt


def fit_track(agent: AgentTrack, dt: float, degree: int, basis: str) -> np.ndarray:
    """[degree + 1, 2] coefficients of one track"""
    points, tau = track_samples(agent, dt)
    if basis == "bernstein":
        return fit_bezier(points, tau, degree).control_points
    if basis == "monomial":
        return fit_monomial(points, tau, degree)
    raise ConfigurationError(f"unknown basis {basis!r}, expected one of {BASES}")


def coefficient_table(scenes: Sequence[Scene], degree: int, bases: Sequence[str] = BASES) -> List[Dict]:
    rows = []
    skipped = 0
    for scene in scenes:
        for agent in scene.agents:
            for basis in bases:
                try:
                    coeffs = fit_track(agent, scene.dt, degree, basis)
                except FittingError as e:
                    logger.debug(f"skipping {scene.scenario_id}/{agent.id}: {e}")
                    skipped += 1
                    continue
                rows.extend({"basis": basis, "order": order, "value": float(value)}
                            for order, value in enumerate(coeffs[:, 0]))
    if skipped:
        logger.warning(f"{skipped} fits skipped for lack of samples")
    return rows


def coefficient_spans(rows: Sequence[Dict]) -> pd.DataFrame:
    """Empirical p95 - p5 span per basis and order"""
    frame = pd.DataFrame(list(rows), columns=list(COLUMNS))
    grouped = frame.groupby(["basis", "order"])["value"]
    return (grouped.quantile(0.95) - grouped.quantile(0.05)).rename("span").reset_index()


def run_curve_study(scenes: Sequence[Scene], degree: int, out: Union[str, Path],
                    bases: Sequence[str] = BASES) -> Path:
    rows = coefficient_table(scenes, degree, bases)
    path = write_csv(rows, out, COLUMNS)
    if rows:
        for record in coefficient_spans(rows).itertuples(index=False):
            logger.info(f"{record.basis} order {record.order}: span {record.span:.3f}")
    return path
