"""Bernstein-basis curve math.

A degree-n Bezier curve over real time tau in [0, tau_max] is

    f(tau) = sum_i C(n, i) t^i (1 - t)^(n - i) p_i,   t = tau / tau_max

Its derivative is again a Bezier curve (hodograph) with control points
n (p_{i+1} - p_i) / tau_max.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from app.config import settings
from app.utils.errors import DomainError, FittingError

DOMAIN_SLACK = 1e-12


def binomial(n: int, i: int) -> float:
    """C(n, i) by multiplicative recurrence"""
    if i < 0 or i > n:
        return 0.0
    i = min(i, n - i)
    value = 1.0
    for k in range(1, i + 1):
        value = value * (n - i + k) / k
    return value


def _check_unit_interval(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < -DOMAIN_SLACK) or np.any(t > 1.0 + DOMAIN_SLACK) or not np.all(np.isfinite(t)):
        raise DomainError("normalized time must lie in [0, 1]")
    return np.clip(t, 0.0, 1.0)


def bernstein_basis(n: int, t: float) -> np.ndarray:
    """Weights b_n^i(t) for i = 0..n"""
    return basis_matrix(n, np.array([t]))[0]


def basis_matrix(n: int, t: Sequence[float]) -> np.ndarray:
    """B[s, i] = b_n^i(t_s), shape [T, n + 1]"""
    if n < 0:
        raise DomainError(f"degree must be >= 0, got {n}")
    t = _check_unit_interval(t)[:, None]
    i = np.arange(n + 1)[None, :]
    coeffs = np.array([binomial(n, k) for k in range(n + 1)])[None, :]
    return coeffs * t**i * (1.0 - t) ** (n - i)


def monomial_matrix(n: int, t: Sequence[float]) -> np.ndarray:
    """M[s, i] = t_s^i, shape [T, n + 1]"""
    t = _check_unit_interval(t)[:, None]
    return t ** np.arange(n + 1)[None, :]


def monomial_derivative_matrix(n: int, t: Sequence[float], tau_max: float) -> np.ndarray:
    """d/dtau of the monomial basis: i t^(i-1) / tau_max"""
    t = _check_unit_interval(t)[:, None]
    i = np.arange(n + 1)[None, :]
    return np.where(i > 0, i * t ** np.maximum(i - 1, 0), 0.0) / tau_max


def sample_times(horizon: int) -> np.ndarray:
    """Normalized future sample times s / T for s = 1..T"""
    return np.arange(1, horizon + 1, dtype=np.float64) / horizon


@dataclass(frozen=True)
class BezierCurve:
    control_points: np.ndarray
    tau_max: float = 1.0

    def __post_init__(self):
        points = np.asarray(self.control_points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] < 1:
            raise DomainError("control points must be a non-empty [n + 1, dim] array")
        if not self.tau_max > 0:
            raise DomainError(f"tau_max must be > 0, got {self.tau_max}")
        object.__setattr__(self, "control_points", points)

    @property
    def degree(self) -> int:
        return self.control_points.shape[0] - 1

    def normalized(self, timestamps: Sequence[float]) -> np.ndarray:
        tau = np.asarray(timestamps, dtype=np.float64)
        if np.any(tau < -DOMAIN_SLACK) or np.any(tau > self.tau_max * (1.0 + DOMAIN_SLACK)):
            raise DomainError(f"timestamps must lie in [0, {self.tau_max}]")
        return np.clip(tau / self.tau_max, 0.0, 1.0)


def evaluate_positions(curve: BezierCurve, timestamps: Sequence[float]) -> np.ndarray:
    """Y = B P for the given real timestamps, shape [T, dim]"""
    return basis_matrix(curve.degree, curve.normalized(timestamps)) @ curve.control_points


def derivative_curve(curve: BezierCurve, order: int = 1) -> BezierCurve:
    """k-th derivative with respect to real time, a curve of degree n - k"""
    if order < 0 or order > curve.degree:
        raise DomainError(f"derivative order {order} exceeds degree {curve.degree}")
    points = curve.control_points
    for _ in range(order):
        n = points.shape[0] - 1
        points = n * np.diff(points, axis=0) / curve.tau_max
    return BezierCurve(points, curve.tau_max)


def yaw_from_velocity(velocities: np.ndarray, anchor_heading: Sequence[float],
                      threshold: Optional[float] = None) -> np.ndarray:
    """Unit tangent per step; below the speed threshold the previous yaw is carried.

    The first step falls back to the anchor heading.
    """
    threshold = settings.LOW_SPEED_THRESHOLD if threshold is None else threshold
    velocities = np.asarray(velocities, dtype=np.float64)
    yaws = np.empty_like(velocities)
    previous = np.asarray(anchor_heading, dtype=np.float64)
    for s, vel in enumerate(velocities):
        speed = np.hypot(vel[0], vel[1])
        if speed >= threshold:
            previous = vel / speed
        yaws[s] = previous
    return yaws


def _least_squares(design: np.ndarray, points: np.ndarray) -> np.ndarray:
    if design.shape[0] < design.shape[1]:
        raise FittingError(f"need at least {design.shape[1]} samples, got {design.shape[0]}")
    solution, _, rank, _ = scipy.linalg.lstsq(design, points)
    if rank < design.shape[1]:
        raise FittingError(f"design matrix is rank deficient (rank {rank} < {design.shape[1]})")
    return solution


def _fit_inputs(points, timestamps, tau_max):
    points = np.asarray(points, dtype=np.float64)
    tau = np.asarray(timestamps, dtype=np.float64)
    if points.shape[0] != tau.shape[0]:
        raise DomainError("points and timestamps differ in length")
    tau_max = float(tau.max()) if tau_max is None else float(tau_max)
    if not tau_max > 0:
        raise DomainError("tau_max must be > 0")
    return points, tau / tau_max, tau_max


def fit_bezier(points: np.ndarray, timestamps: Sequence[float], degree: int,
               tau_max: Optional[float] = None) -> BezierCurve:
    """Least-squares control points against the Bernstein basis"""
    points, t, tau_max = _fit_inputs(points, timestamps, tau_max)
    return BezierCurve(_least_squares(basis_matrix(degree, t), points), tau_max)


def fit_monomial(points: np.ndarray, timestamps: Sequence[float], degree: int,
                 tau_max: Optional[float] = None) -> np.ndarray:
    """Least-squares coefficients c_0..c_n of sum_i c_i t^i in normalized time"""
    points, t, _ = _fit_inputs(points, timestamps, tau_max)
    return _least_squares(monomial_matrix(degree, t), points)
