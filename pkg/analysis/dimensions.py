"""
Box-counting dimension estimates and closed-form dimension formulas
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from utils.errors import ParameterError
from utils.logger import setup_logger

logger = setup_logger("dimensions")

MIN_POINTS = 1000
MIN_SCALES = 4


@dataclass
class DimensionReport:
    scales: np.ndarray
    counts: np.ndarray
    slope: float
    r2: float
    intercept: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"scale": self.scales, "count": self.counts})

    def to_dict(self):
        return {
            "scales": [float(s) for s in self.scales],
            "counts": [int(c) for c in self.counts],
            "slope": self.slope,
            "r2": self.r2,
        }


def _as_xy(points) -> np.ndarray:
    pts = np.asarray(points)
    if np.iscomplexobj(pts):
        return np.column_stack([pts.real, pts.imag])
    return np.asarray(pts, dtype=float).reshape(len(pts), -1)


def box_counts(points, scales: Sequence[float]) -> np.ndarray:
    """Number of occupied boxes per scale, boxes anchored at the lower-left corner of the bounding box"""
    xy = _as_xy(points)
    lo = xy.min(axis=0)
    span = float((xy.max(axis=0) - lo).max())
    counts = []
    for s in scales:
        n_boxes = max(1, int(math.ceil(span / s)))
        idx = np.clip(np.floor((xy - lo) / s).astype(np.int64), 0, n_boxes - 1)
        counts.append(len(np.unique(idx, axis=0)))
    return np.array(counts, dtype=np.int64)


def box_dimension(
    points,
    scales: Optional[Sequence[float]] = None,
    n_scales: int = 8,
    drop_extremes: bool = True,
) -> DimensionReport:
    """
    Least-squares slope of log N(s) against log(1/s)

    Args:
        points: Complex array or (n, 2) array
        scales: Box sizes; defaults to span / 2^k for k = 1..n_scales
        n_scales (int): Number of default scales
        drop_extremes (bool): Leave the largest and smallest scale out of the fit

    Returns:
        DimensionReport with all per-scale counts
    """
    xy = _as_xy(points)
    if len(xy) < MIN_POINTS:
        raise ParameterError(f"box counting needs at least {MIN_POINTS} points, got {len(xy)}")
    span = float((xy.max(axis=0) - xy.min(axis=0)).max())
    if span <= 0:
        raise ParameterError("point set has zero extent")
    if scales is None:
        scales = span / 2.0 ** np.arange(1, n_scales + 1)
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    if len(scales) < MIN_SCALES or np.any(scales <= 0) or len(np.unique(scales)) != len(scales):
        raise ParameterError(f"need at least {MIN_SCALES} distinct positive scales")
    if scales[0] / scales[-1] < 4.0:
        raise ParameterError("scales must span at least two octaves")

    counts = box_counts(xy, scales)
    fit = slice(1, -1) if drop_extremes else slice(None)
    res = stats.linregress(np.log(1.0 / scales[fit]), np.log(counts[fit]))
    logger.debug(f"box dimension {res.slope:.4f} (r2={res.rvalue ** 2:.4f}) over {len(scales)} scales")
    return DimensionReport(
        scales=scales,
        counts=counts,
        slope=float(res.slope),
        r2=float(res.rvalue**2),
        intercept=float(res.intercept),
    )


def sle_dimension(kappa: float) -> float:
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    return min(1.0 + kappa / 8.0, 2.0)


def critical_angle(kappa: float) -> float:
    """Largest angle gap at which two flow lines can still touch"""
    if not 0 < kappa < 4:
        raise ParameterError(f"critical angle needs kappa in (0, 4), got {kappa}")
    return math.pi * kappa / (4.0 - kappa)


def intersection_dimension(kappa: float, delta_theta: float) -> float:
    """Dimension of the intersection of two flow lines with angle gap delta_theta"""
    theta_c = critical_angle(kappa)
    if not 0.0 <= delta_theta <= theta_c:
        raise ParameterError(f"angle gap must lie in [0, {theta_c}], got {delta_theta}")
    rho = delta_theta * (2.0 - kappa / 2.0) / math.pi - 2.0
    return 2.0 - (rho + kappa / 2.0 + 2.0) * (rho - kappa / 2.0 + 6.0) / (2.0 * kappa)


def boundary_dimension(kappa: float, rho: float) -> float:
    """Dimension of the intersection of an SLE_kappa(rho) curve with the boundary"""
    if not 0 < kappa < 4:
        raise ParameterError(f"kappa must lie in (0, 4), got {kappa}")
    if not -2.0 <= rho <= kappa / 2.0 - 2.0:
        raise ParameterError(f"rho must lie in [-2, {kappa / 2 - 2}], got {rho}")
    return 1.0 - (rho + 2.0) * (rho + 4.0 - kappa / 2.0) / kappa
