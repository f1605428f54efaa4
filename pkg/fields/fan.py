"""
Imaginary-geometry constants, admissible angles and fan construction
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy import ndimage

from fields.gff import LatticeField, TracerConfig, smooth_field, trace_flow_line
from processes.loewner import Trace
from utils.errors import ImaginaryGeometryError, NumericalError, ParameterError
from utils.logger import setup_logger

logger = setup_logger("fan")

ANGLE_TOL = 1e-12


@dataclass(frozen=True)
class ImaginaryGeometryParams:
    kappa: float
    a: float = 0.0
    b: float = 0.0
    lam: float = field(init=False)
    chi: float = field(init=False)
    kappa_prime: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.kappa < 4:
            raise ParameterError(f"kappa must lie in (0, 4), got {self.kappa}")
        root = math.sqrt(self.kappa)
        object.__setattr__(self, "lam", math.pi / root)
        object.__setattr__(self, "chi", 2.0 / root - root / 2.0)
        object.__setattr__(self, "kappa_prime", 16.0 / self.kappa)

    def to_dict(self) -> Dict[str, float]:
        return {
            "kappa": self.kappa,
            "a": self.a,
            "b": self.b,
            "lambda": self.lam,
            "chi": self.chi,
            "kappa_prime": self.kappa_prime,
        }


@dataclass
class FanSet:
    raster: np.ndarray
    traces: List[Tuple[float, Trace]]
    params: ImaginaryGeometryParams
    angle_grid: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def origin(self) -> complex:
        return self.meta.get("origin", complex((self.raster.shape[1] - 1) / 2.0, 0.0))


def ig_constants(kappa: float, a: float = 0.0, b: float = 0.0) -> ImaginaryGeometryParams:
    return ImaginaryGeometryParams(kappa=kappa, a=a, b=b)


def admissible_angle_range(params: ImaginaryGeometryParams) -> Tuple[float, float]:
    """
    Angles for which flow lines from the origin exist with boundary data (-a, b)

    Returns:
        (theta_min, theta_max); theta_min is the positive real axis, theta_max the negative one
    """
    if params.a + params.b <= -2.0 * params.lam:
        raise ParameterError(f"empty angle range: a + b = {params.a + params.b} <= -2 lambda")
    return -(params.lam + params.b) / params.chi, (params.a + params.lam) / params.chi


def _check_angle(params: ImaginaryGeometryParams, theta: float) -> Tuple[float, float]:
    lo, hi = admissible_angle_range(params)
    if theta < lo - ANGLE_TOL or theta > hi + ANGLE_TOL:
        raise ParameterError(f"angle {theta} outside admissible range [{lo}, {hi}]")
    return lo, hi


def rho_for_angle(params: ImaginaryGeometryParams, theta: float) -> Tuple[float, float]:
    """Force-point weights (rho1 at 0-, rho2 at 0+) of the angle-theta flow line"""
    _check_angle(params, theta)
    rho1 = -1.0 + (params.a - theta * params.chi) / params.lam
    rho2 = -1.0 + (params.b + theta * params.chi) / params.lam
    return rho1, rho2


def angle_for_rho2(params: ImaginaryGeometryParams, rho2: float) -> float:
    return ((rho2 + 1.0) * params.lam - params.b) / params.chi


def _bresenham(x0: int, y0: int, x1: int, y1: int) -> Tuple[np.ndarray, np.ndarray]:
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    xs, ys = [], []
    while True:
        xs.append(x0)
        ys.append(y0)
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return np.array(xs), np.array(ys)


def rasterize_points(points: np.ndarray, shape: Tuple[int, int], thickness: int = 1) -> Tuple[np.ndarray, int]:
    """
    Rasterize a polyline given in pixel coordinates

    Returns:
        (bool grid of the given (ny, nx) shape, number of clipped vertices)
    """
    if thickness < 1:
        raise ParameterError(f"thickness must be >= 1, got {thickness}")
    ny, nx = shape
    grid = np.zeros(shape, dtype=bool)
    pts = np.asarray(points, dtype=complex)
    if pts.size == 0:
        return grid, 0
    xs = np.rint(pts.real).astype(int)
    ys = np.rint(pts.imag).astype(int)
    outside = (xs < 0) | (xs >= nx) | (ys < 0) | (ys >= ny)
    xs = np.clip(xs, 0, nx - 1)
    ys = np.clip(ys, 0, ny - 1)
    grid[ys[0], xs[0]] = True
    for i in range(1, len(xs)):
        lx, ly = _bresenham(xs[i - 1], ys[i - 1], xs[i], ys[i])
        grid[ly, lx] = True
    if thickness > 1:
        grid = ndimage.binary_dilation(grid, structure=np.ones((3, 3), dtype=bool), iterations=thickness - 1)
    return grid, int(outside.sum())


def rasterize(trace: Trace, shape: Tuple[int, int], thickness: int = 1) -> np.ndarray:
    """Bresenham rasterization of a trace into an 8-connected pixel chain"""
    grid, clipped = rasterize_points(trace.points, shape, thickness)
    if clipped:
        logger.warning(f"{clipped} trace vertices outside the {shape[1]}x{shape[0]} grid were clipped")
    return grid


def boundary_ray(origin: complex, nx: int, toward_right: bool, theta: float) -> Trace:
    """Endpoint flow line: the real-axis segment from the origin to a corner"""
    end = complex(nx - 1, 0.0) if toward_right else 0j
    points = np.array([origin, end], dtype=complex)
    return Trace(
        points=points,
        times=np.array([0.0, abs(end - origin)]),
        meta={"origin": origin, "theta": theta, "status": "boundary", "length": abs(end - origin), "endpoint": True},
    )


def trace_angle(field: LatticeField, params: ImaginaryGeometryParams, theta: float, config: TracerConfig) -> Trace:
    """One fan member: a boundary ray at the range endpoints, a traced flow line otherwise"""
    lo, hi = _check_angle(params, theta)
    origin = field.origin
    if abs(theta - lo) <= ANGLE_TOL:
        return boundary_ray(origin, field.nx, True, theta)
    if abs(theta - hi) <= ANGLE_TOL:
        return boundary_ray(origin, field.nx, False, theta)
    start = origin + 1j * config.start_offset
    try:
        trace = trace_flow_line(
            field,
            start,
            theta,
            params.chi,
            step=config.step,
            max_len=config.max_len,
            trap_radius=config.trap_radius,
            trap_angle_deg=config.trap_angle_deg,
        )
    except ImaginaryGeometryError as e:
        logger.error(f"Failed to trace flow line at angle {theta:.6g}: {e}")
        raise type(e)(f"angle {theta:.6g}: {e}") from e
    except (FloatingPointError, ValueError) as e:
        logger.error(f"Failed to trace flow line at angle {theta:.6g}: {e}")
        raise NumericalError(f"angle {theta:.6g}: {e}") from e
    # keep the origin as the first vertex so every fan member starts on the real line
    trace.points = np.concatenate([[origin], trace.points])
    trace.times = np.concatenate([[0.0], trace.times + config.start_offset])
    trace.meta["origin"] = origin
    return trace


def build_fan(
    field: LatticeField,
    params: ImaginaryGeometryParams,
    theta1: float,
    theta2: float,
    n_angles: int,
    config: TracerConfig = TracerConfig(),
    thickness: int = 1,
    smooth: bool = True,
) -> FanSet:
    """
    Trace flow lines on a uniform angle grid over one field and rasterize the union

    Args:
        field (LatticeField): Raw field sample with fan boundary data
        params (ImaginaryGeometryParams): Constants and boundary values
        theta1 (float): Lowest angle
        theta2 (float): Highest angle
        n_angles (int): Number of grid angles, >= 2
        config (TracerConfig): Tracer settings
        thickness (int): Raster line thickness
        smooth (bool): Mollify the field with config.smoothing_radius first

    Returns:
        FanSet with per-angle traces sorted by angle
    """
    if n_angles < 2:
        raise ParameterError(f"n_angles must be >= 2, got {n_angles}")
    if not theta1 < theta2:
        raise ParameterError(f"need theta1 < theta2, got {theta1}, {theta2}")
    _check_angle(params, theta1)
    _check_angle(params, theta2)

    work = smooth_field(field, config.smoothing_radius) if smooth else field
    angles = np.linspace(theta1, theta2, n_angles)
    shape = (field.ny, field.nx)
    raster = np.zeros(shape, dtype=bool)
    traces: List[Tuple[float, Trace]] = []
    clipped = 0
    statuses: Dict[str, int] = {}
    for theta in angles:
        trace = trace_angle(work, params, float(theta), config)
        grid, n_clip = rasterize_points(trace.points, shape, thickness)
        raster |= grid
        clipped += n_clip
        statuses[trace.meta["status"]] = statuses.get(trace.meta["status"], 0) + 1
        traces.append((float(theta), trace))

    if clipped:
        logger.warning(f"{clipped} fan vertices were clipped to the grid")
    logger.debug(f"fan over [{theta1:.4g}, {theta2:.4g}] with {n_angles} angles: statuses {statuses}")
    return FanSet(
        raster=raster,
        traces=traces,
        params=params,
        angle_grid=angles,
        meta={
            "origin": field.origin,
            "clipped": clipped,
            "statuses": statuses,
            "smoothing_radius": config.smoothing_radius if smooth else 0.0,
            "thickness": thickness,
        },
    )
