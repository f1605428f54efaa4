"""
Discrete Gaussian free field on a rectangle - Dirichlet boundary data,
harmonic extension, sine-basis sampling, smoothing and the flow-line tracer
"""

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import fft, ndimage

from processes.loewner import Trace
from utils.errors import ParameterError
from utils.logger import setup_logger

logger = setup_logger("gff")

SIDES = ("bottom", "top", "left", "right")
# Covariance is 2*pi times the inverse of the 5-point Laplacian (4 on the diagonal)
GFF_NORMALIZATION = 2.0 * math.pi
DEFAULT_SMOOTHING_RADIUS = 1.5
START_OFFSET = 2.0


@dataclass(frozen=True)
class BoundaryPiece:
    """
    Constant (or linearly varying) data on a fraction [start, stop) of one side

    Bottom and top run left to right and include the corners; left and right
    run bottom to top and exclude them. A piece ending at 1 also covers the
    node at fraction 1.
    """

    side: str
    start: float
    stop: float
    value: float
    end_value: Optional[float] = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise ParameterError(f"unknown boundary side {self.side!r}")
        if not 0.0 <= self.start < self.stop <= 1.0:
            raise ParameterError(f"boundary arc must satisfy 0 <= start < stop <= 1, got {self.start}, {self.stop}")
        if not math.isfinite(self.value) or (self.end_value is not None and not math.isfinite(self.end_value)):
            raise ParameterError("boundary values must be finite")

    def covers(self, frac: np.ndarray) -> np.ndarray:
        upper = (frac < self.stop) | ((self.stop == 1.0) & (frac == 1.0))
        return (frac >= self.start) & upper

    def evaluate(self, frac: np.ndarray) -> np.ndarray:
        if self.end_value is None:
            return np.full(frac.shape, self.value)
        s = (frac - self.start) / (self.stop - self.start)
        return self.value + (self.end_value - self.value) * s

    def to_dict(self) -> Dict[str, Any]:
        return {
            "side": self.side,
            "start": self.start,
            "stop": self.stop,
            "value": self.value,
            "end_value": self.end_value,
        }


@dataclass(frozen=True)
class BoundarySpec:
    pieces: Tuple[BoundaryPiece, ...]

    @classmethod
    def constant(cls, value: float) -> "BoundarySpec":
        return cls(tuple(BoundaryPiece(side, 0.0, 1.0, value) for side in SIDES))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoundarySpec":
        return cls(tuple(BoundaryPiece(**p) for p in data["pieces"]))

    def to_dict(self) -> Dict[str, Any]:
        return {"pieces": [p.to_dict() for p in self.pieces]}

    def shifted(self, c: float) -> "BoundarySpec":
        return BoundarySpec(
            tuple(
                BoundaryPiece(p.side, p.start, p.stop, p.value + c, None if p.end_value is None else p.end_value + c)
                for p in self.pieces
            )
        )

    def render(self, nx: int, ny: int) -> np.ndarray:
        """
        Write the boundary data into an (ny, nx) array with zero interior

        Raises:
            ParameterError: if the pieces do not cover every boundary node exactly once
        """
        grid = np.zeros((ny, nx))
        fx = np.arange(nx) / (nx - 1)
        fy = np.arange(1, ny - 1) / (ny - 1)
        nodes = {
            "bottom": (fx, (0, slice(None))),
            "top": (fx, (ny - 1, slice(None))),
            "left": (fy, (slice(1, ny - 1), 0)),
            "right": (fy, (slice(1, ny - 1), nx - 1)),
        }
        for side, (frac, index) in nodes.items():
            hits = np.zeros(frac.shape, dtype=int)
            values = np.zeros(frac.shape)
            for piece in self.pieces:
                if piece.side != side:
                    continue
                mask = piece.covers(frac)
                hits += mask
                values[mask] = piece.evaluate(frac[mask])
            if np.any(hits != 1):
                bad = int(np.sum(hits != 1))
                raise ParameterError(
                    f"boundary pieces do not partition the {side} side ({bad} nodes uncovered or doubly covered)"
                )
            grid[index] = values
        return grid


@dataclass
class LatticeField:
    """Field values on an (ny, nx) grid; row 0 is the real axis, column 0 the left wall"""

    nx: int
    ny: int
    values: np.ndarray
    boundary: BoundarySpec
    spacing: float = 1.0
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def origin(self) -> complex:
        """Marked boundary point: bottom centre, in pixel coordinates"""
        return complex((self.nx - 1) / 2.0, 0.0)

    def shifted(self, c: float) -> "LatticeField":
        return LatticeField(self.nx, self.ny, self.values + c, self.boundary.shifted(c), self.spacing, dict(self.meta))

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at complex pixel coordinates x + iy"""
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        return ndimage.map_coordinates(self.values, [pts.imag, pts.real], order=1, mode="nearest")

    def to_bytes(self) -> bytes:
        header = {
            "nx": self.nx,
            "ny": self.ny,
            "spacing": self.spacing,
            "dtype": "<f8",
            "boundary": self.boundary.to_dict(),
            "meta": self.meta,
        }
        return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LatticeField":
        head, _, body = data.partition(b"\n")
        header = json.loads(head.decode("utf-8"))
        values = np.frombuffer(body, dtype="<f8").reshape(header["ny"], header["nx"]).copy()
        return cls(
            nx=header["nx"],
            ny=header["ny"],
            values=values,
            boundary=BoundarySpec.from_dict(header["boundary"]),
            spacing=header["spacing"],
            meta=header.get("meta", {}),
        )


@dataclass(frozen=True)
class TracerConfig:
    step: float = 0.5
    max_len: Optional[float] = None
    smoothing_radius: float = DEFAULT_SMOOTHING_RADIUS
    start_offset: float = START_OFFSET
    trap_radius: float = 1.0
    trap_angle_deg: float = 170.0

    def __post_init__(self):
        if not self.step > 0:
            raise ParameterError(f"tracer step must be positive, got {self.step}")
        if self.smoothing_radius < 0:
            raise ParameterError("smoothing radius must be non-negative")


def _check_dims(nx: int, ny: int) -> None:
    if nx < 3 or ny < 3:
        raise ParameterError(f"grid must be at least 3x3, got {nx}x{ny}")


def _laplacian_eigenvalues(my: int, mx: int) -> np.ndarray:
    p = np.arange(1, my + 1)[:, None]
    q = np.arange(1, mx + 1)[None, :]
    return 4.0 - 2.0 * np.cos(np.pi * p / (my + 1)) - 2.0 * np.cos(np.pi * q / (mx + 1))


def laplacian_residual(values: np.ndarray) -> float:
    """Max abs 5-point Laplacian over interior nodes"""
    lap = 4.0 * values[1:-1, 1:-1] - values[:-2, 1:-1] - values[2:, 1:-1] - values[1:-1, :-2] - values[1:-1, 2:]
    return float(np.abs(lap).max()) if lap.size else 0.0


def harmonic_extension(nx: int, ny: int, boundary: BoundarySpec, spacing: float = 1.0) -> LatticeField:
    """
    Discrete harmonic function with the given Dirichlet data

    The interior system is diagonal in the type-I sine basis, so one forward and
    one inverse DST solve it exactly.

    Args:
        nx (int): Columns
        ny (int): Rows
        boundary (BoundarySpec): Dirichlet data
        spacing (float): Physical grid spacing (metadata only)

    Returns:
        LatticeField holding the mean field
    """
    _check_dims(nx, ny)
    grid = boundary.render(nx, ny)
    rhs = np.zeros((ny - 2, nx - 2))
    rhs[0, :] += grid[0, 1:-1]
    rhs[-1, :] += grid[-1, 1:-1]
    rhs[:, 0] += grid[1:-1, 0]
    rhs[:, -1] += grid[1:-1, -1]
    coeffs = fft.dstn(rhs, type=1, norm="ortho") / _laplacian_eigenvalues(ny - 2, nx - 2)
    grid[1:-1, 1:-1] = fft.idstn(coeffs, type=1, norm="ortho")
    logger.debug(f"harmonic extension {nx}x{ny}: residual {laplacian_residual(grid):.2e}")
    return LatticeField(nx=nx, ny=ny, values=grid, boundary=boundary, spacing=spacing)


def sample_dgff(
    nx: int, ny: int, boundary: BoundarySpec, rng: np.random.Generator, spacing: float = 1.0
) -> LatticeField:
    """
    Zero-boundary discrete GFF plus the harmonic extension of the boundary data

    Args:
        nx (int): Columns
        ny (int): Rows
        boundary (BoundarySpec): Dirichlet data
        rng: numpy Generator
        spacing (float): Physical grid spacing (metadata only)

    Returns:
        LatticeField sample
    """
    mean = harmonic_extension(nx, ny, boundary, spacing)
    xi = rng.standard_normal((ny - 2, nx - 2))
    coeffs = xi / np.sqrt(_laplacian_eigenvalues(ny - 2, nx - 2))
    values = mean.values.copy()
    values[1:-1, 1:-1] += math.sqrt(GFF_NORMALIZATION) * fft.idstn(coeffs, type=1, norm="ortho")
    meta = {"normalization": GFF_NORMALIZATION}
    return LatticeField(nx=nx, ny=ny, values=values, boundary=boundary, spacing=spacing, meta=meta)


def smooth_field(field: LatticeField, radius: float) -> LatticeField:
    """Gaussian mollification with reflective padding; boundary data is restored afterwards"""
    if radius < 0:
        raise ParameterError(f"smoothing radius must be non-negative, got {radius}")
    meta = dict(field.meta, smoothing_radius=radius)
    if radius == 0:
        return LatticeField(field.nx, field.ny, field.values.copy(), field.boundary, field.spacing, meta)
    values = ndimage.gaussian_filter(field.values, sigma=radius, mode="reflect")
    rendered = field.boundary.render(field.nx, field.ny)
    values[0, :], values[-1, :] = rendered[0, :], rendered[-1, :]
    values[:, 0], values[:, -1] = rendered[:, 0], rendered[:, -1]
    return LatticeField(field.nx, field.ny, values, field.boundary, field.spacing, meta)


def fan_boundary(params, nx: int, ny: int) -> BoundarySpec:
    """
    Window boundary data for a fan: -a left of the origin, b right of it

    The top edge interpolates linearly between the two walls. Everything is
    shifted by chi * pi / 2 so that the tracer's angle-0 line heads north.
    """
    shift = params.chi * math.pi / 2.0
    left, right = -params.a + shift, params.b + shift
    return BoundarySpec(
        (
            BoundaryPiece("bottom", 0.0, 0.5, left),
            BoundaryPiece("bottom", 0.5, 1.0, right),
            BoundaryPiece("left", 0.0, 1.0, left),
            BoundaryPiece("right", 0.0, 1.0, right),
            BoundaryPiece("top", 0.0, 1.0, left, end_value=right),
        )
    )


def _inside(p: complex, nx: int, ny: int) -> bool:
    return 0.0 <= p.real <= nx - 1 and 0.0 <= p.imag <= ny - 1


def _clip_to_box(p: complex, q: complex, nx: int, ny: int) -> complex:
    """Last point of the segment p -> q inside the grid box"""
    s = 1.0
    d = q - p
    for value, delta, lo, hi in ((p.real, d.real, 0.0, nx - 1.0), (p.imag, d.imag, 0.0, ny - 1.0)):
        if delta > 0 and value + delta > hi:
            s = min(s, (hi - value) / delta)
        elif delta < 0 and value + delta < lo:
            s = min(s, (lo - value) / delta)
    return p + max(s, 0.0) * d


def trace_flow_line(
    field: LatticeField,
    start: complex,
    theta: float,
    chi: float,
    step: float = 0.5,
    max_len: Optional[float] = None,
    trap_radius: float = 1.0,
    trap_angle_deg: float = 170.0,
) -> Trace:
    """
    Integrate eta' = exp(i (h(eta) / chi + theta)) with the midpoint rule

    Stops when the curve reaches the grid boundary, after max_len of arc length,
    or when it comes back within trap_radius of an earlier point while heading
    the opposite way (more than trap_angle_deg apart).

    Args:
        field (LatticeField): Usually a smoothed sample
        start (complex): Pixel coordinates strictly inside the grid
        theta (float): Angle
        chi (float): Imaginary-geometry constant, nonzero
        step (float): Arc length per step in pixels
        max_len (float): Length cap, defaults to 4 (nx + ny)
        trap_radius (float): Revisit radius in pixels
        trap_angle_deg (float): Heading reversal threshold

    Returns:
        Trace in pixel coordinates with meta["status"] in {"boundary", "max_len", "trapped"}
    """
    if chi == 0:
        raise ParameterError("chi = 0 (kappa = 4) is not supported by the tracer")
    start = complex(start)
    nx, ny = field.nx, field.ny
    if not (0 < start.real < nx - 1 and 0 < start.imag < ny - 1):
        raise ParameterError(f"start {start} must lie strictly inside the {nx}x{ny} grid")
    limit = 4.0 * (nx + ny) if max_len is None else max_len
    cos_trap = math.cos(math.radians(trap_angle_deg))
    recent = int(math.ceil(2.0 * trap_radius / step)) + 1

    def direction(p: complex) -> complex:
        return complex(np.exp(1j * (field.interpolate(p)[0] / chi + theta)))

    points: List[complex] = [start]
    headings: List[complex] = []
    cells: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    length = 0.0
    status = "max_len"
    p = start
    while length < limit - 1e-12:
        d1 = direction(p)
        mid = p + 0.5 * step * d1
        d2 = direction(mid) if _inside(mid, nx, ny) else d1
        q = p + step * d2
        if not _inside(q, nx, ny):
            q = _clip_to_box(p, q, nx, ny)
            length += abs(q - p)
            points.append(q)
            status = "boundary"
            break

        cx, cy = int(math.floor(q.real)), int(math.floor(q.imag))
        trapped = False
        for i in range(cx - 1, cx + 2):
            for j in range(cy - 1, cy + 2):
                for idx in cells.get((i, j), ()):
                    if idx >= len(points) - recent:
                        continue
                    if abs(points[idx] - q) < trap_radius:
                        cos_diff = (headings[idx - 1] * d2.conjugate()).real if idx > 0 else 1.0
                        if cos_diff < cos_trap:
                            trapped = True
        points.append(q)
        headings.append(d2)
        cells[(cx, cy)].append(len(points) - 1)
        length += step
        p = q
        if trapped:
            status = "trapped"
            break

    if status == "trapped":
        logger.debug(f"flow line theta={theta:.4g} trapped after length {length:.1f}")
    pts = np.array(points, dtype=complex)
    return Trace(
        points=pts,
        times=np.concatenate([[0.0], np.cumsum(np.abs(np.diff(pts)))]),
        meta={"origin": start, "theta": theta, "status": status, "length": length},
    )
