"""
Bounded metric on the closed half-plane, Hausdorff distances,
delta-closeness of flow lines and boundary coverage
"""

import math
from typing import Any, Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from fields.fan import ig_constants, rho_for_angle
from processes.loewner import LEFT, RIGHT, ForcePoint, Trace, drive_sle, loewner_trace
from utils.errors import DomainError, ParameterError
from utils.logger import setup_logger

logger = setup_logger("metrics")

NEAR_INTERSECTION_PX = 2.0
DENSIFY_SPACING = 0.5
# |phi'(i)| for phi(z) = (z - i) / (z + i)
PHI_PRIME_AT_I = 0.5

Metric = Union[str, Callable[[complex, complex], float]]


def _is_infinite(z) -> bool:
    return z is None or not np.isfinite(complex(z))


def phi(points) -> np.ndarray:
    """Cayley map of the closed half-plane onto the closed disk; infinite points go to 1"""
    z = np.atleast_1d(np.asarray(points, dtype=complex))
    finite = np.isfinite(z)
    if np.any(z[finite].imag < 0):
        raise DomainError("bounded metric is defined on the closed upper half-plane only")
    out = np.ones(z.shape, dtype=complex)
    zf = z[finite]
    out[finite] = (zf - 1j) / (zf + 1j)
    return out


def bounded_metric(z, w) -> float:
    """d(z, w) = |phi(z) - phi(w)|, with None or a non-finite value standing for infinity"""
    pz = 1.0 + 0j if _is_infinite(z) else phi(z)[0]
    pw = 1.0 + 0j if _is_infinite(w) else phi(w)[0]
    return float(abs(pz - pw))


def densify(points, max_spacing: float = DENSIFY_SPACING) -> np.ndarray:
    """Insert vertices so that consecutive polyline vertices are at most max_spacing apart"""
    pts = np.asarray(points, dtype=complex)
    if len(pts) < 2:
        return pts.copy()
    seg = np.diff(pts)
    pieces = np.maximum(1, np.ceil(np.abs(seg) / max_spacing).astype(int))
    out = [pts[:1]]
    for p, d, m in zip(pts[:-1], seg, pieces):
        out.append(p + d * (np.arange(1, m + 1) / m))
    return np.concatenate(out)


def _as_plane_points(points, include_infinity: bool = False) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    if include_infinity:
        pts = np.concatenate([pts, [complex(np.inf, 0.0)]])
    return pts


def directed_hausdorff(A, B, metric: Metric = "bounded") -> float:
    """sup over a in A of the distance from a to B"""
    a = _as_plane_points(A)
    b = _as_plane_points(B)
    if a.size == 0 or b.size == 0:
        raise ParameterError("Hausdorff distance needs non-empty point sets")
    if callable(metric):
        return float(max(min(metric(x, y) for y in b) for x in a))
    if metric == "bounded":
        a, b = phi(a), phi(b)
    elif metric != "euclidean":
        raise ParameterError(f"unknown metric {metric!r}")
    tree = cKDTree(np.column_stack([b.real, b.imag]))
    dist, _ = tree.query(np.column_stack([a.real, a.imag]))
    return float(dist.max())


def hausdorff_distance(A, B, metric: Metric = "bounded") -> float:
    """
    Hausdorff distance between two finite point sets

    Args:
        A: Complex points (non-finite entries mean infinity under the bounded metric)
        B: Complex points
        metric: "bounded", "euclidean" or a callable d(z, w)

    Returns:
        max of the two directed distances
    """
    return max(directed_hausdorff(A, B, metric), directed_hausdorff(B, A, metric))


def pixel_to_plane(points, origin: complex, unit: float) -> np.ndarray:
    """Pixel coordinates to half-plane coordinates, origin at 0 and unit pixels per unit length"""
    return (np.asarray(points, dtype=complex) - origin) / unit


def px_to_bounded(px: float, unit: float) -> float:
    """Bounded-metric size of a px-pixel displacement near i"""
    return px / unit * PHI_PRIME_AT_I


def _exit_index(points: np.ndarray, inside: np.ndarray) -> int:
    outside = np.flatnonzero(~inside)
    return int(outside[0]) if outside.size else len(points)


def _region_tests(region: np.ndarray, delta: float):
    mask = np.asarray(region, dtype=bool)
    dist = ndimage.distance_transform_edt(~mask)
    ny, nx = mask.shape

    def lookup(grid, pts):
        xs = np.rint(pts.real).astype(int)
        ys = np.rint(pts.imag).astype(int)
        ok = (xs >= 0) & (xs < nx) & (ys >= 0) & (ys < ny)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = grid[ys[ok], xs[ok]]
        return out

    return (lambda pts: lookup(mask, pts)), (lambda pts: lookup(dist < delta, pts))


def delta_close_check(
    trace0: Trace,
    trace_theta: Trace,
    region: np.ndarray,
    delta: float,
    near: float = NEAR_INTERSECTION_PX,
) -> bool:
    """
    Discrete delta-closeness of two flow lines until trace0 leaves a region

    Every vertex of trace0 inside the region must be bracketed by two
    near-intersections (closer than near pixels) inside the delta-neighbourhood,
    and the two trace stretches between the brackets must stay pairwise within delta.

    Args:
        trace0 (Trace): Reference flow line, pixel coordinates
        trace_theta (Trace): Second flow line from the same start
        region: Bool mask (ny, nx) of D
        delta (float): Closeness in pixels
        near (float): Near-intersection threshold in pixels

    Returns:
        True when the traces are delta-close
    """
    p = densify(trace0.points)
    q = densify(trace_theta.points)
    if abs(p[0] - q[0]) > 1e-9:
        raise ParameterError("traces must start at the same point")
    in_d, in_d_delta = _region_tests(region, delta)
    tau_d = _exit_index(p, in_d(p))
    tau0_dd = _exit_index(p, in_d_delta(p))
    tau_theta_dd = _exit_index(q, in_d_delta(q))

    p_live, q_live = p[:tau0_dd], q[:tau_theta_dd]
    if len(p_live) < 2 or len(q_live) < 2:
        return False
    tree = cKDTree(np.column_stack([q_live.real, q_live.imag]))
    partners = tree.query_ball_point(np.column_stack([p_live.real, p_live.imag]), r=near)
    # the shared start counts as the first near-intersection
    partners = [sorted(js) for js in partners]
    hits = np.array([i for i, js in enumerate(partners) if js], dtype=int)
    if hits.size == 0:
        return False

    cache: Dict[tuple, bool] = {}
    for t in range(1, min(tau_d, len(p) - 1)):
        k = int(np.searchsorted(hits, t))
        if k == 0 or k >= hits.size:
            return False
        i1 = int(hits[k - 1])
        if hits[k] != t:
            i2 = int(hits[k])
        elif k + 1 < hits.size:
            i2 = int(hits[k + 1])
        else:
            return False
        key = (i1, i2)
        if key not in cache:
            cache[key] = _bracket_ok(p, q, i1, i2, partners[i1], partners[i2], delta)
        if not cache[key]:
            return False
    return True


def _bracket_ok(p, q, i1, i2, part1, part2, delta) -> bool:
    best = None
    for j1 in part1:
        k = int(np.searchsorted(part2, j1, side="right"))
        if k < len(part2):
            j2 = part2[k]
            if best is None or j2 - j1 < best[1] - best[0]:
                best = (j1, j2)
    if best is None:
        return False
    a = p[i1 : i2 + 1]
    b = q[best[0] : best[1] + 1]
    d = cdist(np.column_stack([a.real, a.imag]), np.column_stack([b.real, b.imag]))
    return bool(d.max() < delta)


def disk_region(shape, center: complex, radius: float) -> np.ndarray:
    """Bool mask of a disk in pixel coordinates"""
    ny, nx = shape
    yy, xx = np.mgrid[0:ny, 0:nx]
    return (xx - center.real) ** 2 + (yy - center.imag) ** 2 < radius**2


def segment_covered(points, R: float, delta0: float, boundary_tol: float) -> bool:
    """Whether every grid point of [0, R] has a boundary point of the curve in [0, R] within delta0"""
    pts = np.asarray(points, dtype=complex)
    on_axis = pts[(np.abs(pts.imag) <= boundary_tol) & (pts.real >= 0) & (pts.real <= R)].real
    if on_axis.size == 0:
        return False
    grid = np.linspace(0.0, R, max(2, int(math.ceil(2.0 * R / delta0)) + 1))
    on_axis = np.sort(on_axis)
    k = np.clip(np.searchsorted(on_axis, grid), 1, max(on_axis.size - 1, 1))
    left = on_axis[np.maximum(k - 1, 0)]
    right = on_axis[np.minimum(k, on_axis.size - 1)]
    gap = np.minimum(np.abs(grid - left), np.abs(grid - right))
    return bool(np.all(gap <= delta0))


def coverage_stats(
    kappa: float,
    a: float,
    b: float,
    theta_list: Sequence[float],
    R: float,
    delta0: float,
    n: int,
    dt: float,
    rng: np.random.Generator,
    T: Optional[float] = None,
    boundary_tol: Optional[float] = None,
) -> Dict[str, Any]:
    """
    Fraction of SLE_kappa(rho1; rho2) traces that come within delta0 of every point of [0, R]

    Args:
        kappa (float): SLE parameter
        a (float): Left boundary value
        b (float): Right boundary value
        theta_list: Angles inside the admissible range
        R (float): Segment length
        delta0 (float): Coverage radius
        n (int): Runs per angle
        dt (float): Loewner step
        rng: numpy Generator
        T (float): Horizon, defaults to R
        boundary_tol (float): Height below which a trace point counts as on the axis

    Returns:
        Dict with per-angle fractions and standard errors
    """
    if not R > 0 or not delta0 > 0:
        raise ParameterError("R and delta0 must be positive")
    params = ig_constants(kappa, a, b)
    horizon = R if T is None else T
    tol = 2.0 * math.sqrt(kappa * dt) if boundary_tol is None else boundary_tol
    rows = []
    for theta in theta_list:
        rho1, rho2 = rho_for_angle(params, theta)
        covered = 0
        for _ in range(n):
            path = drive_sle(kappa, [ForcePoint(LEFT, 0.0, rho1), ForcePoint(RIGHT, 0.0, rho2)], horizon, dt, rng)
            if segment_covered(loewner_trace(path).points, R, delta0, tol):
                covered += 1
        frac = covered / n
        rows.append(
            {"theta": theta, "rho1": rho1, "rho2": rho2, "coverage": frac, "se": math.sqrt(frac * (1 - frac) / n)}
        )
        logger.debug(f"coverage theta={theta:.4g}: {frac:.3f}")
    return {"R": R, "delta0": delta0, "boundary_tol": tol, "n": n, "angles": rows}
