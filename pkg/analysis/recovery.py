"""
Recovering single flow lines from a fan raster, reversal statistics
under z -> -1/z and the Hausdorff ladder toward the real axis
"""

import math
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage, stats
from scipy.spatial import cKDTree

from analysis.metrics import densify, hausdorff_distance, pixel_to_plane
from fields.fan import (
    ANGLE_TOL,
    FanSet,
    ImaginaryGeometryParams,
    admissible_angle_range,
    build_fan,
    ig_constants,
    rasterize_points,
    trace_angle,
)
from fields.gff import LatticeField, TracerConfig, fan_boundary, sample_dgff, smooth_field
from processes.loewner import Trace
from topology.components import FOUR_CONNECTIVITY, ComponentMap, adjacency_graph, extract_components, is_connected
from utils.errors import ParameterError
from utils.logger import setup_logger

logger = setup_logger("recovery")

MAX_CHAIN_JUMP = 3.0
FRAME_SNAP_PX = 1.5
VOTE_SAMPLES = 64


def fan_unit(nx: int) -> float:
    """Pixels per unit length: the window spans [-1, 1] horizontally"""
    return (nx - 1) / 2.0


def _frame_position(x: np.ndarray, y: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Counter-clockwise arclength of frame pixels, starting at the bottom-left corner"""
    w, h = nx - 1, ny - 1
    s = np.full(x.shape, np.nan)
    bottom = y == 0
    right = (x == w) & ~bottom
    top = (y == h) & ~right & ~bottom
    left = (x == 0) & ~bottom & ~top
    s[bottom] = x[bottom]
    s[right] = w + y[right]
    s[top] = w + h + (w - x[top])
    s[left] = 2 * w + h + (h - y[left])
    return s


def left_mask(points: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """
    Pixels lying to the left of a polyline that runs from the origin

    Complement components touching the frame arc that runs counter-clockwise
    from the curve's end back to its start are on the left. Components away
    from that arc (or all of them when the curve ends inside) are decided by
    the sign of the cross product with the nearest curve tangent.

    Args:
        points: Complex pixel coordinates, points[0] on the bottom row
        shape: (ny, nx)

    Returns:
        Bool grid
    """
    ny, nx = shape
    raster, _ = rasterize_points(points, shape)
    labels, n = ndimage.label(~raster, structure=FOUR_CONNECTIVITY)
    in_left = np.zeros(n + 1, dtype=bool)
    decided = np.zeros(n + 1, dtype=bool)
    decided[0] = True

    start, end = complex(points[0]), complex(points[-1])
    end_x = int(np.clip(round(end.real), 0, nx - 1))
    end_y = int(np.clip(round(end.imag), 0, ny - 1))
    end_on_frame = min(end.real, end.imag, nx - 1 - end.real, ny - 1 - end.imag) <= FRAME_SNAP_PX
    if end_on_frame:
        perimeter = 2 * (nx - 1) + 2 * (ny - 1)
        s_end = _frame_position(np.array([end_x]), np.array([end_y]), nx, ny)[0]
        s_start = _frame_position(np.array([int(round(start.real))]), np.array([0]), nx, ny)[0]
        fy, fx = np.nonzero(np.pad(np.zeros((ny - 2, nx - 2), dtype=bool), 1, constant_values=True))
        frame_labels = labels[fy, fx]
        s = _frame_position(fx, fy, nx, ny)
        in_arc = np.mod(s - s_end, perimeter) <= np.mod(s_start - s_end, perimeter)
        touching = np.unique(frame_labels[frame_labels > 0])
        in_left[np.unique(frame_labels[(frame_labels > 0) & in_arc])] = True
        decided[touching] = True

    undecided = np.flatnonzero(~decided)
    if undecided.size:
        dense = densify(points, 0.5)
        tangents = np.gradient(dense) if len(dense) > 1 else np.ones(1, dtype=complex)
        tree = cKDTree(np.column_stack([dense.real, dense.imag]))
        near_curve = ndimage.binary_dilation(raster, structure=np.ones((3, 3), dtype=bool))
        for label in undecided:
            ys, xs = np.nonzero((labels == label) & near_curve)
            if xs.size == 0:
                ys, xs = np.nonzero(labels == label)
            step = max(1, xs.size // VOTE_SAMPLES)
            xs, ys = xs[::step], ys[::step]
            _, idx = tree.query(np.column_stack([xs, ys]))
            d = (xs + 1j * ys) - dense[idx]
            t = tangents[idx]
            cross = t.real * d.imag - t.imag * d.real
            in_left[label] = bool(np.sum(cross > 0) > np.sum(cross < 0))
    return in_left[labels] & (labels > 0)


def _representatives(cm: ComponentMap) -> np.ndarray:
    """Flat index of the first pixel of each component 1..n"""
    present, first = np.unique(cm.labels.ravel(), return_index=True)
    reps = np.zeros(cm.n_components + 1, dtype=np.int64)
    reps[present] = first
    return reps[1:]


def component_brackets(fan: FanSet, cm: ComponentMap) -> np.ndarray:
    """
    Lower bracket index of every component of the fan complement

    Entry k for label U means U lies left of the k lowest traced lines and
    not left of the next one; 0 means U is right of every traced line.
    """
    shape = cm.labels.shape
    reps = _representatives(cm)
    order = np.argsort([theta for theta, _ in fan.traces])
    brackets = np.zeros(cm.n_components + 1, dtype=int)
    still = np.ones(cm.n_components + 1, dtype=bool)
    still[0] = False
    for rank, j in enumerate(order, start=1):
        mask = left_mask(fan.traces[j][1].points, shape).ravel()
        lefts = np.zeros(cm.n_components + 1, dtype=bool)
        lefts[1:] = mask[reps]
        still &= lefts
        brackets[still] = rank
    return brackets


def _boundary_pixels(cm: ComponentMap, in_l: np.ndarray, origin_x: float) -> np.ndarray:
    """Fan pixels touching L that are within Chebyshev distance 2 of a non-L component"""
    labels = cm.labels
    fan = labels == 0
    l_pix = in_l[labels] & ~fan
    other = ~in_l[labels] & ~fan
    # the lower half-plane right of the origin counts as non-L
    virtual = np.zeros((1, labels.shape[1]), dtype=bool)
    virtual[0, int(math.ceil(origin_x)) :] = True
    padded = np.vstack([virtual, other])
    near_other = ndimage.binary_dilation(padded, structure=np.ones((5, 5), dtype=bool))[1:]
    touches_l = ndimage.binary_dilation(l_pix, structure=np.ones((3, 3), dtype=bool))
    return fan & touches_l & near_other


def _chain_from_origin(mask: np.ndarray, origin: complex, max_jump: float = MAX_CHAIN_JUMP) -> np.ndarray:
    """Greedy nearest-neighbour ordering of boundary pixels starting next to the origin"""
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return np.array([origin], dtype=complex)
    pts = xs + 1j * ys
    tree = cKDTree(np.column_stack([xs, ys]))
    visited = np.zeros(xs.size, dtype=bool)
    _, cur = tree.query([origin.real, origin.imag])
    chain = [int(cur)]
    visited[cur] = True
    while True:
        nearby = tree.query_ball_point([xs[cur], ys[cur]], r=max_jump)
        candidates = [i for i in nearby if not visited[i]]
        if not candidates:
            break
        cur = min(candidates, key=lambda i: (abs(pts[i] - pts[cur]), i))
        visited[cur] = True
        chain.append(cur)
    return pts[chain]


def _boundary_trace(cm: ComponentMap, in_l: np.ndarray, origin: complex, meta: Dict[str, Any]) -> Trace:
    chain = _chain_from_origin(_boundary_pixels(cm, in_l, origin.real), origin)
    return Trace(points=chain, times=np.arange(len(chain), dtype=float), meta=meta)


def recover_flow_line(fan: FanSet, cm: ComponentMap, theta: float) -> Trace:
    """
    Read the angle-theta flow line off the fan as the right boundary of L_theta

    L_theta is the union of components whose lower bracket angle is at least theta.

    Args:
        fan (FanSet): Fan with per-angle traces
        cm (ComponentMap): Components of the fan complement
        theta (float): Angle inside the traced range

    Returns:
        Trace of boundary pixels in pixel coordinates
    """
    angles = np.sort(fan.angle_grid)
    if theta < angles[0] - ANGLE_TOL or theta > angles[-1] + ANGLE_TOL:
        raise ParameterError(f"angle {theta} is not bracketed by the fan's angle grid [{angles[0]}, {angles[-1]}]")
    brackets = component_brackets(fan, cm)
    lower = np.full(brackets.shape, -np.inf)
    lower[brackets > 0] = angles[brackets[brackets > 0] - 1]
    in_l = lower >= theta - ANGLE_TOL
    in_l[0] = False
    logger.debug(f"L_theta for theta={theta:.4g} has {int(in_l.sum())} of {cm.n_components} components")
    return _boundary_trace(cm, in_l, fan.origin, {"origin": fan.origin, "theta": theta, "recovered": True})


def _right_region(cm: ComponentMap, origin: complex) -> np.ndarray:
    """
    Components met walking the frame counter-clockwise from the origin until the next fan pixel

    The run of fan pixels through the origin is skipped first.
    """
    labels = cm.labels
    ny, nx = labels.shape
    frame = np.pad(np.zeros((ny - 2, nx - 2), dtype=bool), 1, constant_values=True)
    fy, fx = np.nonzero(frame)
    perimeter = 2 * (nx - 1) + 2 * (ny - 1)
    start = int(np.clip(round(origin.real), 0, nx - 1))
    order = np.argsort(np.mod(_frame_position(fx, fy, nx, ny) - start, perimeter), kind="stable")
    walk = labels[fy[order], fx[order]]

    first = np.flatnonzero(walk > 0)
    right = np.zeros(cm.n_components + 1, dtype=bool)
    if first.size == 0:
        return right
    rest = walk[first[0] :]
    stops = np.flatnonzero(rest == 0)
    arc = rest[: stops[0]] if stops.size else rest
    right[np.unique(arc)] = True
    return right


def fan_right_boundary(fan: FanSet, cm: ComponentMap) -> Trace:
    """
    Right boundary of the fan raster, read from the raster alone

    The right region is the union of complement components on the frame arc
    between the origin and the first fan pixel counter-clockwise from it.
    """
    in_l = ~_right_region(cm, fan.origin)
    in_l[0] = False
    meta = {"origin": fan.origin, "right_boundary": True}
    return _boundary_trace(cm, in_l, fan.origin, meta)


def recovery_error(recovered: Trace, direct: Trace, nx: int, origin: complex) -> float:
    """Bounded-metric Hausdorff distance between two pixel-space traces"""
    unit = fan_unit(nx)
    a = pixel_to_plane(densify(recovered.points), origin, unit)
    b = pixel_to_plane(densify(direct.points), origin, unit)
    return hausdorff_distance(a, b, "bounded")


def reversal_angle_range(params: ImaginaryGeometryParams, theta1: float, theta2: float) -> Tuple[float, float]:
    """Angle interval of the reversed fan: theta -> -b/chi - theta"""
    shift = -params.b / params.chi
    return shift - theta2, shift - theta1


def inversion_mask(shape: Tuple[int, int]) -> np.ndarray:
    """Window pixels whose image under z -> -1/z also lies in the window"""
    ny, nx = shape
    unit = fan_unit(nx)
    origin = complex((nx - 1) / 2.0, 0.0)
    yy, xx = np.mgrid[0:ny, 0:nx]
    z = pixel_to_plane(xx + 1j * yy, origin, unit)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = -1.0 / z
        p = w * unit + origin
    return np.isfinite(p) & (p.real >= 0) & (p.real <= nx - 1) & (p.imag >= 0) & (p.imag <= ny - 1)


def invert_trace(points: np.ndarray, shape: Tuple[int, int]) -> List[np.ndarray]:
    """Push a pixel-space polyline through z -> -1/z and split it into in-window runs"""
    ny, nx = shape
    unit = fan_unit(nx)
    origin = complex((nx - 1) / 2.0, 0.0)
    z = pixel_to_plane(densify(points, 0.25), origin, unit)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (-1.0 / z) * unit + origin
    inside = np.isfinite(p) & (p.real >= 0) & (p.real <= nx - 1) & (p.imag >= 0) & (p.imag <= ny - 1)
    runs, current = [], []
    for q, ok in zip(p, inside):
        if ok:
            current.append(q)
        elif current:
            runs.append(np.array(current))
            current = []
    if current:
        runs.append(np.array(current))
    return runs


def masked_fan_stats(raster: np.ndarray, mask: np.ndarray) -> Dict[str, Any]:
    """Area fraction, component count and connectivity of a raster seen through a window mask"""
    barrier = raster | ~mask
    cm = extract_components(barrier)
    graph = adjacency_graph(cm, witness_mask=raster & mask)
    connected, n_classes = is_connected(graph)
    return {
        "area_fraction": float(raster[mask].mean()) if mask.any() else float("nan"),
        "n_components": cm.n_components,
        "connected": bool(connected),
        "graph_components": n_classes,
    }


def _sample_fan(
    params: ImaginaryGeometryParams,
    theta1: float,
    theta2: float,
    nx: int,
    ny: int,
    n_angles: int,
    config: TracerConfig,
    rng: np.random.Generator,
) -> FanSet:
    field = sample_dgff(nx, ny, fan_boundary(params, nx, ny), rng)
    return build_fan(field, params, theta1, theta2, n_angles, config)


def reversed_setup(
    params: ImaginaryGeometryParams, theta1: float, theta2: float
) -> Tuple[ImaginaryGeometryParams, float, float]:
    """Boundary data (0, a + b) and the mapped angle range, checked against its admissible range"""
    reversed_params = ig_constants(params.kappa, 0.0, params.a + params.b)
    r1, r2 = reversal_angle_range(params, theta1, theta2)
    lo, hi = admissible_angle_range(reversed_params)
    if r1 < lo - ANGLE_TOL or r2 > hi + ANGLE_TOL:
        raise ParameterError(f"reversed angle range [{r1}, {r2}] leaves [{lo}, {hi}]")
    return reversed_params, r1, r2


def reversal_seed(
    params: ImaginaryGeometryParams,
    theta1: float,
    theta2: float,
    nx: int,
    ny: int,
    n_angles: int,
    rng_pushed: np.random.Generator,
    rng_direct: np.random.Generator,
    config: TracerConfig = TracerConfig(),
) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Masked statistics of one pushed-forward fan and one directly simulated reversed fan"""
    reversed_params, r1, r2 = reversed_setup(params, theta1, theta2)
    shape = (ny, nx)
    mask = inversion_mask(shape)
    fan = _sample_fan(params, theta1, theta2, nx, ny, n_angles, config, rng_pushed)
    raster = np.zeros(shape, dtype=bool)
    for _, trace in fan.traces:
        for run in invert_trace(trace.points, shape):
            raster |= rasterize_points(run, shape)[0]
    rev = _sample_fan(reversed_params, r1, r2, nx, ny, n_angles, config, rng_direct)
    return masked_fan_stats(raster, mask), masked_fan_stats(rev.raster, mask)


def reversal_summary(pushed: List[Dict[str, Any]], direct: List[Dict[str, Any]]) -> Dict[str, Any]:
    """Two-sample KS p-values and connectivity rates of the two samples"""
    tests = {}
    for key in ("area_fraction", "n_components"):
        a = [row[key] for row in pushed]
        b = [row[key] for row in direct]
        tests[key] = float(stats.ks_2samp(a, b).pvalue) if a and b else None
    return {
        "connectivity_rate": {
            "pushed": float(np.mean([r["connected"] for r in pushed])) if pushed else None,
            "direct": float(np.mean([r["connected"] for r in direct])) if direct else None,
        },
        "ks_pvalues": tests,
    }


def reversal_stats(
    params: ImaginaryGeometryParams,
    theta1: float,
    theta2: float,
    n_seeds: int,
    nx: int,
    ny: int,
    n_angles: int,
    rng_for: Callable[[int, str], np.random.Generator],
    config: TracerConfig = TracerConfig(),
) -> Dict[str, Any]:
    """
    Compare fans pushed through z -> -1/z with directly simulated reversed fans

    The reversed fans use boundary data (0, a + b) and the mapped angle range.
    Both samples are restricted to the window pixels that stay in the window
    under the inversion.

    Args:
        params (ImaginaryGeometryParams): Constants with boundary data (a, b)
        theta1 (float): Lowest angle
        theta2 (float): Highest angle
        n_seeds (int): Fans per sample
        nx (int): Grid columns
        ny (int): Grid rows
        n_angles (int): Angles per fan
        rng_for: (seed_index, tag) -> Generator
        config (TracerConfig): Tracer settings

    Returns:
        Dict with both samples and two-sample KS p-values
    """
    reversed_params, r1, r2 = reversed_setup(params, theta1, theta2)
    pushed, direct = [], []
    for seed in range(n_seeds):
        p, d = reversal_seed(
            params, theta1, theta2, nx, ny, n_angles, rng_for(seed, "pushed"), rng_for(seed, "direct"), config
        )
        pushed.append(p)
        direct.append(d)
        logger.debug(f"reversal seed {seed}: pushed {p}, direct {d}")
    report = {
        "angle_range": [theta1, theta2],
        "reversed_angle_range": [r1, r2],
        "reversed_boundary": [reversed_params.a, reversed_params.b],
        "mask_fraction": float(inversion_mask((ny, nx)).mean()),
        "pushed": pushed,
        "direct": direct,
    }
    report.update(reversal_summary(pushed, direct))
    return report


def ladder_seed(
    params: ImaginaryGeometryParams,
    thetas: Sequence[float],
    nx: int,
    ny: int,
    rng: np.random.Generator,
    config: TracerConfig = TracerConfig(),
) -> List[float]:
    """Bounded-Hausdorff distance from eta_theta + {inf} to R_+ + {inf} for each angle, one shared field"""
    unit = fan_unit(nx)
    positive_axis = np.append(np.linspace(0.0, 1.0, 4 * nx), np.inf)
    field: LatticeField = smooth_field(sample_dgff(nx, ny, fan_boundary(params, nx, ny), rng), config.smoothing_radius)
    out = []
    for theta in thetas:
        trace = trace_angle(field, params, float(theta), config)
        z = pixel_to_plane(densify(trace.points), field.origin, unit)
        out.append(hausdorff_distance(np.append(z, np.inf), positive_axis, "bounded"))
    return out


def hausdorff_ladder(
    params: ImaginaryGeometryParams,
    thetas: Sequence[float],
    nx: int,
    ny: int,
    n_seeds: int,
    rng_for: Callable[[int, str], np.random.Generator],
    config: TracerConfig = TracerConfig(),
) -> List[Dict[str, Any]]:
    """Median and 90% quantile of the ladder distances over n_seeds fields"""
    samples = [ladder_seed(params, thetas, nx, ny, rng_for(seed, "ladder"), config) for seed in range(n_seeds)]
    return summarize_ladder(thetas, samples)


def summarize_ladder(thetas: Sequence[float], samples: List[List[float]]) -> List[Dict[str, Any]]:
    rows = []
    for k, theta in enumerate(thetas):
        ds = [s[k] for s in samples]
        rows.append(
            {
                "theta": float(theta),
                "median": float(np.median(ds)) if ds else None,
                "q90": float(np.quantile(ds, 0.9)) if ds else None,
                "n": len(ds),
            }
        )
    return rows
