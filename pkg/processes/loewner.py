"""
Chordal Loewner evolution - SLE_kappa(rho) driving processes, point flows,
trace extraction by backward slit maps, the SW martingale weight and
rectangle exit experiments
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from processes.bessel import BesselParams, besq_step, delta_from_rho, sample_bessel_path, time_grid
from utils.errors import DomainError, NumericalError, ParameterError
from utils.logger import setup_logger

logger = setup_logger("loewner")

LEFT = "left"
RIGHT = "right"

BOUNCE_SCALE = 1e-12
MERGE_SCALE = 1e-9
SPLIT_FACTOR = 10.0
COLLISION_FACTOR = 0.5
SWALLOW_FACTOR = 2.0
REFINE_FACTOR = 10.0
X_FLOOR_SCALE = 1e-6


@dataclass(frozen=True)
class ForcePoint:
    """Marked boundary point; location 0.0 on side "right" stands for 0+ and on "left" for 0-"""

    side: str
    location: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if self.side not in (LEFT, RIGHT):
            raise ParameterError(f"force point side must be 'left' or 'right', got {self.side!r}")
        if self.side == LEFT and self.location > 0:
            raise ParameterError(f"left force point must sit at or left of 0, got {self.location}")
        if self.side == RIGHT and self.location < 0:
            raise ParameterError(f"right force point must sit at or right of 0, got {self.location}")

    @property
    def sign(self) -> int:
        return 1 if self.side == RIGHT else -1


@dataclass
class DrivingPath:
    times: np.ndarray
    W: np.ndarray
    V: np.ndarray
    kappa: float
    dt: float
    force_points: List[ForcePoint] = field(default_factory=list)
    threshold_time: Optional[float] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def scaled(self, r: float) -> "DrivingPath":
        """Driving function t -> W(r^2 t) / r on the correspondingly rescaled grid"""
        return DrivingPath(
            times=self.times / r**2,
            W=self.W / r,
            V=self.V / r,
            kappa=self.kappa,
            dt=self.dt / r**2,
            force_points=[ForcePoint(fp.side, fp.location / r, fp.rho) for fp in self.force_points],
            threshold_time=None if self.threshold_time is None else self.threshold_time / r**2,
            meta=dict(self.meta),
        )


@dataclass
class Trace:
    points: np.ndarray
    times: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class PointFlow:
    """Trajectory of g_t(z) and g_t'(z) up to the swallowing time"""

    z: complex
    times: np.ndarray
    g: np.ndarray
    g_prime: np.ndarray
    swallow_time: Optional[float] = None


def _validate_force_points(force_points: Sequence[ForcePoint]) -> None:
    for side in (LEFT, RIGHT):
        locs = [fp.location for fp in force_points if fp.side == side]
        if len(set(locs)) != len(locs):
            raise ParameterError(f"{side} force point locations must be distinct, got {locs}")


def _threshold_reached(gaps: np.ndarray, signs: np.ndarray, rhos: np.ndarray, radius: float) -> bool:
    collided = gaps < radius
    for s in (-1, 1):
        mask = collided & (signs == s)
        if mask.any() and rhos[mask].sum() <= -2.0:
            return True
    return False


def drive_sle(
    kappa: float,
    force_points: Sequence[ForcePoint],
    T: float,
    dt: float,
    rng: np.random.Generator,
    split_factor: float = SPLIT_FACTOR,
    collision_factor: float = COLLISION_FACTOR,
) -> DrivingPath:
    """
    Solve the SLE_kappa(rho) driving system up to T or the continuation threshold

    Away from the force points this is Euler-Maruyama. When the nearest force point
    is within split_factor * sqrt(kappa dt) of W, its gap is a scaled Bessel process
    and is advanced by an exact BESQ transition, with W read off from the gap. Points
    on the same side that have merged with it share its V and add their weights to
    the Bessel dimension.

    Args:
        kappa (float): SLE parameter
        force_points: Marked points with weights
        T (float): Horizon
        dt (float): Step
        rng: numpy Generator
        split_factor (float): Exact-step zone in units of sqrt(kappa dt)
        collision_factor (float): Collision radius in units of sqrt(kappa dt)

    Returns:
        DrivingPath, truncated at the threshold time if it is hit
    """
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    fps = list(force_points)
    _validate_force_points(fps)
    times = time_grid(T, dt)
    n = len(times) - 1
    dt = float(times[1] - times[0])

    signs = np.array([fp.sign for fp in fps], dtype=float)
    rhos = np.array([fp.rho for fp in fps], dtype=float)
    right = signs > 0
    # nearest-first orderings for the monotonicity repair
    right_order = np.array([i for i in np.argsort([fp.location for fp in fps]) if fps[i].side == RIGHT], dtype=int)
    left_order = np.array([i for i in np.argsort([-fp.location for fp in fps]) if fps[i].side == LEFT], dtype=int)

    scale = math.sqrt(kappa * dt)
    split = split_factor * scale
    collision = collision_factor * scale
    bump = BOUNCE_SCALE * math.sqrt(dt)
    merge = MERGE_SCALE * scale

    W = np.zeros(n + 1)
    V = np.zeros((len(fps), n + 1))
    V[:, 0] = [fp.location for fp in fps]
    threshold_time = None
    last = n
    exact_steps = 0
    bounces = 0

    for k in range(n + 1):
        w = W[k]
        v = V[:, k]
        gaps = signs * (v - w)
        if len(fps) and _threshold_reached(gaps, signs, rhos, collision):
            threshold_time = float(times[k])
            last = k
            break
        if k == n:
            break

        floored = np.maximum(gaps, scale)
        near = int(np.argmin(gaps)) if len(fps) else -1
        if near >= 0 and gaps[near] < split:
            # points merged with the nearest one on its side move as a single force point
            group = (signs == signs[near]) & (np.abs(v - v[near]) <= merge)
            delta = delta_from_rho(float(rhos[group].sum()), kappa)
            if delta <= 0:
                threshold_time = float(times[k])
                last = k
                break
            others = ~group
            drift_other = float(np.sum(-signs[others] * rhos[others] / floored[others]))
            g0 = gaps[near]
            y1 = besq_step(g0 * g0 / kappa, delta, dt, rng)
            g1 = max(math.sqrt(kappa * y1) - signs[near] * drift_other * dt, 0.0)
            v_new = v + 2.0 * signs * dt / floored
            v_new[group] = v[near] + signs[near] * 4.0 * dt / max(g0 + g1, 2.0 * bump)
            w_new = v_new[near] - signs[near] * g1
            exact_steps += 1
        else:
            drift = float(np.sum(-signs * rhos / floored)) if len(fps) else 0.0
            w_new = w + math.sqrt(kappa * dt) * rng.standard_normal() + drift * dt
            v_new = v + 2.0 * signs * dt / floored

        if len(fps):
            low = v_new[right] < w_new
            high = v_new[~right] > w_new
            bounces += int(low.sum() + high.sum())
            v_new[right] = np.maximum(v_new[right], w_new + bump)
            v_new[~right] = np.minimum(v_new[~right], w_new - bump)
            if right_order.size:
                v_new[right_order] = np.maximum.accumulate(v_new[right_order])
            if left_order.size:
                v_new[left_order] = np.minimum.accumulate(v_new[left_order])
        W[k + 1] = w_new
        V[:, k + 1] = v_new

    if threshold_time is not None:
        logger.debug(f"continuation threshold hit at t={threshold_time:.6g} (step {last})")
    return DrivingPath(
        times=times[: last + 1],
        W=W[: last + 1],
        V=V[:, : last + 1],
        kappa=kappa,
        dt=dt,
        force_points=fps,
        threshold_time=threshold_time,
        meta={"exact_steps": exact_steps, "bounces": bounces},
    )


def drive_sle_rho_bessel(
    kappa: float, rho: float, T: float, dt: float, rng: np.random.Generator
) -> DrivingPath:
    """
    SLE_kappa(rho) with one force point at 0+ built from a Bessel path

    X is BES^delta with delta = 1 + 2(rho+2)/kappa, V = (2/sqrt(kappa)) int ds / X_s
    and W = V - sqrt(kappa) X.

    Args:
        kappa (float): SLE parameter
        rho (float): Weight, > -2
        T (float): Horizon
        dt (float): Step
        rng: numpy Generator

    Returns:
        DrivingPath with meta["floored_steps"] counting clamped integrand steps
    """
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    if not rho > -2:
        raise ParameterError(f"rho must exceed -2, got {rho}")
    params = BesselParams(delta_from_rho(rho, kappa))
    bes = sample_bessel_path(params, 0.0, T, dt, rng)
    X = bes.values
    step = float(bes.times[1] - bes.times[0])
    x_floor = X_FLOOR_SCALE * math.sqrt(step)

    pair_sum = X[:-1] + X[1:]
    floored = pair_sum < 2.0 * x_floor
    increments = 2.0 * step / np.maximum(pair_sum, 2.0 * x_floor)
    V = np.concatenate([[0.0], (2.0 / math.sqrt(kappa)) * np.cumsum(increments)])
    W = V - math.sqrt(kappa) * X
    n_floored = int(floored.sum())
    if n_floored:
        logger.warning(f"Bessel integrand floored on {n_floored} steps (rho={rho}, dt={step})")
    return DrivingPath(
        times=bes.times,
        W=W,
        V=V[np.newaxis, :],
        kappa=kappa,
        dt=step,
        force_points=[ForcePoint(RIGHT, 0.0, rho)],
        meta={"floored_steps": n_floored, "bessel": X, "delta": params.delta},
    )


def evolve_point(
    z: complex,
    path: DrivingPath,
    swallow_factor: float = SWALLOW_FACTOR,
    refine_factor: float = REFINE_FACTOR,
    substeps: int = 16,
) -> PointFlow:
    """
    Integrate g_t(z) and g_t'(z) along a driving path with Heun steps

    The driving function is linearly interpolated inside each grid step. Steps
    starting within refine_factor * sqrt(dt) of W are split into substeps.

    Args:
        z (complex): Point in the closed upper half-plane
        path (DrivingPath): Driving function
        swallow_factor (float): Swallow radius in units of sqrt(dt)
        refine_factor (float): Refinement zone in units of sqrt(dt)
        substeps (int): Substeps inside the refinement zone

    Returns:
        PointFlow truncated at the swallowing time
    """
    z = complex(z)
    if z.imag < 0:
        raise DomainError(f"point must lie in the closed upper half-plane, got {z}")
    W = path.W
    times = path.times
    radius = swallow_factor * math.sqrt(path.dt)
    refine = refine_factor * math.sqrt(path.dt)
    is_real = z.imag == 0.0
    side = math.copysign(1.0, z.real - W[0])

    g = np.empty(len(times), dtype=complex)
    gp = np.empty(len(times), dtype=complex)
    g[0], gp[0] = z, 1.0 + 0j
    if abs(z - W[0]) < radius:
        return PointFlow(z=z, times=times[:1], g=g[:1], g_prime=gp[:1], swallow_time=float(times[0]))

    cur, cur_p = z, 1.0 + 0j
    for k in range(len(times) - 1):
        w0, w1 = W[k], W[k + 1]
        m = substeps if abs(cur - w0) < refine else 1
        h = (times[k + 1] - times[k]) / m
        for j in range(m):
            wa = w0 + (w1 - w0) * j / m
            wb = w0 + (w1 - w0) * (j + 1) / m
            d1 = cur - wa
            k1, kp1 = 2.0 / d1, -2.0 * cur_p / d1**2
            pred, pred_p = cur + h * k1, cur_p + h * kp1
            d2 = pred - wb
            k2, kp2 = 2.0 / d2, -2.0 * pred_p / d2**2
            cur = cur + 0.5 * h * (k1 + k2)
            cur_p = cur_p + 0.5 * h * (kp1 + kp2)
        if is_real:
            cur = complex(cur.real, 0.0)
        g[k + 1], gp[k + 1] = cur, cur_p
        d = cur - w1
        swallowed = (
            not (np.isfinite(cur) and np.isfinite(cur_p))
            or abs(d) < radius
            or (is_real and math.copysign(1.0, d.real) != side)
            or (not is_real and cur.imag <= 0.0)
        )
        if swallowed:
            end = k + 2
            return PointFlow(z=z, times=times[:end], g=g[:end], g_prime=gp[:end], swallow_time=float(times[k + 1]))
    return PointFlow(z=z, times=times, g=g, g_prime=gp)


def _inverse_slit(z: np.ndarray, c: float, four_dt: float) -> np.ndarray:
    """Inverse of the vertical-slit map with constant driving c, branch Im >= 0"""
    d = z - c
    r = np.sqrt(d * d - four_dt)
    flip = (r.imag < 0) | ((r.imag == 0) & (r.real * d.real < 0))
    return c + np.where(flip, -r, r)


def loewner_trace(path: DrivingPath, stride: int = 1) -> Trace:
    """
    Extract the curve by composing inverse vertical-slit maps backwards

    gamma(t_j) = f_1 o ... o f_j (W_j) where f_k undoes one step of constant
    driving W_k. All requested tips are pushed through f_k together.

    Args:
        path (DrivingPath): Driving function
        stride (int): Keep every stride-th grid time (the last one is always kept)

    Returns:
        Trace with points[0] = W_0
    """
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    n = path.n_steps
    idx = np.unique(np.concatenate([np.arange(0, n + 1, stride), [n]]))
    points = path.W[idx].astype(complex)
    four_dt = 4.0 * path.dt
    for k in range(n, 0, -1):
        start = int(np.searchsorted(idx, k))
        block = _inverse_slit(points[start:], path.W[k], four_dt)
        if not np.all(np.isfinite(block)):
            raise NumericalError("non-finite value in slit map composition", step=k)
        points[start:] = block
    points = points.real + 1j * np.maximum(points.imag, 0.0)
    return Trace(
        points=points,
        times=path.times[idx],
        meta={"origin": complex(path.W[0]), "target": "inf", "kappa": path.kappa, "stride": stride},
    )


def count_self_intersections(points: np.ndarray) -> int:
    """Number of properly crossing pairs of non-adjacent polyline segments"""
    p = np.asarray(points, dtype=complex)
    if len(p) < 4:
        return 0
    a, b = p[:-1], p[1:]

    def orient(u, v, w):
        return np.sign((v - u).real * (w - u).imag - (v - u).imag * (w - u).real)

    count = 0
    for i in range(len(a) - 2):
        a2, b2 = a[i + 2 :], b[i + 2 :]
        o1 = orient(a[i], b[i], a2)
        o2 = orient(a[i], b[i], b2)
        o3 = orient(a2, b2, a[i])
        o4 = orient(a2, b2, b[i])
        count += int(np.sum((o1 * o2 < 0) & (o3 * o4 < 0)))
    return count


def _derivative_exponent(kappa: float, rho: float, real: bool) -> float:
    """Power of |g_t'(z)| in the SW product; real points carry twice the rho^2 term"""
    if real:
        return (8.0 - 2.0 * kappa + 2.0 * rho) * rho / (8.0 * kappa)
    return (8.0 - 2.0 * kappa + rho) * rho / (8.0 * kappa)


def sw_weight(
    path: DrivingPath,
    marked: Sequence[Tuple[complex, float]],
    flows: Sequence[PointFlow],
    index: int = -1,
) -> float:
    """
    Evaluate the SW change-of-measure product at one grid time

    Real marked points drop the Im-power factor and take the boundary
    exponent rho (4 - kappa + rho) / (4 kappa) on |g_t'|.

    Args:
        path (DrivingPath): SLE_kappa driving function
        marked: (z_j, rho_j) pairs
        flows: evolve_point results for each z_j along path
        index (int): Grid index of the evaluation time

    Returns:
        M_t
    """
    if len(marked) != len(flows):
        raise ParameterError("need one point flow per marked point")
    kappa = path.kappa
    k = index % len(path.times)
    t = path.times[k]
    W = path.W[k]

    zs, gps = [], []
    for (z, _), flow in zip(marked, flows):
        if flow.swallow_time is not None and flow.swallow_time <= t:
            raise DomainError(f"marked point {z} was swallowed at t={flow.swallow_time:.6g}")
        zs.append(flow.g[k])
        gps.append(flow.g_prime[k])

    log_m = 0.0
    for j, ((z, rho), zt, gp) in enumerate(zip(marked, zs, gps)):
        if rho == 0:
            continue
        real = complex(z).imag == 0.0
        log_m += _derivative_exponent(kappa, rho, real) * math.log(abs(gp))
        if not real:
            log_m += rho * rho / (8.0 * kappa) * math.log(zt.imag)
        log_m += rho / kappa * math.log(abs(W - zt))
        for j2 in range(j + 1, len(marked)):
            rho2 = marked[j2][1]
            if rho2 == 0:
                continue
            z2 = zs[j2]
            log_m += rho * rho2 / (4.0 * kappa) * (math.log(abs(zt - z2)) + math.log(abs(zt.conjugate() - z2)))
    return math.exp(log_m)


def sw_martingale_samples(
    kappa: float, rho: float, z: float, T: float, dt: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Samples of M stopped at T or at the swallowing of a real marked point z

    All n SLE_kappa paths advance together; each step applies the exact slit flow
    for driving frozen at its left-endpoint value.
    """
    if z == 0:
        raise ParameterError("marked point must differ from the origin")
    times = time_grid(T, dt)
    h = float(times[1] - times[0])
    radius = SWALLOW_FACTOR * math.sqrt(h)
    side = math.copysign(1.0, z)
    w = np.zeros(n)
    g = np.full(n, float(z))
    gp = np.ones(n)
    alive = np.ones(n, dtype=bool)
    m = np.ones(n)

    exponent = _derivative_exponent(kappa, rho, real=True)

    def weight():
        return np.abs(gp) ** exponent * np.abs(w - g) ** (rho / kappa)

    m[:] = weight()
    for _ in range(len(times) - 1):
        d = g - w
        root = np.sqrt(d * d + 4.0 * h)
        g = np.where(alive, w + side * root, g)
        gp = np.where(alive, gp * np.abs(d) / root, gp)
        w = np.where(alive, w + math.sqrt(kappa * h) * rng.standard_normal(n), w)
        current = weight()
        hit = alive & ((side * (g - w) < radius))
        m = np.where(alive, current, m)
        alive &= ~hit
    return m


def _segment_exit(p: complex, q: complex, x_lo: float, x_hi: float, y_hi: float) -> Optional[str]:
    """Side through which the segment p -> q first leaves the rectangle, if it does"""
    candidates = []
    dx, dy = q.real - p.real, q.imag - p.imag
    if q.real < x_lo and dx != 0:
        candidates.append(((x_lo - p.real) / dx, LEFT))
    if q.real > x_hi and dx != 0:
        candidates.append(((x_hi - p.real) / dx, RIGHT))
    if q.imag > y_hi and dy != 0:
        candidates.append(((y_hi - p.imag) / dy, "top"))
    if not candidates:
        return None
    return min(candidates)[1]


def exit_rectangle_side(trace: Trace, epsilon: float) -> Optional[str]:
    """First side of [-sqrt(eps), 1/eps] x [0, eps] crossed by the trace, None if it stays inside"""
    x_lo, x_hi, y_hi = -math.sqrt(epsilon), 1.0 / epsilon, epsilon
    pts = trace.points
    for i in range(1, len(pts)):
        side = _segment_exit(pts[i - 1], pts[i], x_lo, x_hi, y_hi)
        if side is not None:
            return side
    return None


def exit_side_stats(
    kappa: float,
    rho: float,
    epsilon: float,
    n: int,
    dt: float,
    rng: np.random.Generator,
    T: Optional[float] = None,
    stride: int = 1,
) -> Dict[str, Any]:
    """
    Empirical exit-side frequencies of SLE_kappa(rho) traces from R_epsilon

    Args:
        kappa (float): SLE parameter
        rho (float): Weight of the force point at 0+
        epsilon (float): Rectangle parameter in (0, 1)
        n (int): Number of traces
        dt (float): Step
        rng: numpy Generator
        T (float): Horizon, defaults to epsilon
        stride (int): Trace subsampling

    Returns:
        Dict with left/top/right frequencies, their standard errors and the counts
    """
    if not 0 < epsilon < 1:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if n < 1:
        raise ParameterError("need at least one run")
    horizon = epsilon if T is None else T
    counts = {LEFT: 0, "top": 0, RIGHT: 0}
    unclassified = 0
    for _ in range(n):
        path = drive_sle(kappa, [ForcePoint(RIGHT, 0.0, rho)], horizon, dt, rng)
        side = exit_rectangle_side(loewner_trace(path, stride=stride), epsilon)
        if side is None:
            unclassified += 1
        else:
            counts[side] += 1
    classified = n - unclassified
    if unclassified:
        logger.warning(f"{unclassified}/{n} traces did not leave R_eps (rho={rho}, T={horizon})")
    result: Dict[str, Any] = {"classified": classified, "unclassified": unclassified, "counts": counts}
    for side, c in counts.items():
        p = c / classified if classified else float("nan")
        result[side] = p
        result[f"{side}_se"] = math.sqrt(p * (1.0 - p) / classified) if classified else float("nan")
    return result


def rho_limit_stats(
    kappa: float,
    rhos: Sequence[float],
    t: float,
    n: int,
    dt: float,
    rng: np.random.Generator,
    quantiles: Sequence[float] = (0.1, 0.5, 0.9),
) -> List[Dict[str, Any]]:
    """Quantiles of V_t, W_t and inf_{s<=t} W_s for SLE_kappa(rho) along a sequence of rho"""
    rows = []
    for rho in rhos:
        v_end, w_end, w_inf = np.empty(n), np.empty(n), np.empty(n)
        for i in range(n):
            path = drive_sle_rho_bessel(kappa, rho, t, dt, rng)
            v_end[i] = path.V[0, -1]
            w_end[i] = path.W[-1]
            w_inf[i] = path.W.min()
        row: Dict[str, Any] = {"rho": rho, "delta": delta_from_rho(rho, kappa)}
        for name, sample in (("V", v_end), ("W", w_end), ("W_inf", w_inf)):
            for q, value in zip(quantiles, np.quantile(sample, quantiles)):
                row[f"{name}_q{int(round(q * 100))}"] = float(value)
        rows.append(row)
        logger.debug(f"rho={rho}: median V_t={row['V_q50']:.4g}")
    return rows
