"""
Bessel processes - exact BESQ sampling, transition densities, excursions
and the excursion Poisson point process
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import special

from utils.errors import DomainError, ParameterError
from utils.logger import setup_logger

logger = setup_logger("bessel")

# Below this starting point the density uses the p_t(0, y) closed form
X_ZERO_THRESHOLD = 1e-10
# Excursion endpoints are checked against TOL_ZERO_SCALE * sqrt(length)
TOL_ZERO_SCALE = 1e-12


@dataclass(frozen=True)
class BesselParams:
    """Dimension of a BES/BESQ process and the two derived exponents"""

    delta: float
    drift_a: float = field(init=False)
    nu: float = field(init=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"Bessel dimension must be positive, got {self.delta}")
        object.__setattr__(self, "drift_a", (self.delta - 1.0) / 2.0)
        object.__setattr__(self, "nu", self.delta / 2.0 - 1.0)


@dataclass
class SamplePath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.size < 1:
            raise ParameterError("times and values must be non-empty and of equal length")


@dataclass
class Excursion:
    length: float
    path: SamplePath

    @property
    def tol_zero(self) -> float:
        return TOL_ZERO_SCALE * math.sqrt(self.length)

    @property
    def maximum(self) -> float:
        return float(self.path.values.max())


@dataclass
class ExcursionPoint:
    local_time_u: float
    length_t: float
    excursion: Optional[Excursion] = None


@dataclass
class ExcursionPPP:
    """Points of the excursion Poisson point process plus truncation bookkeeping"""

    points: List[ExcursionPoint]
    local_time_budget: float
    t_min: float
    t_max: float
    expected_count: float
    # Expected total length of the excursions shorter than t_min that were dropped
    dropped_expected_length: float

    @property
    def total_length(self) -> float:
        return float(sum(p.length_t for p in self.points))


def delta_from_rho(rho: float, kappa: float) -> float:
    """Bessel dimension of the force-point gap of an SLE_kappa(rho)"""
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    return 1.0 + 2.0 * (rho + 2.0) / kappa


def _check_step(delta: float, dt: float) -> None:
    if not delta > 0:
        raise ParameterError(f"Bessel dimension must be positive, got {delta}")
    if not dt > 0:
        raise ParameterError(f"time step must be positive, got {dt}")


def besq_step(y, delta: float, dt: float, rng: np.random.Generator):
    """
    One exact BESQ^delta transition of length dt

    Y_{t+dt} / dt is noncentral chi-square with delta degrees of freedom and
    noncentrality y / dt, sampled as a Poisson mixture of gammas, which is valid
    for fractional delta as well.

    Args:
        y: Current value(s), scalar or array, all >= 0
        delta (float): Dimension
        dt (float): Step length
        rng: numpy Generator

    Returns:
        New value(s) with the shape of y
    """
    _check_step(delta, dt)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ParameterError("BESQ state must be non-negative")
    n = rng.poisson(y / (2.0 * dt))
    out = np.asarray(2.0 * dt * rng.gamma(delta / 2.0 + n))
    return float(out) if out.ndim == 0 else out


def sample_besq_at(times, y0, delta: float, rng: np.random.Generator, size: Optional[int] = None):
    """
    Sample a BESQ^delta path exactly on an arbitrary nondecreasing time grid

    Args:
        times: Grid starting at 0
        y0: Initial value(s)
        delta (float): Dimension
        rng: numpy Generator
        size (int): Number of independent paths; None for a single path

    Returns:
        Array of shape (len(times),) or (size, len(times))
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ParameterError("time grid must be nondecreasing")
    shape = () if size is None else (size,)
    y = np.broadcast_to(np.asarray(y0, dtype=float), shape).astype(float)
    out = np.empty(shape + (times.size,))
    out[..., 0] = y
    for k in range(1, times.size):
        h = times[k] - times[k - 1]
        if h > 0:
            y = np.asarray(besq_step(y, delta, h, rng), dtype=float).reshape(shape)
        out[..., k] = y
    return out


def time_grid(T: float, dt: float) -> np.ndarray:
    if not T > 0 or not dt > 0:
        raise ParameterError(f"T and dt must be positive, got T={T}, dt={dt}")
    n = max(1, int(round(T / dt)))
    return np.linspace(0.0, n * dt, n + 1)


def sample_bessel_paths(
    params: BesselParams, x0: float, T: float, dt: float, n_paths: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorised BES^delta paths, shape (n_paths, steps + 1)"""
    if x0 < 0:
        raise ParameterError(f"starting point must be non-negative, got {x0}")
    times = time_grid(T, dt)
    y = sample_besq_at(times, x0 * x0, params.delta, rng, size=n_paths)
    return np.sqrt(y)


def sample_bessel_path(
    params: BesselParams, x0: float, T: float, dt: float, rng: np.random.Generator
) -> SamplePath:
    """
    Sample a BES^delta path as the square root of an exact BESQ^delta path

    Args:
        params (BesselParams): Dimension
        x0 (float): Starting point, >= 0
        T (float): Horizon
        dt (float): Grid spacing
        rng: numpy Generator

    Returns:
        SamplePath on the uniform grid 0..T
    """
    times = time_grid(T, dt)
    values = sample_bessel_paths(params, x0, T, dt, 1, rng)[0]
    return SamplePath(times=times, values=values)


def bessel_transition_density(params: BesselParams, t: float, x: float, y):
    """
    Transition density p_t(x, y) of BES^delta

    Uses the exponentially scaled modified Bessel function so that large
    arguments xy/t do not overflow.

    Args:
        params (BesselParams): Dimension
        t (float): Elapsed time, > 0
        x (float): Starting point, >= 0
        y: Target point(s), > 0

    Returns:
        Density value(s)
    """
    if not t > 0:
        raise ParameterError(f"t must be positive, got {t}")
    if x < 0:
        raise DomainError(f"x must be non-negative, got {x}")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= 0):
        raise DomainError("density is only defined for y > 0")

    nu = params.nu
    if x <= X_ZERO_THRESHOLD:
        log_p = (
            -nu * math.log(2.0)
            - (nu + 1.0) * math.log(t)
            - special.gammaln(nu + 1.0)
            + (2.0 * nu + 1.0) * np.log(y_arr)
            - y_arr * y_arr / (2.0 * t)
        )
        p = np.exp(log_p)
    else:
        z = x * y_arr / t
        p = (
            (y_arr / x) ** nu
            * y_arr
            / t
            * np.exp(-((x - y_arr) ** 2) / (2.0 * t))
            * special.ive(nu, z)
        )
    return float(p) if p.ndim == 0 else p


def sample_bessel_excursion(
    params: BesselParams, length_t: float, dt: float, rng: np.random.Generator
) -> Excursion:
    """
    Sample a BES^delta excursion from 0 to 0 of the given length

    The excursion is a BES^(4-delta) bridge, built from a BES^(4-delta) process Y
    started at 0 through Z_u = (1-u) Y_{u/(1-u)} and Brownian scaling. Y is sampled
    exactly at the stretched times, so no SDE discretisation is involved.

    Args:
        params (BesselParams): Dimension, must lie in (0, 2)
        length_t (float): Duration, > 0
        dt (float): Target grid spacing
        rng: numpy Generator

    Returns:
        Excursion with values[0] = values[-1] = 0
    """
    if not 0 < params.delta < 2:
        raise ParameterError(f"excursions exist only for delta in (0, 2), got {params.delta}")
    if not length_t > 0 or not dt > 0:
        raise ParameterError("excursion length and dt must be positive")

    n = max(2, int(math.ceil(length_t / dt)))
    u = np.linspace(0.0, 1.0, n + 1)
    stretched = u[:-1] / (1.0 - u[:-1])
    y = sample_besq_at(stretched, 0.0, 4.0 - params.delta, rng)
    z = np.empty(n + 1)
    z[:-1] = (1.0 - u[:-1]) * np.sqrt(y)
    z[-1] = 0.0
    values = math.sqrt(length_t) * z
    return Excursion(length=length_t, path=SamplePath(times=u * length_t, values=values))


def sample_excursion_sde(
    params: BesselParams,
    length_t: float,
    dt: float,
    rng: np.random.Generator,
    stop_fraction: float = 0.9,
) -> SamplePath:
    """
    Euler solution of the excursion SDE on [0, stop_fraction * length_t]

    dY = ((1-a)/Y - Y/(t-s)) ds + dW. Only used to cross-check the bridge sampler;
    the first step is the exact BES^(4-delta) marginal to avoid the 1/Y blowup.
    """
    if not 0 < params.delta < 2:
        raise ParameterError(f"excursions exist only for delta in (0, 2), got {params.delta}")
    horizon = stop_fraction * length_t
    times = time_grid(horizon, dt)
    h = times[1] - times[0]
    values = np.empty(times.size)
    values[0] = 0.0
    values[1] = math.sqrt(besq_step(0.0, 4.0 - params.delta, h, rng))
    drift_coef = 1.0 - params.drift_a
    for k in range(1, times.size - 1):
        y = max(values[k], 1e-12)
        drift = drift_coef / y - y / (length_t - times[k])
        values[k + 1] = abs(y + drift * h + math.sqrt(h) * rng.standard_normal())
    return SamplePath(times=times, values=values)


def excursion_max_exceedance(
    params: BesselParams, level: float, n: int, dt: float, rng: np.random.Generator
):
    """
    Estimate the probability that a length-1 excursion exceeds level

    Returns:
        (estimate, standard error)
    """
    hits = 0
    for _ in range(n):
        if sample_bessel_excursion(params, 1.0, dt, rng).maximum > level:
            hits += 1
    p = hits / n
    return p, math.sqrt(p * (1.0 - p) / n)


def _length_integral(beta: float, t_min: float, t_max: float) -> float:
    """Integral of t^(beta-1) over [t_min, t_max] for beta < 0"""
    upper = 0.0 if math.isinf(t_max) else t_max**beta
    return (upper - t_min**beta) / beta


def sample_excursion_ppp(
    params: BesselParams,
    local_time_budget: float,
    t_min: float,
    t_max: float,
    dt: float,
    rng: np.random.Generator,
    attach_paths: bool = True,
) -> ExcursionPPP:
    """
    Sample the excursion Poisson point process with intensity (delta/2) du x t^(delta/2-2) dt

    Lengths are truncated to [t_min, t_max]; t_max may be infinite. The intensity is
    not integrable at 0, so t_min > 0 is mandatory and the expected length carried
    by the dropped excursions is reported.

    Args:
        params (BesselParams): Dimension in (0, 2)
        local_time_budget (float): epsilon, local-time window [0, epsilon]
        t_min (float): Shortest excursion kept
        t_max (float): Longest excursion kept
        dt (float): Grid spacing for attached excursion paths
        rng: numpy Generator
        attach_paths (bool): Sample an excursion path for every point

    Returns:
        ExcursionPPP sorted by local time
    """
    if not 0 < params.delta < 2:
        raise ParameterError(f"excursion PPP needs delta in (0, 2), got {params.delta}")
    if not t_min > 0:
        raise ParameterError("t_min must be positive: the length intensity is not integrable at 0")
    if not t_max > t_min:
        raise ParameterError(f"need t_min < t_max, got {t_min} >= {t_max}")
    if local_time_budget < 0:
        raise ParameterError("local time budget must be non-negative")

    c_delta = params.delta / 2.0
    beta = params.delta / 2.0 - 1.0
    expected_count = c_delta * local_time_budget * _length_integral(beta, t_min, t_max)
    dropped = local_time_budget * t_min ** (params.delta / 2.0)

    points: List[ExcursionPoint] = []
    if local_time_budget > 0:
        count = int(rng.poisson(expected_count))
        u = np.sort(rng.uniform(0.0, local_time_budget, size=count))
        upper = 0.0 if math.isinf(t_max) else t_max**beta
        lower = t_min**beta
        lengths = (lower + rng.uniform(size=count) * (upper - lower)) ** (1.0 / beta)
        for ui, ti in zip(u, lengths):
            exc = sample_bessel_excursion(params, float(ti), dt, rng) if attach_paths else None
            points.append(ExcursionPoint(local_time_u=float(ui), length_t=float(ti), excursion=exc))

    logger.debug(
        f"PPP delta={params.delta} eps={local_time_budget}: {len(points)} points "
        f"(mean {expected_count:.4g}), dropped length {dropped:.3g}"
    )
    return ExcursionPPP(
        points=points,
        local_time_budget=local_time_budget,
        t_min=t_min,
        t_max=t_max,
        expected_count=expected_count,
        dropped_expected_length=dropped,
    )


def concatenate_excursions(ppp: ExcursionPPP) -> SamplePath:
    """Glue the attached excursions in local-time order into one BES^delta path"""
    times = [np.zeros(1)]
    values = [np.zeros(1)]
    clock = 0.0
    for point in ppp.points:
        if point.excursion is None:
            raise ParameterError("PPP was sampled without excursion paths")
        path = point.excursion.path
        times.append(clock + path.times[1:])
        values.append(path.values[1:])
        clock += point.length_t
    return SamplePath(times=np.concatenate(times), values=np.concatenate(values))
