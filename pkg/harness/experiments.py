"""
Experiment registry, seed fan-out and run reports
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import integrate, stats

from analysis.dimensions import box_dimension, sle_dimension
from analysis.metrics import coverage_stats, delta_close_check, densify, disk_region, px_to_bounded
from analysis.recovery import (
    fan_right_boundary,
    fan_unit,
    inversion_mask,
    ladder_seed,
    recover_flow_line,
    recovery_error,
    reversal_seed,
    reversal_summary,
    reversed_setup,
    summarize_ladder,
)
from fields.fan import ImaginaryGeometryParams, admissible_angle_range, build_fan, trace_angle
from fields.gff import (
    DEFAULT_SMOOTHING_RADIUS,
    BoundarySpec,
    LatticeField,
    TracerConfig,
    fan_boundary,
    harmonic_extension,
    sample_dgff,
    smooth_field,
)
from harness import VERSION
from harness.config import ExperimentConfig, knob
from harness.output import driving_frame, trace_frame, write_csv, write_edge_list, write_field, write_image, write_json
from processes.bessel import BesselParams, bessel_transition_density, excursion_max_exceedance, sample_besq_at
from processes.bessel import sample_excursion_ppp, time_grid
from processes.loewner import (
    RIGHT,
    DrivingPath,
    ForcePoint,
    count_self_intersections,
    drive_sle,
    drive_sle_rho_bessel,
    exit_side_stats,
    loewner_trace,
    rho_limit_stats,
    sw_martingale_samples,
)
from topology.components import adjacency_graph, chain_between, extract_components, is_connected
from utils.errors import ConfigError
from utils.logger import setup_logger
from utils.rng import stream

logger = setup_logger("experiments")

SeedResult = Dict[str, Any]
Aggregate = Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]

COMMON_KNOBS: Dict[str, Any] = {"save_artifacts": True}
FAN_KNOBS: Dict[str, Any] = {
    "theta1": None,
    "theta2": None,
    "step": 0.5,
    "smoothing_radius": DEFAULT_SMOOTHING_RADIUS,
    "thickness": 1,
}


@dataclass
class RunReport:
    config: Dict[str, Any]
    per_seed: List[SeedResult]
    aggregates: Optional[Dict[str, Any]]
    wall_clock: float
    version: str = VERSION
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)

    def body(self) -> Dict[str, Any]:
        """Everything that must be reproducible from the config"""
        return {
            "config": self.config,
            "per_seed": self.per_seed,
            "aggregates": self.aggregates,
            "version": self.version,
            "artifacts": self.artifacts,
        }

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.body(), wall_clock=self.wall_clock)


@dataclass(frozen=True)
class Experiment:
    name: str
    seed_fn: Callable[[ExperimentConfig, int, Optional[Path]], SeedResult]
    aggregate_fn: Callable[[ExperimentConfig, List[SeedResult]], Aggregate]
    knobs: Dict[str, Any]
    description: str


REGISTRY: Dict[str, Experiment] = {}


def register(
    name: str,
    knobs: Dict[str, Any],
    description: str,
    seed_fn: Callable[[ExperimentConfig, int, Optional[Path]], SeedResult],
    aggregate_fn: Callable[[ExperimentConfig, List[SeedResult]], Aggregate],
) -> Experiment:
    experiment = Experiment(name, seed_fn, aggregate_fn, dict(COMMON_KNOBS, **knobs), description)
    REGISTRY[name] = experiment
    return experiment


def rng_for(config: ExperimentConfig, seed: int, tag: str) -> np.random.Generator:
    return stream(config.base_seed, config.experiment, seed, tag)


# ---------------------------------------------------------------------------
# shared helpers


def _mean_se(values: Sequence[float]) -> Dict[str, Any]:
    x = np.asarray([v for v in values if v is not None], dtype=float)
    if x.size == 0:
        return {"mean": None, "se": None, "n": 0}
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else None
    return {"mean": float(x.mean()), "se": se, "n": int(x.size)}


def _rate(successes: int, n: int) -> Dict[str, Any]:
    if n == 0:
        return {"rate": None, "se": None, "n": 0}
    p = successes / n
    return {"rate": p, "se": math.sqrt(p * (1.0 - p) / n), "n": n}


def _artifact(config: ExperimentConfig, seed: int, out_dir: Optional[Path], suffix: str) -> Optional[Path]:
    if out_dir is None or not knob(config, "save_artifacts", True, bool):
        return None
    return out_dir / f"{config.experiment}_seed{seed:03d}_{suffix}"


def _angle_range(config: ExperimentConfig, params: ImaginaryGeometryParams) -> Tuple[float, float]:
    """Knob values, or the middle half of the admissible range"""
    lo, hi = admissible_angle_range(params)
    inset = (hi - lo) / 4.0
    return knob(config, "theta1", lo + inset, float), knob(config, "theta2", hi - inset, float)


def _ladder(config: ExperimentConfig, params: ImaginaryGeometryParams) -> List[float]:
    """Angles stepping down toward the lower end of the admissible range"""
    lo, hi = admissible_angle_range(params)
    default = [lo + f * (hi - lo) for f in (0.3, 0.2, 0.1)]
    thetas = knob(config, "thetas", None, list)
    return [float(t) for t in (default if thetas is None else thetas)]


def _tracer(config: ExperimentConfig) -> TracerConfig:
    return TracerConfig(
        step=knob(config, "step", 0.5, float),
        smoothing_radius=knob(config, "smoothing_radius", DEFAULT_SMOOTHING_RADIUS, float),
    )


def _sample_field(config: ExperimentConfig, params: ImaginaryGeometryParams, seed: int) -> LatticeField:
    boundary = fan_boundary(params, config.nx, config.ny)
    return sample_dgff(config.nx, config.ny, boundary, rng_for(config, seed, "gff"))


def _seed_fan(config: ExperimentConfig, seed: int):
    params = config.ig_params()
    theta1, theta2 = _angle_range(config, params)
    field_sample = _sample_field(config, params, seed)
    fan = build_fan(
        field_sample,
        params,
        theta1,
        theta2,
        config.n_angles,
        _tracer(config),
        thickness=knob(config, "thickness", 1, int),
    )
    return field_sample, fan


def _monotone_violations(values: Sequence[float], ses: Sequence[float]) -> int:
    """Adjacent pairs where the sequence drops by more than two combined standard errors"""
    count = 0
    for k in range(len(values) - 1):
        if values[k] is None or values[k + 1] is None:
            continue
        tol = 2.0 * math.hypot(ses[k] or 0.0, ses[k + 1] or 0.0)
        if values[k + 1] < values[k] - tol:
            count += 1
    return count


# ---------------------------------------------------------------------------
# bessel


def _bessel_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    n_paths = knob(config, "n_paths", 10000, int)
    y0 = knob(config, "y0", 0.0, float)
    rng = rng_for(config, seed, "besq")
    rows = []
    for delta in knob(config, "deltas", [0.5, 1.0, 1.5, 3.0], list):
        y = sample_besq_at([0.0, config.T], y0, float(delta), rng, size=n_paths)[:, -1]
        rows.append(
            {
                "delta": float(delta),
                "mean": float(y.mean()),
                "se": float(y.std(ddof=1) / math.sqrt(n_paths)),
                "expected": y0 + float(delta) * config.T,
            }
        )
    return {"deltas": rows}


def _bessel_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    rows = []
    for k, first in enumerate(per_seed[0]["deltas"]):
        means = [r["deltas"][k]["mean"] for r in per_seed]
        ses = [r["deltas"][k]["se"] for r in per_seed]
        mean = float(np.mean(means))
        se = math.sqrt(sum(s * s for s in ses)) / len(ses)
        z = (mean - first["expected"]) / se if se > 0 else None
        rows.append(
            {
                "delta": first["delta"],
                "mean": mean,
                "se": se,
                "expected": first["expected"],
                "z": z,
                "within_4se": z is not None and abs(z) <= 4.0,
            }
        )

    masses = {}
    for delta in knob(config, "density_deltas", [1.0, 1.5, 3.0], list):
        params = BesselParams(float(delta))
        mass, _ = integrate.quad(lambda y: bessel_transition_density(params, 1.0, 0.0, y), 0.0, np.inf, epsabs=1e-12)
        masses[str(float(delta))] = mass
    ys = np.round(np.arange(1, 31) * 0.1, 10)
    closed = np.sqrt(2.0 / math.pi) * np.exp(-ys * ys / 2.0)
    reflected_error = float(np.abs(bessel_transition_density(BesselParams(1.0), 1.0, 0.0, ys) - closed).max())

    aggregates = {
        "terminal_means": rows,
        "density_mass": masses,
        "density_mass_max_error": max(abs(m - 1.0) for m in masses.values()) if masses else None,
        "reflected_normal_max_error": reflected_error,
    }
    return aggregates, {"terminal_means": pd.DataFrame(rows)}


register(
    "bessel-check",
    {"deltas": [0.5, 1.0, 1.5, 3.0], "n_paths": 10000, "y0": 0.0, "density_deltas": [1.0, 1.5, 3.0]},
    "exact BESQ terminal means and transition-density normalization",
    seed_fn=_bessel_seed,
    aggregate_fn=_bessel_aggregate,
)


def _excursions_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    params = BesselParams(knob(config, "delta", 1.0, float))
    eps = knob(config, "epsilon", 1.0, float)
    rng = rng_for(config, seed, "excursions")
    t_min = knob(config, "t_min", 1e-4, float)
    ppp = sample_excursion_ppp(params, eps, t_min, math.inf, config.dt, rng, attach_paths=False)
    lengths = np.array([p.length_t for p in ppp.points], dtype=float)
    result: SeedResult = {
        "n_points": len(ppp.points),
        "expected_count": ppp.expected_count,
        "sub_unit_length": float((lengths[lengths < 1.0].sum() + ppp.dropped_expected_length) / eps),
        "big_count": int((lengths >= 1.0).sum()),
    }
    n_exceed = knob(config, "n_exceedance", 0, int)
    if n_exceed > 0:
        p, se = excursion_max_exceedance(params, knob(config, "level", 1.0, float), n_exceed, config.dt, rng)
        result["exceedance"] = {"p": p, "se": se}
    return result


def _excursions_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    delta = knob(config, "delta", 1.0, float)
    eps = knob(config, "epsilon", 1.0, float)
    length = _mean_se([r["sub_unit_length"] for r in per_seed])
    big = _mean_se([r["big_count"] for r in per_seed])
    expected_big = delta * eps / (2.0 - delta)

    def within(stat, target):
        return stat["se"] is not None and abs(stat["mean"] - target) <= 4.0 * stat["se"]

    aggregates = {
        "sub_unit_length": dict(length, expected=1.0, within_4se=within(length, 1.0)),
        "big_count": dict(big, expected=expected_big, within_4se=within(big, expected_big)),
    }
    if "exceedance" in per_seed[0]:
        aggregates["exceedance"] = _mean_se([r["exceedance"]["p"] for r in per_seed])
    return aggregates, {}


register(
    "excursions",
    {"delta": 1.0, "epsilon": 1.0, "t_min": 1e-4, "n_exceedance": 0, "level": 1.0},
    "excursion Poisson point process: small-excursion length and big-excursion count",
    seed_fn=_excursions_seed,
    aggregate_fn=_excursions_aggregate,
)


# ---------------------------------------------------------------------------
# loewner


def _drive_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    rho = knob(config, "rho", -0.5, float)
    path = drive_sle(config.kappa, [ForcePoint(RIGHT, 0.0, rho)], config.T, config.dt, rng_for(config, seed, "drive"))
    result: SeedResult = {
        "W_T": float(path.W[-1]),
        "V_T": float(path.V[0, -1]),
        "threshold_time": path.threshold_time,
        "exact_steps": path.meta["exact_steps"],
        "bounces": path.meta["bounces"],
    }
    if knob(config, "compare_bessel", True, bool):
        bes = drive_sle_rho_bessel(config.kappa, rho, config.T, config.dt, rng_for(config, seed, "bessel"))
        result["W_T_bessel"] = float(bes.W[-1])
        result["floored_steps"] = bes.meta["floored_steps"]
    target = _artifact(config, seed, out_dir, "driver.csv")
    if target is not None:
        result["artifacts"] = [write_csv(driving_frame(path), target).name]
    return result


def _drive_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    sde = [r["W_T"] for r in per_seed]
    aggregates = {
        "W_T": _mean_se(sde),
        "threshold_rate": _rate(sum(r["threshold_time"] is not None for r in per_seed), len(per_seed)),
    }
    if "W_T_bessel" in per_seed[0]:
        bes = [r["W_T_bessel"] for r in per_seed]
        aggregates["W_T_bessel"] = _mean_se(bes)
        aggregates["driver_ks_pvalue"] = float(stats.ks_2samp(sde, bes).pvalue) if len(sde) > 1 else None
    return aggregates, {"terminal": pd.DataFrame(per_seed).drop(columns=["artifacts"], errors="ignore")}


register(
    "drive",
    {"rho": -0.5, "compare_bessel": True},
    "SLE_kappa(rho) driving functions from the SDE scheme and from a Bessel path",
    seed_fn=_drive_seed,
    aggregate_fn=_drive_aggregate,
)


def _constant_driver(config: ExperimentConfig) -> DrivingPath:
    times = time_grid(config.T, config.dt)
    return DrivingPath(
        times=times,
        W=np.zeros_like(times),
        V=np.zeros((0, times.size)),
        kappa=config.kappa,
        dt=float(times[1] - times[0]),
    )


def _trace_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    driver = knob(config, "driver", "sle", str)
    rho = knob(config, "rho", 0.0, float)
    if driver == "constant":
        path = _constant_driver(config)
    elif driver == "sle":
        force_points = [ForcePoint(RIGHT, 0.0, rho)] if rho != 0 else []
        path = drive_sle(config.kappa, force_points, config.T, config.dt, rng_for(config, seed, "drive"))
    else:
        raise ConfigError(f"knob driver must be 'sle' or 'constant', got {driver!r}")
    trace = loewner_trace(path, knob(config, "stride", 1, int))
    tip = complex(trace.points[-1])
    result: SeedResult = {"tip": tip, "n_points": len(trace), "threshold_time": path.threshold_time}
    if driver == "constant":
        result["tip_error"] = abs(tip - 2j * math.sqrt(path.times[-1]))
    if knob(config, "count_crossings", True, bool):
        result["self_intersections"] = count_self_intersections(trace.points)
    target = _artifact(config, seed, out_dir, "trace.csv")
    if target is not None:
        result["artifacts"] = [write_csv(trace_frame(trace), target).name]
    return result


def _trace_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    aggregates: Dict[str, Any] = {"tip_modulus": _mean_se([abs(r["tip"]) for r in per_seed])}
    if "tip_error" in per_seed[0]:
        worst = max(r["tip_error"] for r in per_seed)
        aggregates["tip_error_max"] = worst
        aggregates["tip_within_tolerance"] = worst <= 3.0 * math.sqrt(config.dt)
    if "self_intersections" in per_seed[0]:
        aggregates["self_intersections_total"] = sum(r["self_intersections"] for r in per_seed)
    return aggregates, {}


register(
    "trace",
    {"driver": "sle", "rho": 0.0, "stride": 1, "count_crossings": True},
    "Loewner traces from SLE or constant driving",
    seed_fn=_trace_seed,
    aggregate_fn=_trace_aggregate,
)


def _exit_sides_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    rng = rng_for(config, seed, "exit")
    eps = knob(config, "epsilon", 0.2, float)
    rows = []
    for rho in knob(config, "rhos", [-1.0, -1.5, -1.9, -1.99], list):
        res = exit_side_stats(
            config.kappa,
            float(rho),
            eps,
            knob(config, "n_runs", 50, int),
            config.dt,
            rng,
            T=knob(config, "horizon", None, float),
            stride=knob(config, "stride", 1, int),
        )
        rows.append({"rho": float(rho), "counts": res["counts"], "unclassified": res["unclassified"]})
    return {"levels": rows}


def _exit_sides_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    rows = []
    for k, first in enumerate(per_seed[0]["levels"]):
        counts = {side: sum(r["levels"][k]["counts"][side] for r in per_seed) for side in first["counts"]}
        classified = sum(counts.values())
        row: Dict[str, Any] = {
            "rho": first["rho"],
            "classified": classified,
            "unclassified": sum(r["levels"][k]["unclassified"] for r in per_seed),
        }
        for side, c in counts.items():
            stat = _rate(c, classified)
            row[side], row[f"{side}_se"] = stat["rate"], stat["se"]
        rows.append(row)
    violations = _monotone_violations([r.get("right") for r in rows], [r.get("right_se") for r in rows])
    aggregates = {"levels": rows, "right_monotone_violations": violations, "right_monotone": violations <= 1}
    return aggregates, {"exit_sides": pd.DataFrame(rows)}


register(
    "exit-sides",
    {"rhos": [-1.0, -1.5, -1.9, -1.99], "epsilon": 0.2, "n_runs": 50, "horizon": None, "stride": 1},
    "first exit side of the rectangle [-sqrt(eps), 1/eps] x [0, eps] as rho decreases to -2",
    seed_fn=_exit_sides_seed,
    aggregate_fn=_exit_sides_aggregate,
)


def _martingale_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    rho = knob(config, "rho", 1.0, float)
    z = knob(config, "z", 1.0, float)
    n = knob(config, "n_paths", 10000, int)
    m = sw_martingale_samples(config.kappa, rho, z, config.T, config.dt, n, rng_for(config, seed, "martingale"))
    return {"mean": float(m.mean()), "se": float(m.std(ddof=1) / math.sqrt(n)), "M0": abs(z) ** (rho / config.kappa)}


def _martingale_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    mean = float(np.mean([r["mean"] for r in per_seed]))
    se = math.sqrt(sum(r["se"] ** 2 for r in per_seed)) / len(per_seed)
    m0 = per_seed[0]["M0"]
    z = (mean - m0) / se if se > 0 else None
    return {"mean": mean, "se": se, "M0": m0, "z": z, "within_4se": z is not None and abs(z) <= 4.0}, {}


register(
    "martingale",
    {"rho": 1.0, "z": 1.0, "n_paths": 10000},
    "stopped change-of-measure martingale with one real marked point",
    seed_fn=_martingale_seed,
    aggregate_fn=_martingale_aggregate,
)


def _rho_limit_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    rows = rho_limit_stats(
        config.kappa,
        [float(r) for r in knob(config, "rhos", [-1.0, -1.5, -1.9, -1.99], list)],
        config.T,
        knob(config, "n_runs", 50, int),
        config.dt,
        rng_for(config, seed, "rho-limit"),
    )
    return {"levels": rows}


def _rho_limit_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    frame = pd.concat(
        [pd.DataFrame(r["levels"]).assign(seed=r["seed"]) for r in per_seed], ignore_index=True
    )
    summary = frame.drop(columns=["seed"]).groupby("rho", sort=False).mean().reset_index()
    medians = summary["V_q50"].tolist()
    aggregates = {
        "levels": summary.to_dict(orient="records"),
        "median_V_increasing": all(b >= a for a, b in zip(medians, medians[1:])),
    }
    return aggregates, {"rho_limit": frame}


register(
    "rho-limit",
    {"rhos": [-1.0, -1.5, -1.9, -1.99], "n_runs": 50},
    "V_t, W_t and running minimum of W along rho decreasing to -2",
    seed_fn=_rho_limit_seed,
    aggregate_fn=_rho_limit_aggregate,
)


# ---------------------------------------------------------------------------
# fields and fans


def _gff_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    kind = knob(config, "boundary", "fan", str)
    if kind == "fan":
        boundary = fan_boundary(config.ig_params(), config.nx, config.ny)
    elif kind == "constant":
        boundary = BoundarySpec.constant(knob(config, "value", 0.0, float))
    else:
        raise ConfigError(f"knob boundary must be 'fan' or 'constant', got {kind!r}")
    sample = sample_dgff(config.nx, config.ny, boundary, rng_for(config, seed, "gff"))
    cy, cx = config.ny // 2, config.nx // 2
    interior = sample.values[1:-1, 1:-1]
    result: SeedResult = {
        "center": float(sample.values[cy, cx]),
        "interior_mean": float(interior.mean()),
        "interior_std": float(interior.std()),
    }
    grid_path = _artifact(config, seed, out_dir, "field.grid")
    if grid_path is not None:
        image_path = _artifact(config, seed, out_dir, "field.ppm")
        write_field(sample, grid_path)
        write_image(np.zeros(sample.values.shape, dtype=bool), image_path, background=sample.values)
        result["artifacts"] = [grid_path.name, image_path.name]
    return result


def _gff_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    centers = [r["center"] for r in per_seed]
    stat = _mean_se(centers)
    kind = knob(config, "boundary", "fan", str)
    if kind == "fan":
        boundary = fan_boundary(config.ig_params(), config.nx, config.ny)
    else:
        boundary = BoundarySpec.constant(knob(config, "value", 0.0, float))
    mean_field = harmonic_extension(config.nx, config.ny, boundary)
    harmonic_center = float(mean_field.values[config.ny // 2, config.nx // 2])
    aggregates = {
        "center": stat,
        "center_variance": float(np.var(centers, ddof=1)) if len(centers) > 1 else None,
        "harmonic_center": harmonic_center,
    }
    return aggregates, {}


register(
    "gff",
    {"boundary": "fan", "value": 0.0},
    "discrete Gaussian free field samples with Dirichlet data",
    seed_fn=_gff_seed,
    aggregate_fn=_gff_aggregate,
)


def _fan_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    sample, fan = _seed_fan(config, seed)
    result: SeedResult = {
        "area_fraction": float(fan.raster.mean()),
        "statuses": fan.meta["statuses"],
        "clipped": fan.meta["clipped"],
    }
    image_path = _artifact(config, seed, out_dir, "fan.ppm")
    if image_path is not None:
        sidecar = image_path.with_suffix(".json")
        write_image(fan.raster, image_path, background=sample.values)
        write_json(
            {
                "params": fan.params.to_dict(),
                "angles": fan.angle_grid,
                "origin": fan.origin,
                "statuses": fan.meta["statuses"],
                "smoothing_radius": fan.meta["smoothing_radius"],
            },
            sidecar,
        )
        result["artifacts"] = [image_path.name, sidecar.name]
    return result


def _fan_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    statuses: Dict[str, int] = {}
    for r in per_seed:
        for status, count in r["statuses"].items():
            statuses[status] = statuses.get(status, 0) + count
    return {"area_fraction": _mean_se([r["area_fraction"] for r in per_seed]), "statuses": statuses}, {}


register(
    "fan",
    dict(FAN_KNOBS),
    "fans of flow lines over one GFF sample",
    seed_fn=_fan_seed,
    aggregate_fn=_fan_aggregate,
)


def _components_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    _, fan = _seed_fan(config, seed)
    cm = extract_components(fan.raster)
    sizes = cm.sizes()
    result: SeedResult = {
        "n_components": cm.n_components,
        "frame_components": len(cm.frame_components),
        "largest": int(sizes.max()) if sizes.size else 0,
        "median_size": float(np.median(sizes)) if sizes.size else None,
    }
    image_path = _artifact(config, seed, out_dir, "components.ppm")
    if image_path is not None:
        result["artifacts"] = [write_image(cm.labels, image_path).name]
    return result


def _components_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    return {
        "n_components": _mean_se([r["n_components"] for r in per_seed]),
        "frame_components": _mean_se([r["frame_components"] for r in per_seed]),
    }, {}


register(
    "components",
    dict(FAN_KNOBS),
    "complementary components of the fan",
    seed_fn=_components_seed,
    aggregate_fn=_components_aggregate,
)


def _connectivity_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    _, fan = _seed_fan(config, seed)
    cm = extract_components(fan.raster)
    graph = adjacency_graph(cm, min_shared=knob(config, "min_shared", 1, int))
    connected, n_classes = is_connected(graph)
    result: SeedResult = {
        "connected": bool(connected),
        "graph_components": n_classes,
        "n_components": cm.n_components,
        "n_edges": len(graph.edges),
        "chain_length": None,
        "chain_verified": False,
    }
    if cm.n_components >= 1:
        chain = chain_between(graph, 1, cm.n_components)
        if chain.found:
            links = zip(chain.chain, chain.chain[1:])
            result["chain_length"] = len(chain.chain)
            result["chain_verified"] = all((min(u, v), max(u, v)) in graph.edges for u, v in links)
    edge_path = _artifact(config, seed, out_dir, "edges.csv")
    if edge_path is not None:
        image_path = _artifact(config, seed, out_dir, "components.ppm")
        result["artifacts"] = [write_edge_list(graph, edge_path).name, write_image(cm.labels, image_path).name]
    return result


def _connectivity_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    connected = [r for r in per_seed if r["connected"]]
    return {
        "connectivity_rate": _rate(len(connected), len(per_seed)),
        "connected_with_chain": all(r["chain_verified"] for r in connected),
        "n_components": _mean_se([r["n_components"] for r in per_seed]),
    }, {}


register(
    "connectivity",
    dict(FAN_KNOBS, min_shared=1),
    "connectivity of the component adjacency graph with witness chains",
    seed_fn=_connectivity_seed,
    aggregate_fn=_connectivity_aggregate,
)


def _recover_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    params = config.ig_params()
    theta1, theta2 = _angle_range(config, params)
    tracer = _tracer(config)
    sample = _sample_field(config, params, seed)
    fan = build_fan(sample, params, theta1, theta2, config.n_angles, tracer)
    theta = knob(config, "theta", float(fan.angle_grid[config.n_angles // 2]), float)
    cm = extract_components(fan.raster)

    direct = next((t for a, t in fan.traces if abs(a - theta) <= 1e-12), None)
    if direct is None:
        direct = trace_angle(smooth_field(sample, tracer.smoothing_radius), params, theta, tracer)
    recovered = recover_flow_line(fan, cm, theta)
    error = recovery_error(recovered, direct, config.nx, fan.origin) if len(recovered) else None
    lowest = recover_flow_line(fan, cm, float(fan.angle_grid[0]))
    boundary = fan_right_boundary(fan, cm)
    result: SeedResult = {
        "theta": theta,
        "error": error,
        "boundary_exact": bool(np.array_equal(lowest.points, boundary.points)),
    }

    refined_angles = knob(config, "compare_angles", None, int)
    if refined_angles is not None:
        fine = build_fan(sample, params, theta1, theta2, refined_angles, tracer)
        fine_recovered = recover_flow_line(fine, extract_components(fine.raster), theta)
        result["error_refined"] = (
            recovery_error(fine_recovered, direct, config.nx, fine.origin) if len(fine_recovered) else None
        )
    target = _artifact(config, seed, out_dir, "recovered.csv")
    if target is not None:
        result["artifacts"] = [write_csv(trace_frame(recovered), target).name]
    return result


def _recover_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    tol = px_to_bounded(knob(config, "tolerance_px", 4.0, float), fan_unit(config.nx))
    errors = [r["error"] for r in per_seed if r["error"] is not None]
    aggregates: Dict[str, Any] = {
        "tolerance": tol,
        "success_rate": _rate(sum(e <= tol for e in errors), len(per_seed)),
        "median_error": float(np.median(errors)) if errors else None,
        "boundary_exact_rate": _rate(sum(r["boundary_exact"] for r in per_seed), len(per_seed)),
    }
    if "error_refined" in per_seed[0]:
        refined = [r["error_refined"] for r in per_seed if r.get("error_refined") is not None]
        aggregates["median_error_refined"] = float(np.median(refined)) if refined else None
        if errors and refined:
            aggregates["refinement_not_worse"] = aggregates["median_error_refined"] <= aggregates["median_error"]
    return aggregates, {}


register(
    "recover",
    dict(FAN_KNOBS, theta=None, tolerance_px=4.0, compare_angles=None),
    "flow-line recovery from the fan against the directly traced line",
    seed_fn=_recover_seed,
    aggregate_fn=_recover_aggregate,
)


def _dims_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    target = knob(config, "target", "sle", str)
    n_scales = knob(config, "n_scales", 8, int)
    if target == "sle":
        path = drive_sle(config.kappa, [], config.T, config.dt, rng_for(config, seed, "drive"))
        pts = loewner_trace(path, knob(config, "stride", 1, int)).points
        span = max(np.ptp(pts.real), np.ptp(pts.imag))
        pts = densify(pts, span / 2.0 ** (n_scales + 2))
    elif target == "fan":
        _, fan = _seed_fan(config, seed)
        ys, xs = np.nonzero(fan.raster)
        pts = xs + 1j * ys
    else:
        raise ConfigError(f"knob target must be 'sle' or 'fan', got {target!r}")
    report = box_dimension(pts, n_scales=n_scales)
    return dict(report.to_dict(), target=target)


def _dims_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    slope = _mean_se([r["slope"] for r in per_seed])
    expected = sle_dimension(config.kappa)
    tolerance = knob(config, "tolerance", 0.15, float)
    frame = pd.concat(
        [pd.DataFrame({"seed": r["seed"], "scale": r["scales"], "count": r["counts"]}) for r in per_seed],
        ignore_index=True,
    )
    aggregates = {
        "slope": slope,
        "expected": expected,
        "within_tolerance": abs(slope["mean"] - expected) <= tolerance,
    }
    return aggregates, {"box_counts": frame}


register(
    "dims",
    dict(FAN_KNOBS, target="sle", n_scales=8, stride=1, tolerance=0.15),
    "box-counting dimension of SLE traces or fans",
    seed_fn=_dims_seed,
    aggregate_fn=_dims_aggregate,
)


def _delta_close_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    params = config.ig_params()
    tracer = _tracer(config)
    smoothed = smooth_field(_sample_field(config, params, seed), tracer.smoothing_radius)
    unit = fan_unit(config.nx)
    region = disk_region((config.ny, config.nx), smoothed.origin, knob(config, "radius", 0.5, float) * unit)
    delta_px = knob(config, "delta_px", 8.0, float)
    base = trace_angle(smoothed, params, knob(config, "theta0", 0.0, float), tracer)
    passes = []
    for theta in knob(config, "thetas", [0.2, 0.1, 0.05], list):
        other = trace_angle(smoothed, params, float(theta), tracer)
        passes.append(bool(delta_close_check(base, other, region, delta_px)))
    return {"passes": passes}


def _delta_close_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    thetas = [float(t) for t in knob(config, "thetas", [0.2, 0.1, 0.05], list)]
    rows = []
    for k, theta in enumerate(thetas):
        stat = _rate(sum(r["passes"][k] for r in per_seed), len(per_seed))
        rows.append({"theta": theta, "pass_rate": stat["rate"], "se": stat["se"]})
    violations = _monotone_violations([r["pass_rate"] for r in rows], [r["se"] for r in rows])
    return {"angles": rows, "trend_violations": violations}, {"delta_close": pd.DataFrame(rows)}


register(
    "delta-close",
    dict(FAN_KNOBS, thetas=[0.2, 0.1, 0.05], theta0=0.0, delta_px=8.0, radius=0.5),
    "delta-closeness of nearby flow lines inside a disk",
    seed_fn=_delta_close_seed,
    aggregate_fn=_delta_close_aggregate,
)


def _reversal_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    params = config.ig_params()
    theta1, theta2 = _angle_range(config, params)
    pushed, direct = reversal_seed(
        params,
        theta1,
        theta2,
        config.nx,
        config.ny,
        config.n_angles,
        rng_for(config, seed, "pushed"),
        rng_for(config, seed, "direct"),
        _tracer(config),
    )
    return {"pushed": pushed, "direct": direct}


def _reversal_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    params = config.ig_params()
    theta1, theta2 = _angle_range(config, params)
    reversed_params, r1, r2 = reversed_setup(params, theta1, theta2)
    aggregates = {
        "angle_range": [theta1, theta2],
        "reversed_angle_range": [r1, r2],
        "reversed_boundary": [reversed_params.a, reversed_params.b],
        "mask_fraction": float(inversion_mask((config.ny, config.nx)).mean()),
    }
    aggregates.update(reversal_summary([r["pushed"] for r in per_seed], [r["direct"] for r in per_seed]))
    return aggregates, {}


register(
    "reversal",
    dict(FAN_KNOBS),
    "fans pushed through z -> -1/z against fans with swapped boundary data",
    seed_fn=_reversal_seed,
    aggregate_fn=_reversal_aggregate,
)


def _coverage_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    params = config.ig_params()
    n_runs = knob(config, "n_runs", 20, int)
    res = coverage_stats(
        config.kappa,
        params.a,
        params.b,
        _ladder(config, params),
        knob(config, "R", 0.5, float),
        knob(config, "delta0", 0.05, float),
        n_runs,
        config.dt,
        rng_for(config, seed, "coverage"),
        T=knob(config, "horizon", None, float),
        boundary_tol=knob(config, "boundary_tol", None, float),
    )
    return {"covered": [int(round(row["coverage"] * n_runs)) for row in res["angles"]], "n_runs": n_runs}


def _coverage_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    thetas = _ladder(config, config.ig_params())
    total = sum(r["n_runs"] for r in per_seed)
    rows = []
    for k, theta in enumerate(thetas):
        stat = _rate(sum(r["covered"][k] for r in per_seed), total)
        rows.append({"theta": theta, "coverage": stat["rate"], "se": stat["se"]})
    violations = _monotone_violations([r["coverage"] for r in rows], [r["se"] for r in rows])
    return {"angles": rows, "monotone_violations": violations}, {"coverage": pd.DataFrame(rows)}


register(
    "coverage",
    {"thetas": None, "R": 0.5, "delta0": 0.05, "n_runs": 20, "horizon": None, "boundary_tol": None},
    "coverage of [0, R] by SLE_kappa(rho1; rho2) boundary hits",
    seed_fn=_coverage_seed,
    aggregate_fn=_coverage_aggregate,
)


def _hausdorff_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    params = config.ig_params()
    distances = ladder_seed(
        params, _ladder(config, params), config.nx, config.ny, rng_for(config, seed, "ladder"), _tracer(config)
    )
    return {"distances": distances}


def _hausdorff_aggregate(config: ExperimentConfig, per_seed: List[SeedResult]) -> Aggregate:
    rows = summarize_ladder(_ladder(config, config.ig_params()), [r["distances"] for r in per_seed])
    medians = [r["median"] for r in rows]
    return {
        "ladder": rows,
        "strictly_decreasing": all(b < a for a, b in zip(medians, medians[1:])),
    }, {"ladder": pd.DataFrame(rows)}


register(
    "hausdorff",
    dict(FAN_KNOBS, thetas=None),
    "bounded-metric Hausdorff distance of flow lines to the positive real axis",
    seed_fn=_hausdorff_seed,
    aggregate_fn=_hausdorff_aggregate,
)


# ---------------------------------------------------------------------------
# orchestration


def check_knobs(config: ExperimentConfig) -> Experiment:
    """Registry entry of the configured experiment; unknown knobs are rejected"""
    experiment = REGISTRY.get(config.experiment)
    if experiment is None:
        raise ConfigError(f"unknown experiment {config.experiment!r}; choose one of {', '.join(sorted(REGISTRY))}")
    unknown = sorted(set(config.knobs) - set(experiment.knobs))
    if unknown:
        raise ConfigError(
            f"unknown knob(s) {', '.join(unknown)} for experiment {config.experiment!r}; "
            f"valid knobs: {', '.join(sorted(experiment.knobs))}"
        )
    return experiment


def _run_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path]) -> SeedResult:
    result = REGISTRY[config.experiment].seed_fn(config, seed, out_dir)
    logger.debug(f"{config.experiment} seed {seed} done")
    return dict(result, seed=seed)


def run_seeds(config: ExperimentConfig, out_dir: Optional[Path]) -> List[SeedResult]:
    """Per-seed results in seed order, from a bounded worker pool when threads > 1"""
    seeds = range(config.n_seeds)
    if config.threads == 1 or config.n_seeds <= 1:
        results = [_run_seed(config, seed, out_dir) for seed in seeds]
    else:
        workers = min(config.threads, config.n_seeds)
        results = Parallel(n_jobs=workers)(delayed(_run_seed)(config, seed, out_dir) for seed in seeds)
    return sorted(results, key=lambda r: r["seed"])


def run_experiment(config: ExperimentConfig, write_artifacts: bool = True) -> RunReport:
    """
    Run one experiment for seeds 0..n_seeds-1 and aggregate the results

    Args:
        config (ExperimentConfig): Validated configuration
        write_artifacts (bool): Write per-seed files into config.output_dir

    Returns:
        RunReport; aggregates is None when there are no seeds
    """
    experiment = check_knobs(config)
    out_dir = None
    if write_artifacts:
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"running {experiment.name} ({experiment.description}) with {config.n_seeds} seeds")
    start = time.perf_counter()

    per_seed = run_seeds(config, out_dir)
    artifacts: List[str] = []
    for result in per_seed:
        artifacts.extend(result.pop("artifacts", []))
    aggregates, tables = experiment.aggregate_fn(config, per_seed) if per_seed else (None, {})

    elapsed = time.perf_counter() - start
    logger.info(f"{experiment.name} finished in {elapsed:.1f}s")
    return RunReport(
        config=config.model_dump(),
        per_seed=per_seed,
        aggregates=aggregates,
        wall_clock=elapsed,
        tables=tables,
        artifacts=artifacts,
    )
