"""
Artifact writers: canonical JSON reports, CSV side files, PPM images,
field grids, edge lists and trace tables
"""

import io
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from PIL import Image

from fields.gff import LatticeField
from processes.loewner import DrivingPath, Trace
from topology.components import AdjacencyGraph
from utils.logger import setup_logger

logger = setup_logger("output")

FLOAT_FORMAT = "%.12g"
LABEL_HASH = 2654435761
FLAT_GRAY = 128

PathLike = Union[str, Path]


def canonical(obj: Any) -> Any:
    """Plain JSON types with floats rounded through %.12g and non-finite values as None"""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [canonical(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [canonical(obj.real), canonical(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return None
        return float(FLOAT_FORMAT % value)
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


def dumps_canonical(obj: Any) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(obj: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(obj))
    return path


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """UTF-8 CSV with a header row and LF line endings"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8", float_format=FLOAT_FORMAT)
    return path


def write_report(report, path: PathLike) -> List[Path]:
    """
    Write a RunReport as canonical JSON plus one CSV per table

    Side files are named <stem>_<table>.csv next to the JSON file. IO errors
    propagate unchanged.

    Args:
        report: RunReport
        path: Target .json path

    Returns:
        Paths written, JSON first
    """
    path = Path(path)
    written = [write_json(report.to_dict(), path)]
    for name, frame in sorted(report.tables.items()):
        written.append(write_csv(frame, path.with_name(f"{path.stem}_{name}.csv")))
    logger.info(f"report written to {path} ({len(written) - 1} side files)")
    return written


def label_color(label: int) -> tuple:
    if label == 0:
        return (255, 255, 255)
    h = (int(label) * LABEL_HASH) & 0xFFFFFF
    return ((h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF)


def _grayscale(background: np.ndarray) -> np.ndarray:
    values = np.asarray(background, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.full(values.shape, FLAT_GRAY, dtype=np.uint8)
    return np.rint(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)


def render_rgb(grid: np.ndarray, background: Optional[np.ndarray] = None) -> np.ndarray:
    """
    RGB array for a bit grid or a label grid, in image orientation

    Bit grids: set pixels white, the rest grayscale from background or black.
    Label grids: label 0 white, every other label hashed to a fixed color.
    Row 0 of the grid (the real axis) becomes the bottom image row.
    """
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError(f"need a non-empty 2-d grid, got shape {grid.shape}")
    if grid.dtype == bool:
        if background is None:
            rgb = np.zeros(grid.shape + (3,), dtype=np.uint8)
        else:
            rgb = np.repeat(_grayscale(background)[:, :, np.newaxis], 3, axis=2)
        rgb[grid] = 255
    else:
        labels = grid.astype(np.int64)
        h = (labels * LABEL_HASH) & 0xFFFFFF
        rgb = np.stack([(h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF], axis=2).astype(np.uint8)
        rgb[labels == 0] = 255
    return np.ascontiguousarray(rgb[::-1])


def render_image(grid: np.ndarray, background: Optional[np.ndarray] = None) -> bytes:
    """Binary PPM (P6) bytes with header "P6\\n<w> <h>\\n255\\n" """
    buffer = io.BytesIO()
    Image.fromarray(render_rgb(grid, background)).save(buffer, format="PPM")
    return buffer.getvalue()


def write_image(grid: np.ndarray, path: PathLike, background: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(render_image(grid, background))
    return path


def write_field(field: LatticeField, path: PathLike) -> Path:
    """JSON header line followed by the little-endian float64 grid"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(field.to_bytes())
    return path


def read_field(path: PathLike) -> LatticeField:
    return LatticeField.from_bytes(Path(path).read_bytes())


def edge_frame(graph: AdjacencyGraph) -> pd.DataFrame:
    rows = [(u, v, graph.witnesses.get((u, v), 0)) for u, v in sorted(graph.edges)]
    return pd.DataFrame(rows, columns=["u", "v", "witnesses"])


def write_edge_list(graph: AdjacencyGraph, path: PathLike) -> Path:
    return write_csv(edge_frame(graph), path)


def trace_frame(trace: Trace) -> pd.DataFrame:
    pts = np.asarray(trace.points, dtype=complex)
    return pd.DataFrame({"t": np.asarray(trace.times, dtype=float), "re": pts.real, "im": pts.imag})


def driving_frame(path: DrivingPath) -> pd.DataFrame:
    data: Dict[str, Any] = {"t": path.times, "W": path.W}
    for k in range(path.V.shape[0]):
        data[f"V_{k + 1}"] = path.V[k]
    return pd.DataFrame(data)
