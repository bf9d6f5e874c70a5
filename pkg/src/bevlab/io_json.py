"""Versioned JSON schemas and canonical, byte-deterministic serialization.

Floats are written with 17 significant digits so every value round-trips
exactly; masks are run-length encoded row-major (counts alternate starting
with the background run).  File writes go through a temp file and rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .bezier import sample_curve
from .grid import FeatureGrid
from .losses import GroundTruth
from .scene import GridSpec, Scene

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Payload violates a file schema or its invariants."""


def _format_float(x: float) -> str:
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("cannot serialize non-finite float")
    s = format(x, ".17g")
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def _encode(obj, out: list[str]):
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for i, v in enumerate(seq):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def dumps_canonical(obj) -> str:
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def write_json_atomic(path: str | Path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(dumps_canonical(payload))
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, first run counts background (zeros)."""
    flat = np.asarray(mask).ravel().astype(bool)
    runs: list[int] = []
    current, count = False, 0
    for v in flat:
        if v == current:
            count += 1
        else:
            runs.append(count)
            current, count = v, 1
    runs.append(count)
    return runs


def rle_to_mask(runs: list[int], h: int, w: int) -> np.ndarray:
    if any(run < 0 for run in runs):
        raise SchemaError("rle runs must be non-negative")
    total = sum(runs)
    if total != h * w:
        raise SchemaError(f"rle length {total} != {h}*{w}")
    flat = np.zeros(total)
    pos, value = 0, False
    for run in runs:
        if value:
            flat[pos : pos + run] = 1.0
        pos += run
        value = not value
    return flat.reshape(h, w)


# --- scene files -------------------------------------------------------------


def scene_to_payload(scene: Scene) -> dict:
    spec = scene.grid_spec
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": scene.seed,
        "grid": {"h": spec.h, "w": spec.w, "cell_m": spec.cell_m},
        "features": scene.feature_grid.data.ravel().tolist(),
        "instances": [
            {
                "ctrl": scene.gt.ctrl[i].tolist(),
                "class": int(scene.gt.labels[i]),
                "mask_rle": mask_to_rle(scene.gt.masks[i]),
            }
            for i in range(scene.gt.n_instances)
        ],
        "adjacency": [
            [int(i), int(j)] for i, j in zip(*np.nonzero(scene.gt.adjacency))
        ],
    }


def scene_from_payload(payload: dict) -> Scene:
    try:
        grid = payload["grid"]
        spec = GridSpec(int(grid["h"]), int(grid["w"]), float(grid["cell_m"]))
        features = np.asarray(payload["features"], dtype=float)
        if features.size % (spec.h * spec.w) != 0:
            raise SchemaError("feature array length is not a multiple of h*w")
        channels = features.size // (spec.h * spec.w)
        instances = payload["instances"]
        n = len(instances)
        ctrl = np.array([inst["ctrl"] for inst in instances], dtype=float).reshape(
            n, -1, 3
        ) if n else np.zeros((0, 4, 3))
        masks = (
            np.stack([rle_to_mask(inst["mask_rle"], spec.h, spec.w) for inst in instances])
            if n
            else np.zeros((0, spec.h, spec.w))
        )
        labels = np.array([int(inst["class"]) for inst in instances], dtype=int)
        adjacency = np.zeros((n, n), dtype=int)
        for i, j in payload.get("adjacency", []):
            adjacency[int(i), int(j)] = 1
        gt = GroundTruth(ctrl, masks, labels, adjacency)
        return Scene(
            grid_spec=spec,
            gt=gt,
            feature_grid=FeatureGrid(
                features.reshape(spec.h, spec.w, channels), spec.cell_m
            ),
            seed=int(payload.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed scene payload: {exc}") from exc


# --- prediction files --------------------------------------------------------

POLYLINE_CONSISTENCY_TOL = 1e-9


def prediction_to_payload(
    ctrl: np.ndarray,
    confidences: np.ndarray,
    classes: np.ndarray,
    adjacency_scores: np.ndarray,
    polyline_samples: int = 10,
) -> dict:
    """Prediction file: per-instance control points with their derived
    polyline, confidence and class, plus a scored adjacency edge list."""
    n = len(ctrl)
    edges = []
    adjacency_scores = np.asarray(adjacency_scores, dtype=float).reshape(n, n) if n else np.zeros((0, 0))
    for i in range(n):
        for j in range(n):
            if i != j and adjacency_scores[i, j] > 0:
                edges.append([int(i), int(j), float(adjacency_scores[i, j])])
    return {
        "schema_version": SCHEMA_VERSION,
        "instances": [
            {
                "ctrl": np.asarray(ctrl[i], dtype=float).tolist(),
                "polyline": sample_curve(np.asarray(ctrl[i], dtype=float), polyline_samples).tolist(),
                "confidence": float(confidences[i]),
                "class": int(classes[i]),
            }
            for i in range(n)
        ],
        "adjacency": edges,
    }


def prediction_from_payload(payload: dict):
    """Parse and validate a prediction payload.

    Returns (ctrl (n,P,3), polylines list, confidences (n,), classes (n,),
    adjacency scores (n, n)).

    Raises:
        SchemaError: out-of-range confidence or a polyline that is not the
            sampling of its own control points.
    """
    try:
        instances = payload["instances"]
        n = len(instances)
        confs = np.array([float(inst["confidence"]) for inst in instances])
        if n and (confs.min() < 0.0 or confs.max() > 1.0):
            raise SchemaError("confidences must lie in [0, 1]")
        ctrl = [np.asarray(inst["ctrl"], dtype=float) for inst in instances]
        polylines = [np.asarray(inst["polyline"], dtype=float) for inst in instances]
        for c, p in zip(ctrl, polylines):
            resampled = sample_curve(c, p.shape[0] - 1)
            if np.abs(resampled - p).max() > POLYLINE_CONSISTENCY_TOL:
                raise SchemaError("polyline is not the sampling of its control points")
        classes = np.array([int(inst["class"]) for inst in instances], dtype=int)
        adjacency = np.zeros((n, n))
        for i, j, s in payload.get("adjacency", []):
            adjacency[int(i), int(j)] = float(s)
        ctrl_arr = np.stack(ctrl) if n else np.zeros((0, 4, 3))
        return ctrl_arr, polylines, confs, classes, adjacency
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed prediction payload: {exc}") from exc
