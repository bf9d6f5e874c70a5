"""Synthetic BEV scenes: smooth random centerlines, rasterized masks, and
feature grids that embed the ground-truth geometry as smoothed distance
fields plus seeded Gaussian noise.

Coordinates are normalized to [0, 1]; x spans the grid width, y the height,
and z maps linearly to a +-10 m band.  Chained instances share endpoints,
which defines the ground-truth adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bezier import sample_curve
from .grid import FeatureGrid
from .losses import GroundTruth

Z_SPAN_M = 20.0  # normalized z in [0, 1] spans [-10, 10] meters
DEFAULT_MASK_WIDTH_CELLS = 4
GT_POLYLINE_SAMPLES = 32


@dataclass(frozen=True)
class GridSpec:
    h: int = 32
    w: int = 32
    cell_m: float = 0.5

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.cell_m <= 0:
            raise ValueError("invalid grid spec")


DESK_GRID = GridSpec(32, 32, 0.5)
PAPER_GRID = GridSpec(200, 104, 0.5)


@dataclass
class Scene:
    grid_spec: GridSpec
    gt: GroundTruth
    feature_grid: FeatureGrid
    seed: int


def to_meters(poly_norm: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Normalized (x, y, z) points to metric coordinates."""
    poly = np.asarray(poly_norm, dtype=float)
    out = np.empty_like(poly)
    out[..., 0] = poly[..., 0] * spec.w * spec.cell_m
    out[..., 1] = poly[..., 1] * spec.h * spec.cell_m
    out[..., 2] = (poly[..., 2] - 0.5) * Z_SPAN_M
    return out


def _segment_distance_cells(poly_norm: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Per-cell distance (in cells) from each cell center to the polyline."""
    pts = np.asarray(poly_norm, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("polyline must be a non-empty (n, >=2) array")
    px = pts[:, 0] * spec.w
    py = pts[:, 1] * spec.h
    jj, ii = np.meshgrid(np.arange(spec.w) + 0.5, np.arange(spec.h) + 0.5)
    cx = jj.ravel()
    cy = ii.ravel()
    if len(px) == 1:
        return np.hypot(cx - px[0], cy - py[0]).reshape(spec.h, spec.w)
    best = np.full(cx.shape, np.inf)
    for k in range(len(px) - 1):
        ax, ay, bx, by = px[k], py[k], px[k + 1], py[k + 1]
        dx, dy = bx - ax, by - ay
        denom = dx * dx + dy * dy
        if denom == 0.0:
            t = np.zeros_like(cx)
        else:
            t = np.clip(((cx - ax) * dx + (cy - ay) * dy) / denom, 0.0, 1.0)
        d = np.hypot(cx - (ax + t * dx), cy - (ay + t * dy))
        best = np.minimum(best, d)
    return best.reshape(spec.h, spec.w)


def rasterize_centerline(
    poly_norm: np.ndarray, spec: GridSpec, width_cells: int = DEFAULT_MASK_WIDTH_CELLS
) -> np.ndarray:
    """Binary mask: a cell is foreground iff its center lies within
    width_cells / 2 cells of the nearest polyline segment."""
    if width_cells < 1:
        raise ValueError("mask width must be >= 1 cell")
    dist = _segment_distance_cells(poly_norm, spec)
    return (dist <= width_cells / 2.0).astype(float)


def _random_instance(rng: np.random.Generator, order: int, start=None, heading=None):
    """Random smooth control polygon marching from `start` along `heading`."""
    if start is None:
        start = rng.uniform(0.2, 0.8, 2)
    if heading is None:
        heading = rng.uniform(0.0, 2.0 * np.pi)
    step = rng.uniform(0.12, 0.2)
    ctrl = np.empty((order + 1, 3))
    ctrl[0, :2] = start
    z = 0.5 + rng.uniform(-0.02, 0.02)
    ctrl[0, 2] = z
    for k in range(1, order + 1):
        heading += rng.normal(0.0, 0.35)
        nxt = ctrl[k - 1, :2] + step * np.array([np.cos(heading), np.sin(heading)])
        ctrl[k, :2] = np.clip(nxt, 0.05, 0.95)
        z = np.clip(z + rng.uniform(-0.01, 0.01), 0.3, 0.7)
        ctrl[k, 2] = z
    return ctrl, heading


def generate_scene(
    seed: int,
    n_instances: int = 4,
    order: int = 3,
    spec: GridSpec = DESK_GRID,
    channels: int = 32,
    mask_width_cells: int = DEFAULT_MASK_WIDTH_CELLS,
    noise_scale: float = 0.1,
) -> Scene:
    """Deterministic synthetic scene.

    Instances form short chains: with probability ~1/2 an instance starts at
    the previous instance's end control point, which adds a directed
    adjacency edge.  The feature grid mixes a smoothed distance field of the
    ground-truth centerlines into every channel plus Gaussian noise, so
    attention has learnable structure.
    """
    if n_instances < 0:
        raise ValueError("n_instances must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE]))
    ctrls = []
    adjacency = np.zeros((n_instances, n_instances), dtype=int)
    prev_end, prev_heading = None, None
    for i in range(n_instances):
        chain = i > 0 and rng.uniform() < 0.5
        if chain:
            ctrl, heading = _random_instance(rng, order, start=prev_end, heading=prev_heading)
            adjacency[i - 1, i] = 1
        else:
            ctrl, heading = _random_instance(rng, order)
        ctrls.append(ctrl)
        prev_end, prev_heading = ctrl[-1, :2].copy(), heading

    masks = np.zeros((n_instances, spec.h, spec.w))
    field = np.zeros((spec.h, spec.w))
    polylines = []
    for i, ctrl in enumerate(ctrls):
        poly = sample_curve(ctrl, GT_POLYLINE_SAMPLES)
        polylines.append(poly)
        dist = _segment_distance_cells(poly[:, :2], spec)
        masks[i] = (dist <= mask_width_cells / 2.0).astype(float)
        field = np.maximum(field, np.exp(-(dist**2) / 8.0))

    weights = rng.uniform(-1.0, 1.0, channels)
    noise = rng.normal(scale=noise_scale, size=(spec.h, spec.w, channels))
    data = field[:, :, None] * weights[None, None, :] + noise
    gt = GroundTruth(
        ctrl=np.array(ctrls).reshape(n_instances, order + 1, 3),
        masks=masks,
        labels=np.ones(n_instances, dtype=int),
        adjacency=adjacency,
    )
    return Scene(
        grid_spec=spec,
        gt=gt,
        feature_grid=FeatureGrid(data, spec.cell_m),
        seed=int(seed),
    )


def gt_polylines_m(scene: Scene, samples: int = GT_POLYLINE_SAMPLES) -> list[np.ndarray]:
    """Ground-truth polylines in meters, sampled from the control points."""
    return [
        to_meters(sample_curve(ctrl, samples), scene.grid_spec) for ctrl in scene.gt.ctrl
    ]
