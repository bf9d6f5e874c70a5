"""BEV feature grids and bilinear sampling with analytic gradients.

Coordinates handed to the sampler are normalized: x in [0, 1] spans the W
cells (columns), y spans the H cells (rows).  The continuous cell coordinate
follows the align-corners-false convention u = x*W - 0.5, so a point at the
center of cell (i, j) reproduces data[i, j] exactly.  Neighbors outside the
grid contribute zero (zero padding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FeatureGrid:
    """Immutable H x W x C feature map with a metric cell size."""

    data: np.ndarray
    cell_size_m: float = 0.5

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"grid data must be (H, W, C) with all dims >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("grid data must be finite")
        if self.cell_size_m <= 0:
            raise ValueError("cell size must be positive")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def extent_m(self) -> tuple[float, float]:
        """Metric (width, height) extent of the grid."""
        return self.width * self.cell_size_m, self.height * self.cell_size_m


@dataclass
class _Footprint:
    """Per-point bilinear footprint: 4 neighbor indices, weights, validity."""

    rows: np.ndarray  # (n, 4) int
    cols: np.ndarray  # (n, 4) int
    weights: np.ndarray  # (n, 4)
    valid: np.ndarray  # (n, 4) bool
    dwdu: np.ndarray = field(default=None)  # (n, 4) d weight / d u
    dwdv: np.ndarray = field(default=None)  # (n, 4) d weight / d v


def _footprint(h: int, w: int, pts: np.ndarray, with_grad: bool = False) -> _Footprint:
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"sample points must be (n, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("sample points must be finite")
    u = pts[:, 0] * w - 0.5
    v = pts[:, 1] * h - 0.5
    j0 = np.floor(u).astype(int)
    i0 = np.floor(v).astype(int)
    fu = u - j0
    fv = v - i0
    # neighbor order: (i0,j0), (i0,j0+1), (i0+1,j0), (i0+1,j0+1)
    rows = np.stack([i0, i0, i0 + 1, i0 + 1], axis=1)
    cols = np.stack([j0, j0 + 1, j0, j0 + 1], axis=1)
    wu = np.stack([1.0 - fu, fu, 1.0 - fu, fu], axis=1)
    wv = np.stack([1.0 - fv, 1.0 - fv, fv, fv], axis=1)
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    fp = _Footprint(rows=rows, cols=cols, weights=wu * wv, valid=valid)
    if with_grad:
        su = np.array([-1.0, 1.0, -1.0, 1.0])
        sv = np.array([-1.0, -1.0, 1.0, 1.0])
        fp.dwdu = su[None, :] * wv
        fp.dwdv = sv[None, :] * wu
    return fp


def _gather(data: np.ndarray, fp: _Footprint) -> np.ndarray:
    """Neighbor values with zero padding, shape (n, 4, C)."""
    rows = np.clip(fp.rows, 0, data.shape[0] - 1)
    cols = np.clip(fp.cols, 0, data.shape[1] - 1)
    vals = data[rows, cols]
    vals[~fp.valid] = 0.0
    return vals


def sample_array(data: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinearly sample a raw (H, W, C) array at normalized points."""
    fp = _footprint(data.shape[0], data.shape[1], pts)
    return np.einsum("nk,nkc->nc", fp.weights * fp.valid, _gather(data, fp))


def bilinear_sample(grid: FeatureGrid, pts: np.ndarray) -> np.ndarray:
    """Sample the grid at normalized (x, y) points.

    Args:
        grid: feature grid.
        pts: (n, 2) normalized coordinates; values outside [0, 1] are allowed
            and blend with the zero padding.

    Returns:
        (n, C) feature vectors.
    """
    return sample_array(grid.data, pts)


def bilinear_sample_grad(grid: FeatureGrid, pts: np.ndarray):
    """Analytic derivatives of :func:`bilinear_sample`.

    Returns:
        grad_xy: (n, C, 2) d output / d (x, y) per point and channel.
        data_contrib: tuple of (rows, cols, weights), each (n, 4); the
            derivative of output channel c w.r.t. data[rows[p,k], cols[p,k], c]
            is weights[p, k].  Out-of-bounds neighbors carry index -1 and
            weight 0.
    """
    data = grid.data
    fp = _footprint(data.shape[0], data.shape[1], pts, with_grad=True)
    vals = _gather(data, fp)
    # chain rule through u = x*W - 0.5, v = y*H - 0.5
    dout_du = np.einsum("nk,nkc->nc", fp.dwdu * fp.valid, vals) * grid.width
    dout_dv = np.einsum("nk,nkc->nc", fp.dwdv * fp.valid, vals) * grid.height
    grad_xy = np.stack([dout_du, dout_dv], axis=2)
    weights = np.where(fp.valid, fp.weights, 0.0)
    rows = np.where(fp.valid, fp.rows, -1)
    cols = np.where(fp.valid, fp.cols, -1)
    return grad_xy, (rows, cols, weights)
