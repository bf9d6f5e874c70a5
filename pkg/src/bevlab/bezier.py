"""Bezier curve primitives: Bernstein bases, sampling, and least-squares fitting.

Curves of order N are defined by N+1 control points.  Dense polylines are
extracted with a single (L+1)x(N+1) basis-matrix multiplication; the same
matrix drives the least-squares fit used to build ground-truth control points
from annotated polylines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FitError(ValueError):
    """Raised when a polyline cannot support a control-point fit."""


def binomial(n: int, k: int) -> float:
    """Binomial coefficient C(n, k) via the multiplicative recurrence.

    Exact in double precision for n <= 20, which covers every curve order
    this package admits.
    """
    if k < 0 or k > n:
        return 0.0
    k = min(k, n - k)
    out = 1.0
    for i in range(k):
        out = out * (n - i) / (i + 1)
    return out


def bernstein_basis(n: int, order: int, t: float) -> float:
    """Evaluate the degree-`order` Bernstein basis polynomial with index `n` at `t`.

    Returns C(order, n) * t**n * (1-t)**(order-n).

    Raises:
        ValueError: if n is outside [0, order] or t outside [0, 1].
    """
    if order < 1:
        raise ValueError(f"curve order must be >= 1, got {order}")
    if not 0 <= n <= order:
        raise ValueError(f"basis index {n} outside [0, {order}]")
    if not (np.isfinite(t) and 0.0 <= t <= 1.0):
        raise ValueError(f"parameter t={t} outside [0, 1]")
    return binomial(order, n) * t**n * (1.0 - t) ** (order - n)


@dataclass(frozen=True)
class BernsteinMatrix:
    """Dense Bernstein basis matrix.

    Attributes:
        entries: (L+1, N+1) array; row l holds the basis weights at t_l.
        t_values: (L+1,) curve parameters in [0, 1].
    """

    entries: np.ndarray
    t_values: np.ndarray

    @property
    def order(self) -> int:
        return self.entries.shape[1] - 1

    @property
    def samples(self) -> int:
        return self.entries.shape[0] - 1


def _basis_rows(order: int, t_values: np.ndarray) -> np.ndarray:
    """Stack Bernstein basis rows for arbitrary parameters (vectorized over t)."""
    t = np.asarray(t_values, dtype=float)[:, None]
    n = np.arange(order + 1)[None, :]
    coef = np.array([binomial(order, k) for k in range(order + 1)])[None, :]
    return coef * t**n * (1.0 - t) ** (order - n)


def bernstein_matrix(order: int, samples: int) -> BernsteinMatrix:
    """Basis matrix with L+1 uniformly spaced parameters t_l = l/L.

    Every row is a partition of unity; with t_0 = 0 and t_L = 1 the first and
    last rows select the endpoint control points exactly.
    """
    if order < 1:
        raise ValueError(f"curve order must be >= 1, got {order}")
    if samples < 1:
        raise ValueError(f"sample count must be >= 1, got {samples}")
    t = np.arange(samples + 1, dtype=float) / samples
    return BernsteinMatrix(entries=_basis_rows(order, t), t_values=t)


def sample_curve(ctrl: np.ndarray, samples: int) -> np.ndarray:
    """Extract L+1 uniformly spaced curve points as the matrix product B @ C.

    Args:
        ctrl: (N+1, dim) control points, any coordinate dimension.
        samples: L, number of segments; returns L+1 points.

    Returns:
        (L+1, dim) polyline; first and last rows equal ctrl[0] and ctrl[-1]
        exactly.
    """
    ctrl = np.asarray(ctrl, dtype=float)
    if ctrl.ndim != 2 or ctrl.shape[0] < 2:
        raise ValueError(f"control points must be (N+1, dim) with N >= 1, got {ctrl.shape}")
    basis = bernstein_matrix(ctrl.shape[0] - 1, samples)
    return basis.entries @ ctrl


def _chord_parameters(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total <= 0.0:
        raise FitError("degenerate polyline: zero total chord length")
    return np.concatenate([[0.0], np.cumsum(seg)]) / total


def fit_control_points(
    poly: np.ndarray, order: int, parameterization: str = "uniform"
) -> np.ndarray:
    """Least-squares control points minimising ||B C - P||^2.

    With the default uniform index parameterization (t_l = l/L) a polyline that
    was itself sampled from an order-N curve round-trips to its original
    control points.  Chord-length parameterization is available for raggedly
    spaced input points.

    Raises:
        FitError: too few points, duplicate/degenerate points, or a
            rank-deficient system.
    """
    poly = np.asarray(poly, dtype=float)
    if poly.ndim != 2:
        raise FitError(f"polyline must be (L+1, dim), got {poly.shape}")
    n_pts = poly.shape[0]
    if n_pts < order + 1:
        raise FitError(f"need at least {order + 1} points to fit order {order}, got {n_pts}")
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    if seg.sum() <= 0.0:
        raise FitError("degenerate polyline: all points identical")
    if parameterization == "uniform":
        t = np.arange(n_pts, dtype=float) / (n_pts - 1)
    elif parameterization == "chord":
        t = _chord_parameters(poly)
    else:
        raise ValueError(f"unknown parameterization {parameterization!r}")
    basis = _basis_rows(order, t)
    ctrl, _, rank, _ = np.linalg.lstsq(basis, poly, rcond=None)
    if rank < order + 1:
        raise FitError(f"rank-deficient fit: rank {rank} < {order + 1}")
    return ctrl
