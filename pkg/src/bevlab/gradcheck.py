"""Finite-difference verification of every analytic gradient in the package.

Central differences at h=1e-6 in double precision against: bilinear sampling
(d/dxy), each deformable attention variant (d/dquery and d/drefs), standard
cross attention (d/dquery), the L1 regression loss, and the sampled mask BCE
term.  Sample points are kept away from bilinear lattice kinks.
"""

from __future__ import annotations

import numpy as np

from .attention import (
    deform_attention_grad,
    init_deform_params,
    init_standard_params,
    mpda,
    spda,
    standard_attention_grad,
    standard_cross_attention,
)
from .grid import FeatureGrid, bilinear_sample, bilinear_sample_grad
from .losses import (
    bce,
    l1_regression_grad,
    l1_regression_loss,
    map_values_at,
    mask_bce_grad,
    sample_mask_points,
)
from .matching import Assignment

FD_STEP = 1e-6


def _rel(analytic: float, fd: float) -> float:
    return abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)


def _interior_points(rng: np.random.Generator, n: int, h: int, w: int) -> np.ndarray:
    ij = np.stack([rng.integers(1, w - 1, n), rng.integers(1, h - 1, n)], axis=1)
    frac = rng.uniform(0.2, 0.8, (n, 2))
    return (ij - 0.5 + frac) / np.array([w, h])


def check_bilinear(seed: int) -> float:
    rng = np.random.default_rng(seed)
    grid = FeatureGrid(rng.normal(size=(8, 8, 4)))
    pts = _interior_points(rng, 12, 8, 8)
    grad_xy, _ = bilinear_sample_grad(grid, pts)
    worst = 0.0
    for p, ana in zip(pts, grad_xy):
        for axis in range(2):
            hi, lo = p.copy(), p.copy()
            hi[axis] += FD_STEP
            lo[axis] -= FD_STEP
            fd = (bilinear_sample(grid, hi[None])[0] - bilinear_sample(grid, lo[None])[0]) / (
                2 * FD_STEP
            )
            for c in range(grid.channels):
                worst = max(worst, _rel(ana[c, axis], fd[c]))
    return worst


def _check_deform(seed: int, collapse_to_point: bool) -> float:
    rng = np.random.default_rng(seed)
    d, heads, k = 8, 4, 2
    grid = FeatureGrid(rng.normal(size=(8, 8, d)))
    params = init_deform_params(seed, d, heads, k)
    query = rng.normal(size=d)
    refs = (
        np.tile(rng.uniform(0.3, 0.7, 2), (heads, 1))
        if collapse_to_point
        else rng.uniform(0.25, 0.75, (heads, 2))
    )
    u = rng.normal(size=d)
    d_q, d_refs = deform_attention_grad(query, grid, refs, params, u)

    def value(q, r):
        return float(u @ mpda(q, grid, r, params))

    worst = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = FD_STEP
        fd = (value(query + e, refs) - value(query - e, refs)) / (2 * FD_STEP)
        worst = max(worst, _rel(d_q[i], fd))
    for h in range(heads):
        for axis in range(2):
            e = np.zeros_like(refs)
            e[h, axis] = FD_STEP
            fd = (value(query, refs + e) - value(query, refs - e)) / (2 * FD_STEP)
            worst = max(worst, _rel(d_refs[h, axis], fd))
    return worst


def check_spda(seed: int) -> float:
    # single-point anchoring: all heads share one reference point
    rng = np.random.default_rng(seed)
    d, heads, k = 8, 4, 2
    grid = FeatureGrid(rng.normal(size=(8, 8, d)))
    params = init_deform_params(seed, d, heads, k)
    query = rng.normal(size=d)
    ref = rng.uniform(0.3, 0.7, 2)
    u = rng.normal(size=d)
    d_q, d_refs = deform_attention_grad(query, grid, np.tile(ref, (heads, 1)), params, u)
    d_point = d_refs.sum(axis=0)  # the shared point moves every head anchor

    def value(q, r):
        return float(u @ spda(q, grid, r, params))

    worst = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = FD_STEP
        fd = (value(query + e, ref) - value(query - e, ref)) / (2 * FD_STEP)
        worst = max(worst, _rel(d_q[i], fd))
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = FD_STEP
        fd = (value(query, ref + e) - value(query, ref - e)) / (2 * FD_STEP)
        worst = max(worst, _rel(d_point[axis], fd))
    return worst


def check_mpda(seed: int) -> float:
    return _check_deform(seed, collapse_to_point=False)


def check_bda(seed: int) -> float:
    # control points anchor the heads; identical math, distinct anchor source
    return _check_deform(seed + 7919, collapse_to_point=False)


def check_standard(seed: int) -> float:
    rng = np.random.default_rng(seed)
    d = 8
    grid = FeatureGrid(rng.normal(size=(6, 6, d)))
    params = init_standard_params(seed, d)
    query = rng.normal(size=d)
    u = rng.normal(size=d)
    grad = standard_attention_grad(query, grid, params, u)
    worst = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = FD_STEP
        fd = (
            u @ standard_cross_attention(query + e, grid, params)
            - u @ standard_cross_attention(query - e, grid, params)
        ) / (2 * FD_STEP)
        worst = max(worst, _rel(grad[i], fd))
    return worst


def check_l1(seed: int) -> float:
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.2, 0.8, (4, 4, 3))
    gt = rng.uniform(0.2, 0.8, (3, 4, 3))
    assignment = Assignment(((0, 1), (2, 0), (3, 2)), 0.0)
    grad = l1_regression_grad(pred, gt, assignment)
    worst = 0.0
    for idx in np.ndindex(pred.shape):
        bump = np.zeros_like(pred)
        bump[idx] = FD_STEP
        fd = (
            l1_regression_loss(pred + bump, gt, assignment)
            - l1_regression_loss(pred - bump, gt, assignment)
        ) / (2 * FD_STEP)
        if abs(fd) > 1e-10 or abs(grad[idx]) > 1e-10:
            worst = max(worst, _rel(grad[idx], fd))
    return worst


def check_mask_bce(seed: int) -> float:
    # wider step: the loss is O(1), so h=1e-6 differences drown in roundoff
    step = 1e-5
    rng = np.random.default_rng(seed)
    h = w = 6
    pre = rng.normal(size=(h, w))
    gt_mask = (rng.uniform(size=(h, w)) > 0.5).astype(float)
    pts = sample_mask_points(32, seed)
    grad = mask_bce_grad(pre, gt_mask, pts)

    def loss(p):
        from .decoder import sigmoid

        return float(bce(map_values_at(sigmoid(p), pts), map_values_at(gt_mask, pts)).mean())

    worst = 0.0
    for idx in np.ndindex(pre.shape):
        bump = np.zeros((h, w))
        bump[idx] = step
        fd = (loss(pre + bump) - loss(pre - bump)) / (2 * step)
        if abs(fd) > 1e-10 or abs(grad[idx]) > 1e-10:
            worst = max(worst, _rel(grad[idx], fd))
    return worst


CHECKS = {
    "bilinear_sample": check_bilinear,
    "spda": check_spda,
    "mpda": check_mpda,
    "bda": check_bda,
    "standard_attention": check_standard,
    "l1_regression": check_l1,
    "mask_bce": check_mask_bce,
}


def run_gradcheck(seed: int = 0, rounds: int = 3) -> dict[str, float]:
    """Max relative error per checked operation over `rounds` seeds."""
    report: dict[str, float] = {}
    for name, fn in CHECKS.items():
        report[name] = max(fn(seed + r) for r in range(rounds))
    return report
