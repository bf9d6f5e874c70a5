"""Bipartite assignment between predicted and ground-truth instances.

The pairwise cost is the Mask-L1 mix: weighted L1 control-point distance,
point-sampled mask BCE + dice, and negative class probability.  Zeroing the
mask weights yields a pure L1 matcher, zeroing the regression weight a pure
mask matcher.  Assignment is solved exactly with a Kuhn-Munkres O(n^3)
potentials method; rectangular matrices are padded with a cost strictly above
every real entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import QueryState, sigmoid
from .losses import DICE_EPS, GroundTruth, bce, map_values_at, sample_mask_points


@dataclass(frozen=True)
class MatchCost:
    """Matcher weights; the regression weight differs from the loss default."""

    lambda_reg: float = 5.0
    lambda_mask_bce: float = 5.0
    lambda_mask_dice: float = 5.0
    lambda_cls: float = 2.0

    def __post_init__(self):
        ws = (self.lambda_reg, self.lambda_mask_bce, self.lambda_mask_dice, self.lambda_cls)
        if min(ws) < 0:
            raise ValueError("matcher weights must be non-negative")
        if max(ws) == 0:
            raise ValueError("at least one matcher weight must be positive")


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]  # (prediction index, gt index), unique both sides
    total_cost: float


def pairwise_cost(
    pred: QueryState,
    gt: GroundTruth,
    weights: MatchCost | None = None,
    sample_count: int = 100,
    seed: int = 0,
    dense_mask: bool = False,
) -> np.ndarray:
    """(#pred, #gt) Mask-L1 mix cost matrix.

    Mask terms are evaluated at one seeded set of K continuous points shared
    by every (i, j) pair; `dense_mask` switches to evaluating at all cell
    centers instead.
    """
    weights = weights or MatchCost()
    n_pred = pred.ctrl.shape[0]
    n_gt = gt.n_instances
    if n_gt == 0 or n_pred == 0:
        return np.zeros((n_pred, n_gt))
    if pred.ctrl.shape[1:] != gt.ctrl.shape[1:]:
        raise ValueError(
            f"control-point shapes disagree: {pred.ctrl.shape[1:]} vs {gt.ctrl.shape[1:]}"
        )
    h, w = gt.masks.shape[1:]
    if pred.pre_mask.shape[1:] != (h, w):
        raise ValueError("prediction and gt mask grids disagree")

    reg = np.abs(pred.ctrl[:, None] - gt.ctrl[None]).sum(axis=(2, 3))

    if dense_mask:
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pts = np.stack([(jj.ravel() + 0.5) / w, (ii.ravel() + 0.5) / h], axis=1)
    else:
        pts = sample_mask_points(sample_count, seed)
    prob = sigmoid(pred.pre_mask)
    p = np.stack([map_values_at(prob[i], pts) for i in range(n_pred)])  # (n_pred, K)
    g = np.stack([map_values_at(gt.masks[j], pts) for j in range(n_gt)])  # (n_gt, K)
    bce_cost = np.stack([bce(p[i][None], g).mean(axis=1) for i in range(n_pred)])
    inter = p @ g.T
    dice = 2.0 * inter / (p.sum(axis=1)[:, None] + g.sum(axis=1)[None, :] + DICE_EPS)
    dice_cost = 1.0 - dice

    z = pred.class_logits - pred.class_logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    cls_cost = -probs[:, gt.labels]

    return (
        weights.lambda_reg * reg
        + weights.lambda_mask_bce * bce_cost
        + weights.lambda_mask_dice * dice_cost
        + weights.lambda_cls * cls_cost
    )


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost one-to-one assignment of min(n, m) pairs.

    Kuhn-Munkres with row/column potentials, O(n^3).  Deterministic: columns
    are scanned in ascending index order, so exact ties resolve to the lowest
    pair indices.

    Raises:
        ValueError: on NaN costs.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment((), 0.0)
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    size = max(n, m)
    pad = float(cost.max()) + 1.0
    c = np.full((size, size), pad)
    c[:n, :m] = cost

    inf = float("inf")
    u = np.zeros(size + 1)
    v = np.zeros(size + 1)
    assigned_row = np.zeros(size + 1, dtype=int)  # column -> row (1-based, 0 = free)
    way = np.zeros(size + 1, dtype=int)
    for i in range(1, size + 1):
        assigned_row[0] = i
        j0 = 0
        minv = np.full(size + 1, inf)
        used = np.zeros(size + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = assigned_row[j0]
            delta = inf
            j1 = -1
            for j in range(1, size + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(size + 1):
                if used[j]:
                    u[assigned_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if assigned_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            assigned_row[j0] = assigned_row[j1]
            j0 = j1
    pairs = sorted(
        (assigned_row[j] - 1, j - 1)
        for j in range(1, size + 1)
        if assigned_row[j] - 1 < n and j - 1 < m
    )
    total = float(sum(cost[i, j] for i, j in pairs))
    return Assignment(tuple(pairs), total)


def match_with_repetition(
    pred: QueryState,
    gt: GroundTruth,
    weights: MatchCost | None = None,
    repetitions: int = 1,
    sample_count: int = 100,
    seed: int = 0,
) -> Assignment:
    """Match the repeated-query block against the GT set repeated R times.

    The repeated ground truth follows s_i = g_(i mod n); returned gt indices
    point into the repeated sequence (take them mod n to recover originals).
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1 for the one-to-many branch")
    n = gt.n_instances
    rep_idx = np.arange(n * repetitions) % n if n else np.array([], dtype=int)
    repeated = GroundTruth(
        gt.ctrl[rep_idx],
        gt.masks[rep_idx],
        gt.labels[rep_idx],
        np.zeros((len(rep_idx), len(rep_idx)), dtype=int),
    )
    cost = pairwise_cost(pred, repeated, weights, sample_count=sample_count, seed=seed)
    return hungarian(cost)
