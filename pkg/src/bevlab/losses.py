"""Training losses for the centerline branch.

Per matched instance: L1 distance over control points, point-sampled mask
BCE + dice, and alpha-weighted softmax classification over all queries.
Totals are deep-supervised (summed over decoder states) and may add a
one-to-many term computed on the repeated query block against the repeated
ground-truth set.

Point sampling is uniform over the grid with an explicit per-call seed; the
dice term is folded into a loss (1 - dice) so every term is minimized at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import QueryState, sigmoid
from .grid import sample_array

DICE_EPS = 1e-6
BCE_EPS = 1e-12  # guards log(0) when probability maps saturate


@dataclass(frozen=True)
class LossWeights:
    lambda_reg: float = 3.0
    lambda_mask_bce: float = 5.0
    lambda_mask_dice: float = 5.0
    lambda_cls: float = 2.0
    lambda_one_to_many: float = 1.0

    def __post_init__(self):
        if min(
            self.lambda_reg,
            self.lambda_mask_bce,
            self.lambda_mask_dice,
            self.lambda_cls,
            self.lambda_one_to_many,
        ) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    """Per-scene annotation: control points, rasterized masks, labels, topology."""

    ctrl: np.ndarray  # (n, n_ctrl, 3) normalized control points
    masks: np.ndarray  # (n, H, W) binary rasterized centerlines
    labels: np.ndarray  # (n,) class indices, 0 reserved for background
    adjacency: np.ndarray  # (n, n) binary directed connectivity

    def __post_init__(self):
        ctrl = np.asarray(self.ctrl, dtype=float)
        masks = np.asarray(self.masks, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        adj = np.asarray(self.adjacency, dtype=int)
        n = ctrl.shape[0]
        if masks.shape[0] != n or labels.shape[0] != n:
            raise ValueError("instance counts disagree between ctrl, masks, labels")
        if adj.shape != (n, n):
            raise ValueError(f"adjacency must be ({n}, {n}), got {adj.shape}")
        if n and np.any(np.diag(adj) != 0):
            raise ValueError("adjacency diagonal must be zero")
        object.__setattr__(self, "ctrl", ctrl)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_instances(self) -> int:
        return self.ctrl.shape[0]


def sample_mask_points(count: int, seed: int) -> np.ndarray:
    """K uniform continuous points over the normalized grid square."""
    if count < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A]))
    return rng.uniform(0.0, 1.0, (count, 2))


def _clamp_to_border(pts: np.ndarray, h: int, w: int) -> np.ndarray:
    """Clamp normalized points so their bilinear footprint stays on the map.

    Mask maps are read with border-replicate semantics: a constant map reads
    back its constant value everywhere in [0, 1]^2 (unlike the zero-padded
    feature sampler).
    """
    pts = np.asarray(pts, dtype=float)
    lo = np.array([0.5 / w, 0.5 / h])
    hi = np.array([(w - 0.5) / w, (h - 0.5) / h])
    return np.clip(pts, lo, hi)


def map_values_at(map2d: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear reads of a single (H, W) map at normalized points (border padded)."""
    map2d = np.asarray(map2d, float)
    pts = _clamp_to_border(pts, map2d.shape[0], map2d.shape[1])
    return sample_array(map2d[:, :, None], pts)[:, 0]


def bce(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Elementwise binary cross entropy; p is clamped away from exact 0/1."""
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return -(g * np.log(p) + (1.0 - g) * np.log1p(-p))


def l1_regression_loss(pred_ctrl: np.ndarray, gt_ctrl: np.ndarray, assignment) -> float:
    """Mean over matched instances of the summed L1 control-point distance."""
    if not assignment.pairs:
        return 0.0
    total = 0.0
    for i, j in assignment.pairs:
        total += float(np.abs(pred_ctrl[i] - gt_ctrl[j]).sum())
    return total / len(assignment.pairs)


def l1_regression_grad(pred_ctrl: np.ndarray, gt_ctrl: np.ndarray, assignment) -> np.ndarray:
    """d l1_regression_loss / d pred_ctrl (zero rows for unmatched queries)."""
    grad = np.zeros_like(pred_ctrl)
    if not assignment.pairs:
        return grad
    for i, j in assignment.pairs:
        grad[i] = np.sign(pred_ctrl[i] - gt_ctrl[j]) / len(assignment.pairs)
    return grad


def mask_loss_terms(
    pred_prob: np.ndarray,
    gt_masks: np.ndarray,
    sample_count: int = 100,
    seed: int = 0,
) -> tuple[float, float]:
    """Point-sampled (BCE, dice-loss) averaged over already-paired instances.

    Args:
        pred_prob: (n, H, W) mask probability maps, row i paired with gt row i.
        gt_masks: (n, H, W) binary maps, read bilinearly at the same points.
    """
    pred_prob = np.asarray(pred_prob, dtype=float)
    gt_masks = np.asarray(gt_masks, dtype=float)
    if pred_prob.shape != gt_masks.shape:
        raise ValueError(f"paired mask shapes differ: {pred_prob.shape} vs {gt_masks.shape}")
    n = pred_prob.shape[0]
    if n == 0:
        return 0.0, 0.0
    bce_total = 0.0
    dice_total = 0.0
    for i in range(n):
        pts = np.random.default_rng(np.random.SeedSequence([int(seed), i])).uniform(
            0.0, 1.0, (sample_count, 2)
        )
        p = map_values_at(pred_prob[i], pts)
        g = map_values_at(gt_masks[i], pts)
        bce_total += float(bce(p, g).mean())
        dice = 2.0 * float(p @ g) / (float(p.sum()) + float(g.sum()) + DICE_EPS)
        dice_total += 1.0 - dice
    return bce_total / n, dice_total / n


def mask_loss(
    pred_prob: np.ndarray, gt_masks: np.ndarray, sample_count: int = 100, seed: int = 0
) -> float:
    """Combined point-sampled mask objective: mean BCE plus dice loss."""
    b, d = mask_loss_terms(pred_prob, gt_masks, sample_count, seed)
    return b + d


def mask_bce_grad(
    pre_mask: np.ndarray, gt_mask: np.ndarray, pts: np.ndarray
) -> np.ndarray:
    """d (mean sampled BCE) / d pre-mask logits for one instance.

    The probability map is sigmoid(pre_mask) read bilinearly at `pts`; the
    gradient lands on the 4 neighbors of every sample point.
    """
    h, w = pre_mask.shape
    prob = sigmoid(np.asarray(pre_mask, float))
    k = len(pts)
    pts = _clamp_to_border(pts, h, w)
    u = pts[:, 0] * w - 0.5
    v = pts[:, 1] * h - 0.5
    j0 = np.floor(u).astype(int)
    i0 = np.floor(v).astype(int)
    fu, fv = u - j0, v - i0
    p = map_values_at(prob, pts)
    g = map_values_at(gt_mask, pts)
    dldp = (-g / p + (1.0 - g) / (1.0 - p)) / k
    grad_prob = np.zeros((h, w))
    # accumulate over the 4 neighbors of every sample point
    for di, wv_ in ((0, 1.0 - fv), (1, fv)):
        for dj, wu_ in ((0, 1.0 - fu), (1, fu)):
            rows = i0 + di
            cols = j0 + dj
            ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
            np.add.at(grad_prob, (rows[ok], cols[ok]), dldp[ok] * wu_[ok] * wv_[ok])
    return grad_prob * prob * (1.0 - prob)


def classification_loss(logits: np.ndarray, labels: np.ndarray, assignment) -> float:
    """Softmax cross entropy over queries, alpha = 0.1 on matched queries."""
    logits = np.asarray(logits, dtype=float)
    q = logits.shape[0]
    targets = np.zeros(q, dtype=int)
    alpha = np.ones(q)
    for i, j in assignment.pairs:
        targets[i] = int(labels[j])
        alpha[i] = 0.1
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    per_query = -log_probs[np.arange(q), targets]
    return float((alpha * per_query).mean())


def total_loss(
    pred_states: list[QueryState],
    gt: GroundTruth,
    weights: LossWeights | None = None,
    repetitions: int = 0,
    match_cost=None,
    sample_count: int = 100,
    seed: int = 0,
):
    """Deep-supervised weighted loss over every decoder state.

    Each state is split into the one-to-one block (first Q rows) and, when
    repetitions > 0, the one-to-many block (remaining Q*R rows) which is
    matched against the ground truth repeated R times.

    Mask sampling is deterministic per layer: layer l of the one-to-one
    branch draws from seed*1000 + l, the one-to-many branch from
    seed*1000 + 500000 + l.

    Returns:
        (total, breakdown) where breakdown maps term names to their summed
        weighted contributions.
    """
    from .matching import MatchCost, hungarian, pairwise_cost

    weights = weights or LossWeights()
    match_cost = match_cost or MatchCost()
    n_total = pred_states[0].embeddings.shape[0]
    q = n_total // (1 + repetitions)
    if q * (1 + repetitions) != n_total:
        raise ValueError("state size is not divisible by 1 + repetitions")
    breakdown = {"reg": 0.0, "mask_bce": 0.0, "mask_dice": 0.0, "cls": 0.0, "one_to_many": 0.0}

    def block_loss(state_block: QueryState, gt_idx: np.ndarray, layer_seed: int):
        gt_ctrl = gt.ctrl[gt_idx]
        gt_masks = gt.masks[gt_idx]
        gt_labels = gt.labels[gt_idx]
        cost = pairwise_cost(
            state_block,
            GroundTruth(gt_ctrl, gt_masks, gt_labels, np.zeros((len(gt_idx), len(gt_idx)), int)),
            match_cost,
            sample_count=sample_count,
            seed=layer_seed,
        )
        assignment = hungarian(cost)
        reg = l1_regression_loss(state_block.ctrl, gt_ctrl, assignment)
        prob = sigmoid(state_block.pre_mask)
        rows = [i for i, _ in assignment.pairs]
        cols = [j for _, j in assignment.pairs]
        bce_term, dice_term = mask_loss_terms(
            prob[rows], gt_masks[cols], sample_count=sample_count, seed=layer_seed
        )
        cls = classification_loss(state_block.class_logits, gt_labels, assignment)
        return reg, bce_term, dice_term, cls

    for layer_idx, state in enumerate(pred_states):
        one = state.sliced(q)
        if gt.n_instances:
            reg, bce_t, dice_t, cls = block_loss(
                one, np.arange(gt.n_instances), seed * 1000 + layer_idx
            )
        else:
            reg = bce_t = dice_t = 0.0
            cls = classification_loss(one.class_logits, gt.labels, _EMPTY)
        breakdown["reg"] += weights.lambda_reg * reg
        breakdown["mask_bce"] += weights.lambda_mask_bce * bce_t
        breakdown["mask_dice"] += weights.lambda_mask_dice * dice_t
        breakdown["cls"] += weights.lambda_cls * cls

        if repetitions > 0:
            many = state.sliced_range(q, n_total)
            if gt.n_instances:
                rep_idx = np.arange(gt.n_instances * repetitions) % gt.n_instances
                reg, bce_t, dice_t, cls = block_loss(
                    many, rep_idx, seed * 1000 + 500_000 + layer_idx
                )
            else:
                reg = bce_t = dice_t = 0.0
                cls = classification_loss(many.class_logits, gt.labels, _EMPTY)
            breakdown["one_to_many"] += weights.lambda_one_to_many * (
                weights.lambda_reg * reg
                + weights.lambda_mask_bce * bce_t
                + weights.lambda_mask_dice * dice_t
                + weights.lambda_cls * cls
            )

    total = sum(breakdown.values())
    breakdown["total"] = total
    return total, breakdown


class _Empty:
    pairs: tuple = ()


_EMPTY = _Empty()
