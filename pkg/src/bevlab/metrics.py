"""Centerline detection and topology evaluation.

Detection quality is multi-threshold mAP under two polyline distances: the
discrete Frechet distance (direction sensitive) with 1/2/3 m thresholds and
the symmetric Chamfer distance with 0.5/1/1.5 m thresholds.  Topology quality
is AP over predicted connectivity edges, where an edge is admissible only if
both endpoint instances were detected (Frechet criterion), averaged over the
Frechet thresholds.  The aggregate score averages the two detection mAPs with
the square-rooted topology mAP.

All distances are computed on polylines resampled to a common point count by
uniform arc length; coordinates are metric (meters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FRECHET_THRESHOLDS_M = (1.0, 2.0, 3.0)
CHAMFER_THRESHOLDS_M = (0.5, 1.0, 1.5)
DEFAULT_RESAMPLE = 11


@dataclass(frozen=True)
class MetricReport:
    det_l: float  # Frechet-based detection mAP, percent
    det_l_ch: float  # Chamfer-based detection mAP, percent
    top_ll: float  # topology mAP, percent
    ols_l: float  # aggregate score, percent
    per_threshold_ap: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "det_l": self.det_l,
            "det_l_ch": self.det_l_ch,
            "top_ll": self.top_ll,
            "ols_l": self.ols_l,
            "per_threshold_ap": dict(self.per_threshold_ap),
        }


def resample_polyline(points: np.ndarray, count: int = DEFAULT_RESAMPLE) -> np.ndarray:
    """Resample to `count` points uniformly spaced by arc length."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError(f"polyline needs at least 2 points, got shape {points.shape}")
    if count < 2:
        raise ValueError("resample count must be >= 2")
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.tile(points[0], (count, 1))
    targets = np.linspace(0.0, total, count)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    t = (targets - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    return points[idx] + t[:, None] * (points[idx + 1] - points[idx])


def frechet_distance(a: np.ndarray, b: np.ndarray, resample: int = DEFAULT_RESAMPLE) -> float:
    """Discrete Frechet distance on arc-length resampled polylines."""
    pa = resample_polyline(a, resample)
    pb = resample_polyline(b, resample)
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    n, m = d.shape
    dp = np.full((n, m), np.inf)
    dp[0, 0] = d[0, 0]
    for j in range(1, m):
        dp[0, j] = max(dp[0, j - 1], d[0, j])
    for i in range(1, n):
        dp[i, 0] = max(dp[i - 1, 0], d[i, 0])
        for j in range(1, m):
            dp[i, j] = max(min(dp[i - 1, j], dp[i - 1, j - 1], dp[i, j - 1]), d[i, j])
    return float(dp[-1, -1])


def chamfer_distance(a: np.ndarray, b: np.ndarray, resample: int = DEFAULT_RESAMPLE) -> float:
    """Symmetric mean nearest-point distance on resampled point sets."""
    pa = resample_polyline(a, resample)
    pb = resample_polyline(b, resample)
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    return float(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))


def _greedy_match(dist: np.ndarray, scores: np.ndarray, threshold: float):
    """Confidence-ordered greedy matching.

    Returns (tp_flags in score order, order, pred_to_gt dict).  A prediction
    claims the nearest still-unmatched GT within the threshold; later
    predictions falling on a claimed GT count as false positives.
    """
    order = np.argsort(-scores, kind="stable")
    claimed = np.zeros(dist.shape[1], dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    pred_to_gt: dict[int, int] = {}
    for rank, p in enumerate(order):
        if dist.shape[1] == 0:
            break
        cand = np.where(~claimed & (dist[p] <= threshold))[0]
        if cand.size:
            j = cand[np.argmin(dist[p, cand])]
            claimed[j] = True
            tp[rank] = True
            pred_to_gt[int(p)] = int(j)
    return tp, order, pred_to_gt


def _average_precision(tp_in_rank_order: np.ndarray, n_gt: int, n_pred: int) -> float:
    """All-point AP with a monotone precision envelope, as a fraction."""
    if n_gt == 0:
        return 1.0 if n_pred == 0 else 0.0
    if n_pred == 0:
        return 0.0
    cum_tp = np.cumsum(tp_in_rank_order)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, n_pred + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def detection_ap(
    preds: list[tuple[np.ndarray, float]],
    gts: list[np.ndarray],
    distance: str = "frechet",
    thresholds: tuple[float, ...] | None = None,
    resample: int = DEFAULT_RESAMPLE,
):
    """Multi-threshold detection AP.

    Args:
        preds: (polyline, confidence) pairs, polylines in meters.
        gts: ground-truth polylines in meters.
        distance: "frechet" or "chamfer".

    Returns:
        (mean_ap_percent, {threshold: ap_percent}).
    """
    if distance == "frechet":
        fn, default_thr = frechet_distance, FRECHET_THRESHOLDS_M
    elif distance == "chamfer":
        fn, default_thr = chamfer_distance, CHAMFER_THRESHOLDS_M
    else:
        raise ValueError(f"unknown distance {distance!r}")
    thresholds = tuple(thresholds) if thresholds is not None else default_thr
    scores = np.array([s for _, s in preds], dtype=float)
    dist = np.array(
        [[fn(p, g, resample) for g in gts] for p, _ in preds], dtype=float
    ).reshape(len(preds), len(gts))
    per = {}
    for thr in thresholds:
        tp, _, _ = _greedy_match(dist, scores, thr)
        per[thr] = 100.0 * _average_precision(tp, len(gts), len(preds))
    return float(np.mean(list(per.values()))), per


def topology_ap(
    pred_adj: np.ndarray,
    gt_adj: np.ndarray,
    vertex_matching: dict[int, int],
) -> float:
    """AP over GT connectivity edges for one vertex matching, in percent.

    Predicted edges with a positive score whose endpoints both matched GT
    vertices are ranked by score; a candidate is a true positive when the
    corresponding GT edge exists.  Edges with an undetected endpoint are
    inadmissible and GT edges incident to undetected vertices stay unreached.
    """
    pred_adj = np.asarray(pred_adj, dtype=float)
    gt_adj = np.asarray(gt_adj, dtype=int)
    n_gt_edges = int(gt_adj.sum())
    candidates = []
    n = pred_adj.shape[0]
    for i in range(n):
        for j in range(n):
            if i == j or pred_adj[i, j] <= 0.0:
                continue
            if i in vertex_matching and j in vertex_matching:
                candidates.append((pred_adj[i, j], i, j))
    if n_gt_edges == 0:
        return 100.0 if not candidates else 0.0
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    claimed = set()
    tp = np.zeros(len(candidates), dtype=bool)
    for rank, (_, i, j) in enumerate(candidates):
        edge = (vertex_matching[i], vertex_matching[j])
        if gt_adj[edge] and edge not in claimed:
            claimed.add(edge)
            tp[rank] = True
    return 100.0 * _average_precision(tp, n_gt_edges, len(candidates))


def ols_l(det_l: float, det_l_ch: float, top_ll: float) -> float:
    """Aggregate centerline score: mean of the detection mAPs and the
    square-rooted topology mAP, all on the 0-100 scale."""
    for name, v in (("det_l", det_l), ("det_l_ch", det_l_ch), ("top_ll", top_ll)):
        if not (0.0 <= v <= 100.0):
            raise ValueError(f"{name}={v} outside [0, 100]")
    return 100.0 * (det_l / 100.0 + det_l_ch / 100.0 + np.sqrt(top_ll / 100.0)) / 3.0


def remap_v11m(scores: np.ndarray) -> np.ndarray:
    """Literal score remap P(x) + 1*[P(x) > 0.05].

    The transform is strictly monotone on scores, so rank-based AP values are
    unchanged; it is exposed for parity with reported evaluation pipelines.
    """
    scores = np.asarray(scores, dtype=float)
    return scores + (scores > 0.05).astype(float)


def evaluate(
    pred_polylines: list[np.ndarray],
    pred_scores: list[float],
    pred_adjacency: np.ndarray,
    gt_polylines: list[np.ndarray],
    gt_adjacency: np.ndarray,
    resample: int = DEFAULT_RESAMPLE,
    v11m: bool = False,
) -> MetricReport:
    """Full centerline evaluation producing a :class:`MetricReport`."""
    preds = list(zip(pred_polylines, pred_scores))
    det_l, per_f = detection_ap(preds, gt_polylines, "frechet", resample=resample)
    det_ch, per_c = detection_ap(preds, gt_polylines, "chamfer", resample=resample)

    scores = np.asarray(pred_scores, dtype=float)
    adj = np.asarray(pred_adjacency, dtype=float).reshape(len(preds), len(preds)) if len(preds) else np.zeros((0, 0))
    if v11m:
        adj = remap_v11m(np.where(adj > 0, adj, 0.0)) * (adj > 0)
    dist = np.array(
        [[frechet_distance(p, g, resample) for g in gt_polylines] for p, _ in preds],
        dtype=float,
    ).reshape(len(preds), len(gt_polylines))
    top_per = []
    for thr in FRECHET_THRESHOLDS_M:
        _, _, matching = _greedy_match(dist, scores, thr)
        top_per.append(topology_ap(adj, gt_adjacency, matching))
    top_ll = float(np.mean(top_per)) if top_per else 100.0

    per = {f"frechet@{t}": ap for t, ap in per_f.items()}
    per.update({f"chamfer@{t}": ap for t, ap in per_c.items()})
    return MetricReport(
        det_l=det_l,
        det_l_ch=det_ch,
        top_ll=top_ll,
        ols_l=ols_l(det_l, det_ch, top_ll),
        per_threshold_ap=per,
    )
