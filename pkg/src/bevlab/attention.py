"""Cross-attention family over BEV grids: SA, SPDA, MPDA, and BDA.

The three deformable variants share one core: per head h, K learned offsets
are added to that head's reference point, the (per-head slice of the) value
grid is bilinearly sampled there, and the samples are combined with
softmax-normalized attention weights.  The variants differ only in where the
reference points come from:

* SPDA -- one regressed point, broadcast to every head
* MPDA -- dense polyline points, one per head
* BDA  -- the Bezier control points themselves, one per head

Offsets are produced in normalized coordinates and scaled by 1/max(H, W) so
behaviour is resolution independent.  Every forward can feed an
:class:`OpCounter`, which tallies the marginal per-query cost; query
independent grid preprocessing (value/key projection) is excluded for all
variants, which keeps deformable counts independent of grid size while
standard attention grows linearly with H*W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FeatureGrid, bilinear_sample_grad, sample_array


@dataclass
class OpCounter:
    """Deterministic operation tally for one or more attention forwards."""

    multiply_accumulates: int = 0
    sample_calls: int = 0
    matmul_calls: int = 0

    def add_linear(self, n: int, fan_in: int, fan_out: int):
        self.multiply_accumulates += n * fan_in * fan_out
        self.matmul_calls += 1

    def add_samples(self, n: int, channels: int):
        # one bilinear read = 4-neighbor blend per channel
        self.sample_calls += n
        self.multiply_accumulates += n * 4 * channels

    def merged(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(
            self.multiply_accumulates + other.multiply_accumulates,
            self.sample_calls + other.sample_calls,
            self.matmul_calls + other.matmul_calls,
        )


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)


@dataclass(frozen=True)
class DeformAttnParams:
    """Dense linear maps of one deformable attention block.

    d_model must be divisible by n_heads; each head owns a d_model/n_heads
    channel slice of the projected value grid.
    """

    d_model: int
    n_heads: int
    n_samples: int
    offset_w: np.ndarray  # (n_heads*n_samples*2, d_model)
    attn_w: np.ndarray  # (n_heads*n_samples, d_model)
    value_w: np.ndarray  # (d_model, d_model)
    out_w: np.ndarray  # (d_model, d_model)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def init_deform_params(
    seed: int, d_model: int, n_heads: int, n_samples: int
) -> DeformAttnParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA77]))
    hk = n_heads * n_samples
    return DeformAttnParams(
        d_model=d_model,
        n_heads=n_heads,
        n_samples=n_samples,
        offset_w=_uniform(rng, (hk * 2, d_model), d_model),
        attn_w=_uniform(rng, (hk, d_model), d_model),
        value_w=_uniform(rng, (d_model, d_model), d_model),
        out_w=_uniform(rng, (d_model, d_model), d_model),
    )


def project_values(grid: FeatureGrid, params: DeformAttnParams) -> np.ndarray:
    """Apply the value projection to the whole grid once (shared across queries)."""
    if grid.channels != params.d_model:
        raise ValueError(
            f"grid channels {grid.channels} != d_model {params.d_model}"
        )
    h, w, c = grid.data.shape
    return (grid.data.reshape(-1, c) @ params.value_w.T).reshape(h, w, params.d_model)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention_weights(params: DeformAttnParams, query: np.ndarray) -> np.ndarray:
    """Softmax-normalized per-head sampling weights, shape (n_heads, n_samples)."""
    logits = (params.attn_w @ np.asarray(query, float)).reshape(
        params.n_heads, params.n_samples
    )
    return _softmax(logits, axis=-1)


def _check_queries(queries: np.ndarray, d_model: int) -> np.ndarray:
    queries = np.asarray(queries, dtype=float)
    if queries.ndim != 2 or queries.shape[1] != d_model:
        raise ValueError(f"queries must be (n, {d_model}), got {queries.shape}")
    if not np.all(np.isfinite(queries)):
        raise ValueError("query contains non-finite values")
    return queries


def deform_attention(
    queries: np.ndarray,
    grid: FeatureGrid,
    refs: np.ndarray,
    params: DeformAttnParams,
    counter: OpCounter | None = None,
    values: np.ndarray | None = None,
) -> np.ndarray:
    """Shared deformable core over a batch of queries.

    Args:
        queries: (n, d_model).
        refs: (n, n_heads, 2) normalized per-head reference points.
        values: optional precomputed :func:`project_values` output.

    Returns:
        (n, d_model) attention outputs; row i depends only on queries[i] and
        refs[i].
    """
    queries = _check_queries(queries, params.d_model)
    refs = np.asarray(refs, dtype=float)
    n = queries.shape[0]
    heads, k, dh = params.n_heads, params.n_samples, params.head_dim
    if refs.shape != (n, heads, 2):
        raise ValueError(f"refs must be ({n}, {heads}, 2), got {refs.shape}")
    if values is None:
        values = project_values(grid, params)

    scale = 1.0 / max(grid.height, grid.width)
    offsets = (queries @ params.offset_w.T).reshape(n, heads, k, 2) * scale
    weights = _softmax((queries @ params.attn_w.T).reshape(n, heads, k), axis=-1)
    pts = refs[:, :, None, :] + offsets

    if counter is not None:
        counter.add_linear(n, params.d_model, heads * k * 2)
        counter.add_linear(n, params.d_model, heads * k)
        counter.add_samples(n * heads * k, dh)
        counter.multiply_accumulates += n * heads * k * dh  # weighted aggregation
        counter.add_linear(n, params.d_model, params.d_model)

    head_out = np.empty((n, heads, dh))
    for h in range(heads):
        sampled = sample_array(
            values[:, :, h * dh : (h + 1) * dh], pts[:, h].reshape(n * k, 2)
        ).reshape(n, k, dh)
        head_out[:, h] = np.einsum("nk,nkc->nc", weights[:, h], sampled)
    return head_out.reshape(n, params.d_model) @ params.out_w.T


def spda(
    query: np.ndarray,
    grid: FeatureGrid,
    ref: np.ndarray,
    params: DeformAttnParams,
    counter: OpCounter | None = None,
    values: np.ndarray | None = None,
) -> np.ndarray:
    """Single-point deformable attention: one reference point drives all heads."""
    ref = np.asarray(ref, dtype=float).reshape(2)
    if not np.all(np.isfinite(ref)):
        raise ValueError("reference point must be finite")
    refs = np.broadcast_to(ref, (1, params.n_heads, 2))
    return deform_attention(
        np.asarray(query, float)[None, :], grid, refs, params, counter, values
    )[0]


def mpda(
    query: np.ndarray,
    grid: FeatureGrid,
    refs: np.ndarray,
    params: DeformAttnParams,
    counter: OpCounter | None = None,
    values: np.ndarray | None = None,
) -> np.ndarray:
    """Multi-point deformable attention: head l anchors at polyline point l."""
    refs = np.asarray(refs, dtype=float)
    if refs.shape != (params.n_heads, 2):
        raise ValueError(
            f"need one 2D polyline point per head: expected ({params.n_heads}, 2), got {refs.shape}"
        )
    return deform_attention(
        np.asarray(query, float)[None, :], grid, refs[None], params, counter, values
    )[0]


def bda(
    query: np.ndarray,
    grid: FeatureGrid,
    ctrl: np.ndarray,
    params: DeformAttnParams,
    counter: OpCounter | None = None,
    values: np.ndarray | None = None,
) -> np.ndarray:
    """Bezier deformable attention: head n anchors at control point n.

    No basis-matrix conversion happens here; the control points are the
    reference points.
    """
    ctrl = np.asarray(ctrl, dtype=float)
    if ctrl.shape != (params.n_heads, 2):
        raise ValueError(
            f"need one 2D control point per head: expected ({params.n_heads}, 2), got {ctrl.shape}"
        )
    return deform_attention(
        np.asarray(query, float)[None, :], grid, ctrl[None], params, counter, values
    )[0]


@dataclass(frozen=True)
class StandardAttnParams:
    """Key/value projections of plain dense cross attention."""

    d_model: int
    key_w: np.ndarray  # (d_model, d_model)
    value_w: np.ndarray  # (d_model, d_model)


def init_standard_params(seed: int, d_model: int) -> StandardAttnParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A]))
    return StandardAttnParams(
        d_model=d_model,
        key_w=_uniform(rng, (d_model, d_model), d_model),
        value_w=_uniform(rng, (d_model, d_model), d_model),
    )


def standard_cross_attention(
    query: np.ndarray,
    grid: FeatureGrid,
    params: StandardAttnParams,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """softmax(q.K / sqrt(d)) . V over every grid cell."""
    query = _check_queries(np.asarray(query, float)[None, :], params.d_model)[0]
    cells = grid.data.reshape(-1, grid.channels)
    keys = cells @ params.key_w.T
    vals = cells @ params.value_w.T
    logits = keys @ query / np.sqrt(params.d_model)
    attn = _softmax(logits)
    if counter is not None:
        hw = cells.shape[0]
        counter.add_linear(1, params.d_model, hw)  # q against every key
        counter.add_linear(1, hw, params.d_model)  # weighted value sum
    return attn @ vals


# ---------------------------------------------------------------------------
# analytic gradients (scalar s = cotangent . output)
# ---------------------------------------------------------------------------


def deform_attention_grad(
    query: np.ndarray,
    grid: FeatureGrid,
    refs: np.ndarray,
    params: DeformAttnParams,
    cotangent: np.ndarray,
    values: np.ndarray | None = None,
):
    """Gradients of s = cotangent . deform_attention(...) for a single query.

    Returns:
        d_query: (d_model,) gradient w.r.t. the query vector.
        d_refs: (n_heads, 2) gradient w.r.t. the reference points.
    """
    query = np.asarray(query, dtype=float)
    refs = np.asarray(refs, dtype=float).reshape(params.n_heads, 2)
    u = np.asarray(cotangent, dtype=float)
    heads, k, dh = params.n_heads, params.n_samples, params.head_dim
    if values is None:
        values = project_values(grid, params)

    scale = 1.0 / max(grid.height, grid.width)
    offsets = (params.offset_w @ query).reshape(heads, k, 2) * scale
    logits = (params.attn_w @ query).reshape(heads, k)
    attn = _softmax(logits, axis=-1)
    pts = refs[:, None, :] + offsets

    g_concat = (params.out_w.T @ u).reshape(heads, dh)
    d_logits = np.zeros((heads, k))
    d_points = np.zeros((heads, k, 2))
    d_refs = np.zeros((heads, 2))
    for h in range(heads):
        vslice = FeatureGrid(values[:, :, h * dh : (h + 1) * dh], grid.cell_size_m)
        sampled_grad, _ = bilinear_sample_grad(vslice, pts[h])
        sampled = sample_array(vslice.data, pts[h])
        d_attn = sampled @ g_concat[h]  # (k,)
        d_logits[h] = attn[h] * (d_attn - np.dot(attn[h], d_attn))
        # (k, 2): chain the cotangent through sampled channels into point coords
        d_points[h] = attn[h][:, None] * np.einsum("c,kcx->kx", g_concat[h], sampled_grad)
        d_refs[h] = d_points[h].sum(axis=0)
    d_query = params.attn_w.T @ d_logits.reshape(-1)
    d_query += params.offset_w.T @ (d_points.reshape(-1) * scale)
    return d_query, d_refs


def standard_attention_grad(
    query: np.ndarray,
    grid: FeatureGrid,
    params: StandardAttnParams,
    cotangent: np.ndarray,
) -> np.ndarray:
    """Gradient of s = cotangent . standard_cross_attention(...) w.r.t. the query."""
    query = np.asarray(query, dtype=float)
    u = np.asarray(cotangent, dtype=float)
    cells = grid.data.reshape(-1, grid.channels)
    keys = cells @ params.key_w.T
    vals = cells @ params.value_w.T
    attn = _softmax(keys @ query / np.sqrt(params.d_model))
    uv = vals @ u
    d_logits = attn * (uv - np.dot(attn, uv))
    return keys.T @ d_logits / np.sqrt(params.d_model)


# ---------------------------------------------------------------------------
# op counting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttnConfig:
    """Configuration for one attention forward, for op accounting."""

    d_model: int = 32
    n_heads: int = 4
    n_samples: int = 4
    grid_h: int = 32
    grid_w: int = 32
    n_ctrl: int | None = None  # control-point count feeding an MPDA conversion

    @property
    def ctrl_count(self) -> int:
        return self.n_ctrl if self.n_ctrl is not None else self.n_heads


VARIANTS = ("sa", "spda", "mpda", "bda")


def count_ops(variant: str, config: AttnConfig) -> OpCounter:
    """Deterministic MAC/sample/matmul counts for one forward call of `variant`.

    Counts cover the marginal per-query work.  Grid preprocessing that is
    shared across queries (value/key projection) is excluded for every
    variant.  SPDA is additionally charged for the linear map regressing its
    reference point from the query; MPDA is charged for the basis-matrix
    conversion turning n_ctrl control points into one polyline point per head.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    grid = FeatureGrid(np.zeros((config.grid_h, config.grid_w, config.d_model)))
    query = np.zeros(config.d_model)
    counter = OpCounter()
    if variant == "sa":
        standard_cross_attention(query, grid, init_standard_params(0, config.d_model), counter)
        return counter
    params = init_deform_params(0, config.d_model, config.n_heads, config.n_samples)
    center = np.full(2, 0.5)
    if variant == "spda":
        spda(query, grid, center, params, counter)
        counter.add_linear(1, config.d_model, 2)  # reference-point regression
    elif variant == "mpda":
        mpda(query, grid, np.tile(center, (config.n_heads, 1)), params, counter)
        # control points -> per-head polyline points, one matmul per query
        counter.multiply_accumulates += config.n_heads * config.ctrl_count * 2
        counter.matmul_calls += 1
    else:
        bda(query, grid, np.tile(center, (config.n_heads, 1)), params, counter)
    return counter
