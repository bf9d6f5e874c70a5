"""Iterative-refinement decoder over a BEV feature grid.

Each layer anchors Bezier deformable attention at the current control points
(height discarded), runs masked self-attention and a feedforward update, then
refines control points additively in inverse-sigmoid space, accumulates the
per-query pre-mask map, and emits class logits.

Training-mode forwards carry Q*(1+R) queries: the first Q form the
one-to-one block, the remaining Q*R the one-to-many block.  The blocks never
interact (the self-attention mask is -inf across blocks), so the forward
processes them as independent sub-batches; slicing the first Q rows of a
masked forward is bit-identical to an R=0 forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import DeformAttnParams, deform_attention, project_values
from .grid import FeatureGrid


class NumericError(ArithmeticError):
    """Non-finite intermediate in a decoder forward."""


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)


def inverse_sigmoid(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """log(x / (1-x)) with the argument clamped to [eps, 1-eps]."""
    x = np.clip(x, eps, 1.0 - eps)
    return np.log(x / (1.0 - x))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def one_to_many_mask(n_queries: int, repetitions: int) -> np.ndarray:
    """Additive self-attention mask isolating the one-to-many block.

    Returns a (Q + Q*R) square matrix that is 0 within the one-to-one block
    and within the one-to-many block, and -inf across the two.
    """
    if n_queries < 1 or repetitions < 0:
        raise ValueError("need n_queries >= 1 and repetitions >= 0")
    total = n_queries * (1 + repetitions)
    mask = np.zeros((total, total))
    mask[:n_queries, n_queries:] = -np.inf
    mask[n_queries:, :n_queries] = -np.inf
    return mask


def sine_embedding(refs: np.ndarray, n_feats: int = 16, temperature: float = 10000.0) -> np.ndarray:
    """Per-coordinate sinusoidal encoding, concatenated over points and axes.

    Args:
        refs: (Q, P, 2) normalized reference coordinates.
        n_feats: sinusoid count per scalar coordinate (alternating sin/cos).

    Returns:
        (Q, P * 2 * n_feats) encoding.
    """
    refs = np.asarray(refs, dtype=float)
    if refs.ndim != 3 or refs.shape[2] != 2:
        raise ValueError(f"refs must be (Q, P, 2), got {refs.shape}")
    freq = temperature ** (2 * (np.arange(n_feats) // 2) / n_feats)
    angle = refs[..., None] * 2.0 * np.pi / freq  # (Q, P, 2, n_feats)
    enc = np.empty_like(angle)
    enc[..., 0::2] = np.sin(angle[..., 0::2])
    enc[..., 1::2] = np.cos(angle[..., 1::2])
    return enc.reshape(refs.shape[0], -1)


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder hyperparameters.  Desk-scale defaults; see :meth:`paper_scale`."""

    n_layers: int = 3
    d_model: int = 32
    n_queries: int = 8
    n_classes: int = 2
    n_ctrl: int = 4  # control points per instance (order N = n_ctrl - 1)
    n_samples: int = 4  # sampling offsets K per head
    one_to_many_R: int = 2
    sa_heads: int = 4
    pos_feats: int = 16
    shared_layers: bool = False

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("need at least one decoder layer")
        if self.d_model % self.n_ctrl != 0:
            raise ValueError(
                f"d_model={self.d_model} must be divisible by n_ctrl={self.n_ctrl}"
            )
        if self.d_model % self.sa_heads != 0:
            raise ValueError("d_model must be divisible by sa_heads")
        if self.one_to_many_R < 0:
            raise ValueError("repetition count must be >= 0")

    @classmethod
    def paper_scale(cls, **overrides) -> "DecoderConfig":
        base = dict(
            n_layers=10, d_model=256, n_queries=200, n_ctrl=4, n_samples=32,
            one_to_many_R=4, sa_heads=8,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def total_queries(self) -> int:
        return self.n_queries * (1 + self.one_to_many_R)


@dataclass(frozen=True)
class Mlp2:
    """Two-layer perceptron with rectifier nonlinearity."""

    w1: np.ndarray  # (hidden, in)
    w2: np.ndarray  # (out, hidden)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.w1.T, 0.0) @ self.w2.T


@dataclass(frozen=True)
class LayerParams:
    pos_w: np.ndarray  # (d_model, n_ctrl * 2 * pos_feats)
    attn: DeformAttnParams
    sa_wq: np.ndarray
    sa_wk: np.ndarray
    sa_wv: np.ndarray
    sa_wo: np.ndarray
    ffn_w1: np.ndarray
    ffn_w2: np.ndarray
    mlp_b: Mlp2
    mlp_m: Mlp2
    mlp_cls: Mlp2


@dataclass(frozen=True)
class DecoderParams:
    query_embed: np.ndarray  # (Q, d_model)
    extra_embed: np.ndarray  # (Q*R, d_model), one-to-many block
    init_b: Mlp2
    init_m: Mlp2
    init_cls: Mlp2
    layers: tuple[LayerParams, ...]


def _make_mlp(rng: np.random.Generator, d_in: int, hidden: int, d_out: int) -> Mlp2:
    return Mlp2(
        w1=_uniform(rng, (hidden, d_in), d_in),
        w2=_uniform(rng, (d_out, hidden), hidden),
    )


def _make_layer(seed: int, layer: int, cfg: DecoderConfig) -> LayerParams:
    d = cfg.d_model
    pos_dim = cfg.n_ctrl * 2 * cfg.pos_feats
    hk = cfg.n_ctrl * cfg.n_samples
    r = lambda tag: _rng(seed, 100 + layer, tag)
    return LayerParams(
        pos_w=_uniform(r(0), (d, pos_dim), pos_dim),
        attn=DeformAttnParams(
            d_model=d,
            n_heads=cfg.n_ctrl,
            n_samples=cfg.n_samples,
            offset_w=_uniform(r(1), (hk * 2, d), d),
            attn_w=_uniform(r(2), (hk, d), d),
            value_w=_uniform(r(3), (d, d), d),
            out_w=_uniform(r(4), (d, d), d),
        ),
        sa_wq=_uniform(r(5), (d, d), d),
        sa_wk=_uniform(r(6), (d, d), d),
        sa_wv=_uniform(r(7), (d, d), d),
        sa_wo=_uniform(r(8), (d, d), d),
        ffn_w1=_uniform(r(9), (d, d), d),
        ffn_w2=_uniform(r(10), (d, d), d),
        mlp_b=_make_mlp(r(11), d, d, cfg.n_ctrl * 3),
        mlp_m=_make_mlp(r(12), d, d, d),
        mlp_cls=_make_mlp(r(13), d, d, cfg.n_classes),
    )


def init_decoder_params(config: DecoderConfig, seed: int) -> DecoderParams:
    d = config.d_model
    n_extra = config.n_queries * config.one_to_many_R
    layers = tuple(
        _make_layer(seed, 0 if config.shared_layers else l, config)
        for l in range(config.n_layers)
    )
    return DecoderParams(
        query_embed=_uniform(_rng(seed, 1), (config.n_queries, d), d),
        extra_embed=_uniform(_rng(seed, 2), (n_extra, d), d),
        init_b=_make_mlp(_rng(seed, 3), d, d, config.n_ctrl * 3),
        init_m=_make_mlp(_rng(seed, 4), d, d, d),
        init_cls=_make_mlp(_rng(seed, 5), d, d, config.n_classes),
        layers=layers,
    )


@dataclass
class QueryState:
    """Per-layer decoder state (one row per query)."""

    embeddings: np.ndarray  # (Q', d_model)
    ctrl: np.ndarray  # (Q', n_ctrl, 3), strictly inside (0, 1)
    pre_mask: np.ndarray  # (Q', H, W) accumulated mask logits
    class_logits: np.ndarray  # (Q', n_classes)

    def sliced(self, n: int) -> "QueryState":
        return self.sliced_range(0, n)

    def sliced_range(self, start: int, stop: int) -> "QueryState":
        return QueryState(
            self.embeddings[start:stop],
            self.ctrl[start:stop],
            self.pre_mask[start:stop],
            self.class_logits[start:stop],
        )


def _blocks(config: DecoderConfig) -> list[tuple[int, int]]:
    q = config.n_queries
    out = [(0, q)]
    if config.one_to_many_R > 0:
        out.append((q, config.total_queries))
    return out


def _layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _self_attention(x: np.ndarray, pos: np.ndarray, p: LayerParams, heads: int) -> np.ndarray:
    n, d = x.shape
    dh = d // heads
    q = ((x + pos) @ p.sa_wq.T).reshape(n, heads, dh)
    k = ((x + pos) @ p.sa_wk.T).reshape(n, heads, dh)
    v = (x @ p.sa_wv.T).reshape(n, heads, dh)
    logits = np.einsum("nhd,mhd->hnm", q, k) / np.sqrt(dh)
    logits -= logits.max(axis=2, keepdims=True)
    e = np.exp(logits)
    attn = e / e.sum(axis=2, keepdims=True)
    out = np.einsum("hnm,mhd->nhd", attn, v).reshape(n, d)
    return out @ p.sa_wo.T


def positional_embedding(refs: np.ndarray, layer: LayerParams, n_feats: int = 16) -> np.ndarray:
    """Sine-encode per-head reference points and project to d_model."""
    return sine_embedding(refs, n_feats=n_feats) @ layer.pos_w.T


def init_layer(params: DecoderParams, config: DecoderConfig, grid: FeatureGrid) -> QueryState:
    """Initial prediction from the learnable query embeddings (no refinement)."""
    states = []
    for s, e in _blocks(config):
        emb = np.concatenate([params.query_embed, params.extra_embed])[s:e]
        ctrl = sigmoid(params.init_b(emb)).reshape(-1, config.n_ctrl, 3)
        pre_mask = np.einsum("qc,hwc->qhw", params.init_m(emb), grid.data)
        states.append(QueryState(emb, ctrl, pre_mask, params.init_cls(emb)))
    return _concat_states(states)


def _concat_states(states: list[QueryState]) -> QueryState:
    if len(states) == 1:
        return states[0]
    return QueryState(
        np.concatenate([s.embeddings for s in states]),
        np.concatenate([s.ctrl for s in states]),
        np.concatenate([s.pre_mask for s in states]),
        np.concatenate([s.class_logits for s in states]),
    )


def _layer_forward_block(
    state: QueryState,
    grid: FeatureGrid,
    layer: LayerParams,
    config: DecoderConfig,
    values: np.ndarray,
) -> QueryState:
    refs = state.ctrl[:, :, :2]  # discard height for sampling
    pos = positional_embedding(refs, layer, n_feats=config.pos_feats)
    a_bda = deform_attention(state.embeddings + pos, grid, refs, layer.attn, values=values)
    x = _layer_norm(state.embeddings + a_bda)
    x = _layer_norm(x + _self_attention(x, pos, layer, config.sa_heads))
    x = _layer_norm(x + np.maximum(x @ layer.ffn_w1.T, 0.0) @ layer.ffn_w2.T)
    delta = layer.mlp_b(x).reshape(-1, config.n_ctrl, 3)
    ctrl = sigmoid(inverse_sigmoid(state.ctrl) + delta)
    pre_mask = state.pre_mask + np.einsum("qc,hwc->qhw", layer.mlp_m(x), grid.data)
    return QueryState(x, ctrl, pre_mask, layer.mlp_cls(x))


def decoder_layer(
    state: QueryState,
    grid: FeatureGrid,
    layer: LayerParams,
    layer_index: int,
    config: DecoderConfig,
    values: np.ndarray | None = None,
) -> QueryState:
    """One refinement layer: BDA cross-attention, masked self-attention, FFN,
    inverse-sigmoid control-point update, pre-mask accumulation, class logits.

    The self-attention mask is block diagonal (see :func:`one_to_many_mask`),
    so the two query blocks are processed as independent sub-batches.
    """
    if layer_index < 1:
        raise ValueError("layer_index starts at 1")
    if values is None:
        values = project_values(grid, layer.attn)
    out = _concat_states(
        [
            _layer_forward_block(state.sliced_range(s, e), grid, layer, config, values)
            for s, e in _blocks(config)
        ]
    )
    for name, arr in (
        ("embeddings", out.embeddings),
        ("ctrl", out.ctrl),
        ("pre_mask", out.pre_mask),
        ("class_logits", out.class_logits),
    ):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite {name} at layer {layer_index}")
    return out


def run_decoder(
    config: DecoderConfig, grid: FeatureGrid, params: DecoderParams
) -> list[QueryState]:
    """Full forward pass; returns the initial state plus one state per layer.

    All returned states are retained (deep-supervision surface); the last one
    carries the final predictions.
    """
    if grid.channels != config.d_model:
        raise ValueError(f"grid channels {grid.channels} != d_model {config.d_model}")
    states = [init_layer(params, config, grid)]
    for l, layer in enumerate(params.layers, start=1):
        values = project_values(grid, layer.attn)
        states.append(decoder_layer(states[-1], grid, layer, l, config, values=values))
    return states


def mask_probability(state: QueryState) -> np.ndarray:
    """Sigmoid of the accumulated pre-mask maps, shape (Q', H, W)."""
    return sigmoid(state.pre_mask)


def class_probability(state: QueryState) -> np.ndarray:
    """Row-wise softmax over class logits."""
    z = state.class_logits - state.class_logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
