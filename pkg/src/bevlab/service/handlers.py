"""Service handlers: pydantic request in, pydantic response out.

Every HTTP route delegates to one of these functions, and the CLI calls them
directly (one process, same code path).
"""

from __future__ import annotations

import time

import numpy as np

from ..attention import AttnConfig, count_ops
from ..decoder import DecoderConfig, QueryState, class_probability, init_decoder_params, run_decoder
from ..fitting import fit_demo
from ..gradcheck import run_gradcheck
from ..grid import FeatureGrid
from ..io_json import (
    prediction_from_payload,
    prediction_to_payload,
    scene_from_payload,
    scene_to_payload,
)
from ..losses import LossWeights, total_loss
from ..matching import MatchCost, hungarian, pairwise_cost
from ..metrics import evaluate as evaluate_metrics
from ..scene import (
    DESK_GRID,
    PAPER_GRID,
    Scene,
    generate_scene,
    gt_polylines_m,
    rasterize_centerline,
    to_meters,
)
from . import schemas as S

PAPER_CHANNELS = 256
DESK_CHANNELS = 32
EVAL_POLYLINE_SAMPLES = 10


def _scene_from_model(model: S.SceneModel) -> Scene:
    return scene_from_payload(model.model_dump(by_alias=True))


def _scene_to_model(scene: Scene) -> S.SceneModel:
    return S.SceneModel.model_validate(scene_to_payload(scene))


def generate(req: S.GenerateRequest) -> S.SceneModel:
    spec = PAPER_GRID if req.paper_scale else DESK_GRID
    channels = req.channels or (PAPER_CHANNELS if req.paper_scale else DESK_CHANNELS)
    scene = generate_scene(
        req.seed,
        n_instances=req.n_instances,
        order=req.order,
        spec=spec,
        channels=channels,
        mask_width_cells=req.mask_width_cells,
    )
    return _scene_to_model(scene)


def scene_as_prediction(scene: Scene) -> S.PredictionModel:
    """Ground truth recast as a perfect prediction (confidence 1 everywhere)."""
    payload = prediction_to_payload(
        scene.gt.ctrl,
        np.ones(scene.gt.n_instances),
        scene.gt.labels,
        scene.gt.adjacency.astype(float),
        polyline_samples=EVAL_POLYLINE_SAMPLES,
    )
    return S.PredictionModel.model_validate(payload)


def forward(req: S.ForwardRequest) -> S.ForwardResponse:
    scene = _scene_from_model(req.scene)
    grid = scene.feature_grid
    d = req.decoder
    n_ctrl = scene.gt.ctrl.shape[1] if scene.gt.n_instances else 4
    if req.paper_scale:
        config = DecoderConfig.paper_scale(d_model=grid.channels, n_ctrl=n_ctrl)
    else:
        config = DecoderConfig(
            n_layers=d.n_layers,
            d_model=grid.channels,
            n_queries=d.n_queries,
            n_classes=d.n_classes,
            n_ctrl=n_ctrl,
            n_samples=d.n_samples,
            one_to_many_R=d.one_to_many_R,
            sa_heads=d.sa_heads,
            shared_layers=d.shared_layers,
        )
    params = init_decoder_params(config, req.seed)
    states = run_decoder(config, grid, params)

    layers = []
    for state in states:
        block = state.sliced(config.n_queries)
        conf = 1.0 - class_probability(block)[:, 0]
        layers.append(
            S.LayerSummaryModel(ctrl=block.ctrl.tolist(), confidences=conf.tolist())
        )

    final = states[-1].sliced(config.n_queries)
    probs = class_probability(final)
    conf = 1.0 - probs[:, 0]
    classes = probs[:, 1:].argmax(axis=1) + 1 if config.n_classes > 1 else np.ones(len(conf), int)
    payload = prediction_to_payload(
        final.ctrl,
        conf,
        classes,
        np.zeros((config.n_queries, config.n_queries)),
        polyline_samples=EVAL_POLYLINE_SAMPLES,
    )
    losses = None
    if req.with_loss:
        _, breakdown = total_loss(
            states, scene.gt, LossWeights(), repetitions=config.one_to_many_R
        )
        losses = {k: float(v) for k, v in breakdown.items()}
    return S.ForwardResponse(
        prediction=S.PredictionModel.model_validate(payload), layers=layers, losses=losses
    )


def _prediction_state(pred_model: S.PredictionModel, scene: Scene) -> QueryState:
    """Lift a prediction file into a matchable state.

    Prediction files carry no decoder internals, so the mask term is driven
    by rasterizing each predicted curve at the ground-truth mask width and
    the class term by the stored confidence.
    """
    ctrl, polylines, confs, classes, _ = prediction_from_payload(
        pred_model.model_dump(by_alias=True)
    )
    n = len(ctrl)
    spec = scene.grid_spec
    pre = np.zeros((n, spec.h, spec.w))
    for i, poly in enumerate(polylines):
        mask = rasterize_centerline(poly[:, :2], spec)
        pre[i] = np.where(mask > 0, 4.0, -4.0)
    eps = 1e-9
    logits = np.stack(
        [np.log(np.clip(1.0 - confs, eps, None)), np.log(np.clip(confs, eps, None))],
        axis=1,
    )
    return QueryState(
        embeddings=np.zeros((n, 1)),
        ctrl=ctrl,
        pre_mask=pre,
        class_logits=logits,
    )


def match(req: S.MatchRequest) -> S.MatchResponse:
    scene = _scene_from_model(req.scene)
    state = _prediction_state(req.prediction, scene)
    weights = MatchCost(**req.weights.model_dump())
    cost = pairwise_cost(
        state,
        scene.gt,
        weights,
        sample_count=req.sample_count,
        seed=req.seed,
        dense_mask=req.dense_mask_cost,
    )
    assignment = hungarian(cost)
    return S.MatchResponse(
        pairs=[[int(i), int(j)] for i, j in assignment.pairs],
        total_cost=assignment.total_cost,
    )


def evaluate(req: S.EvalRequest) -> S.MetricReportModel:
    scene = _scene_from_model(req.scene)
    _, polylines, confs, _, adjacency = prediction_from_payload(
        req.prediction.model_dump(by_alias=True)
    )
    pred_m = [to_meters(p, scene.grid_spec) for p in polylines]
    gt_m = gt_polylines_m(scene)
    report = evaluate_metrics(
        pred_m,
        list(confs),
        adjacency,
        gt_m,
        scene.gt.adjacency,
        resample=req.resample,
        v11m=req.v11m,
    )
    return S.MetricReportModel(**report.to_dict())


def gradcheck(req: S.GradcheckRequest) -> S.GradcheckResponse:
    per_check = run_gradcheck(req.seed, rounds=req.rounds)
    worst = max(per_check.values())
    return S.GradcheckResponse(
        per_check=per_check,
        max_rel_error=worst,
        tolerance=req.tolerance,
        passed=bool(worst < req.tolerance),
    )


def bench(req: S.BenchRequest) -> S.BenchResponse:
    from ..attention import (
        bda,
        init_deform_params,
        init_standard_params,
        mpda,
        spda,
        standard_cross_attention,
    )

    rng = np.random.default_rng(0)
    grid = FeatureGrid(rng.normal(size=(req.grid_h, req.grid_w, req.d_model)))
    query = rng.normal(size=req.d_model)
    base_cfg = AttnConfig(
        d_model=req.d_model,
        n_heads=req.n_ctrl,
        n_samples=req.n_samples,
        grid_h=req.grid_h,
        grid_w=req.grid_w,
        n_ctrl=req.n_ctrl,
    )
    params = init_deform_params(0, req.d_model, req.n_ctrl, req.n_samples)
    refs = np.tile(rng.uniform(0.3, 0.7, 2), (req.n_ctrl, 1))
    calls = {
        "bda": (base_cfg, lambda: bda(query, grid, refs, params)),
        "spda": (base_cfg, lambda: spda(query, grid, refs[0], params)),
        "mpda": (base_cfg, lambda: mpda(query, grid, refs, params)),
    }
    if req.d_model % 16 == 0:
        cfg16 = AttnConfig(
            d_model=req.d_model,
            n_heads=16,
            n_samples=req.n_samples,
            grid_h=req.grid_h,
            grid_w=req.grid_w,
            n_ctrl=req.n_ctrl,
        )
        params16 = init_deform_params(0, req.d_model, 16, req.n_samples)
        refs16 = np.tile(refs[0], (16, 1))
        calls["mpda16"] = (cfg16, lambda: mpda(query, grid, refs16, params16))
    sa_params = init_standard_params(0, req.d_model)
    calls["sa"] = (base_cfg, lambda: standard_cross_attention(query, grid, sa_params))

    rows = []
    for name, (cfg, fn) in calls.items():
        variant = "mpda" if name == "mpda16" else name
        counter = count_ops(variant, cfg)
        fn()  # warm up
        start = time.perf_counter()
        for _ in range(req.timing_repeats):
            fn()
        wall = (time.perf_counter() - start) / req.timing_repeats
        rows.append(
            S.BenchRow(
                variant=name,
                n_heads=cfg.n_heads,
                multiply_accumulates=counter.multiply_accumulates,
                sample_calls=counter.sample_calls,
                matmul_calls=counter.matmul_calls,
                wall_us=wall * 1e6,
            )
        )
    return S.BenchResponse(rows=rows)


def fit(req: S.FitRequest) -> S.FitResponse:
    if req.scene is not None:
        scene = _scene_from_model(req.scene)
    else:
        scene = generate_scene(req.seed, n_instances=req.n_instances)
    result = fit_demo(
        scene,
        iterations=req.iterations,
        step_size=req.step_size,
        init_offset=req.init_offset,
    )
    trace = result.monotone_trace
    if len(trace) > 50:
        idx = np.linspace(0, len(trace) - 1, 50).astype(int)
        trace = [trace[i] for i in idx]
    return S.FitResponse(
        ctrl=result.ctrl.tolist(),
        final_mean_l1=result.final_mean_l1,
        initial_loss=result.loss_trace[0],
        final_loss=result.loss_trace[-1],
        monotone_trace=trace,
        pairs=[[int(i), int(j)] for i, j in result.final_assignment_pairs],
    )
