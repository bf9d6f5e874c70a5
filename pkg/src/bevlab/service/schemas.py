"""Pydantic request/response models; the scene and prediction models mirror
the on-disk JSON schemas byte for byte (module bevlab.io_json)."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class GridSpecModel(BaseModel):
    h: int
    w: int
    cell_m: float


class SceneInstanceModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    ctrl: list[list[float]]
    cls: int = Field(alias="class")
    mask_rle: list[int]


class SceneModel(BaseModel):
    schema_version: int = 1
    seed: int = 0
    grid: GridSpecModel
    features: list[float]
    instances: list[SceneInstanceModel]
    adjacency: list[list[int]] = []


class PredictionInstanceModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    ctrl: list[list[float]]
    polyline: list[list[float]]
    confidence: float
    cls: int = Field(alias="class")


class PredictionModel(BaseModel):
    schema_version: int = 1
    instances: list[PredictionInstanceModel]
    adjacency: list[list[float]] = []  # [i, j, score] triples


class GenerateRequest(BaseModel):
    seed: int = 0
    n_instances: int = 4
    order: int = 3
    channels: int | None = None
    paper_scale: bool = False
    mask_width_cells: int = 4


class DecoderSettings(BaseModel):
    n_layers: int = 3
    n_queries: int = 8
    n_samples: int = 4
    one_to_many_R: int = 2
    n_classes: int = 2
    sa_heads: int = 4
    shared_layers: bool = False


class ForwardRequest(BaseModel):
    scene: SceneModel
    seed: int = 0
    decoder: DecoderSettings = DecoderSettings()
    paper_scale: bool = False
    with_loss: bool = False


class LayerSummaryModel(BaseModel):
    ctrl: list[list[list[float]]]  # (Q, n_ctrl, 3)
    confidences: list[float]


class ForwardResponse(BaseModel):
    prediction: PredictionModel
    layers: list[LayerSummaryModel]
    losses: dict[str, float] | None = None


class MatchWeightsModel(BaseModel):
    lambda_reg: float = 5.0
    lambda_mask_bce: float = 5.0
    lambda_mask_dice: float = 5.0
    lambda_cls: float = 2.0


class MatchRequest(BaseModel):
    scene: SceneModel
    prediction: PredictionModel
    weights: MatchWeightsModel = MatchWeightsModel()
    dense_mask_cost: bool = False
    sample_count: int = 100
    seed: int = 0


class MatchResponse(BaseModel):
    pairs: list[list[int]]
    total_cost: float


class EvalRequest(BaseModel):
    prediction: PredictionModel
    scene: SceneModel
    v11m: bool = False
    resample: int = 11


class MetricReportModel(BaseModel):
    det_l: float
    det_l_ch: float
    top_ll: float
    ols_l: float
    per_threshold_ap: dict[str, float]


class GradcheckRequest(BaseModel):
    seed: int = 0
    rounds: int = 3
    tolerance: float = 1e-5


class GradcheckResponse(BaseModel):
    per_check: dict[str, float]
    max_rel_error: float
    tolerance: float
    passed: bool


class BenchRequest(BaseModel):
    d_model: int = 32
    n_ctrl: int = 8
    n_samples: int = 4
    grid_h: int = 32
    grid_w: int = 32
    timing_repeats: int = 20


class BenchRow(BaseModel):
    variant: str
    n_heads: int
    multiply_accumulates: int
    sample_calls: int
    matmul_calls: int
    wall_us: float


class BenchResponse(BaseModel):
    rows: list[BenchRow]


class FitRequest(BaseModel):
    scene: SceneModel | None = None
    seed: int = 0
    n_instances: int = 3
    iterations: int = 500
    step_size: float = 0.01
    init_offset: float = 0.05


class FitResponse(BaseModel):
    ctrl: list[list[list[float]]]
    final_mean_l1: float
    initial_loss: float
    final_loss: float
    monotone_trace: list[float]
    pairs: list[list[int]]
