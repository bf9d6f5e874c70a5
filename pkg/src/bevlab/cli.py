"""Command-line client for the lab service.

Every subcommand builds the same request models the HTTP API accepts and
calls the service handlers in process; `serve` starts the FastAPI app.  File
output is canonical JSON (17-significant-digit floats, atomic writes), so a
fixed seed regenerates byte-identical files.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from .io_json import SchemaError, read_json, write_json_atomic
from .service import handlers
from .service import schemas as S

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

OUT_DIR_ENV = "BEVLAB_OUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _out_path(value: str | None, default_name: str) -> Path:
    if value:
        return Path(value)
    return Path(os.environ.get(OUT_DIR_ENV, ".")) / default_name


def _write_model(path: Path, model) -> None:
    write_json_atomic(path, model.model_dump(by_alias=True))


def _load(path: str) -> dict:
    return read_json(path)


def _cmd_gen(args) -> int:
    req = S.GenerateRequest(
        seed=args.seed,
        n_instances=args.n_instances,
        order=args.order,
        paper_scale=args.paper_scale,
        mask_width_cells=args.mask_width,
    )
    scene_model = handlers.generate(req)
    out = _out_path(args.out, f"scene_{args.seed}.json")
    _write_model(out, scene_model)
    print(f"wrote {out}")
    if args.emit_pred:
        from .io_json import scene_from_payload

        scene = scene_from_payload(scene_model.model_dump(by_alias=True))
        _write_model(Path(args.emit_pred), handlers.scene_as_prediction(scene))
        print(f"wrote {args.emit_pred}")
    return EXIT_OK


def _cmd_forward(args) -> int:
    scene = S.SceneModel.model_validate(_load(args.scene))
    req = S.ForwardRequest(
        scene=scene,
        seed=args.seed,
        paper_scale=args.paper_scale,
        with_loss=args.with_loss,
        decoder=S.DecoderSettings(
            n_layers=args.layers,
            n_queries=args.queries,
            n_samples=args.offsets,
            one_to_many_R=args.repetitions,
        ),
    )
    resp = handlers.forward(req)
    out = _out_path(args.out, "forward.json")
    _write_model(out, resp)
    print(f"wrote {out}")
    if resp.losses:
        for key, value in resp.losses.items():
            print(f"loss {key:12s} {value:.6f}")
    return EXIT_OK


def _cmd_match(args) -> int:
    req = S.MatchRequest(
        scene=S.SceneModel.model_validate(_load(args.gt)),
        prediction=S.PredictionModel.model_validate(_load(args.pred)),
        dense_mask_cost=args.dense_mask_cost,
        sample_count=args.sample_count,
        seed=args.seed,
    )
    resp = handlers.match(req)
    out = _out_path(args.out, "assignment.json")
    _write_model(out, resp)
    print(f"wrote {out}")
    print(f"pairs: {resp.pairs}  total_cost: {resp.total_cost:.6f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    req = S.EvalRequest(
        prediction=S.PredictionModel.model_validate(_load(args.pred)),
        scene=S.SceneModel.model_validate(_load(args.gt)),
        v11m=args.v11m,
        resample=args.resample,
    )
    report = handlers.evaluate(req)
    out = _out_path(args.out, "metrics.json")
    _write_model(out, report)
    rows = [
        ("DET_l", report.det_l),
        ("DET_l_ch", report.det_l_ch),
        ("TOP_ll", report.top_ll),
        ("OLS_l", report.ols_l),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:7.2f}")
    for key in sorted(report.per_threshold_ap):
        print(f"  AP {key:<14} {report.per_threshold_ap[key]:7.2f}")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    resp = handlers.gradcheck(
        S.GradcheckRequest(seed=args.seed, rounds=args.rounds, tolerance=args.tolerance)
    )
    width = max(len(k) for k in resp.per_check)
    for name, err in resp.per_check.items():
        print(f"{name:<{width}}  {err:.3e}")
    print(f"max relative error {resp.max_rel_error:.3e} (tolerance {resp.tolerance:g})")
    if args.out:
        _write_model(Path(args.out), resp)
    if not resp.passed:
        print("gradcheck FAILED", file=sys.stderr)
        return EXIT_VALIDATION
    print("gradcheck passed")
    return EXIT_OK


def _cmd_bench(args) -> int:
    resp = handlers.bench(
        S.BenchRequest(
            d_model=args.d_model,
            n_ctrl=args.ctrl,
            n_samples=args.offsets,
            grid_h=args.grid,
            grid_w=args.grid,
            timing_repeats=args.repeats,
        )
    )
    header = f"{'variant':8s} {'heads':>5s} {'MACs':>10s} {'samples':>8s} {'matmuls':>8s} {'wall_us':>9s}"
    print(header)
    for row in resp.rows:
        print(
            f"{row.variant:8s} {row.n_heads:5d} {row.multiply_accumulates:10d} "
            f"{row.sample_calls:8d} {row.matmul_calls:8d} {row.wall_us:9.1f}"
        )
    if args.out:
        _write_model(Path(args.out), resp)
    return EXIT_OK


def _cmd_fit(args) -> int:
    scene_model = S.SceneModel.model_validate(_load(args.scene)) if args.scene else None
    resp = handlers.fit(
        S.FitRequest(
            scene=scene_model,
            seed=args.seed,
            n_instances=args.n_instances,
            iterations=args.iterations,
            step_size=args.step_size,
            init_offset=args.init_offset,
        )
    )
    print(
        f"loss {resp.initial_loss:.6f} -> {resp.final_loss:.2e}; "
        f"mean per-coordinate error {resp.final_mean_l1:.2e}"
    )
    if args.out:
        _write_model(Path(args.out), resp)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="bevlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-instances", type=int, default=4)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--mask-width", type=int, default=4)
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--emit-pred", default=None, help="also write the GT as a prediction file")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("forward", help="run the decoder on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--queries", type=int, default=8)
    p.add_argument("--offsets", type=int, default=4)
    p.add_argument("--repetitions", type=int, default=2)
    p.add_argument("--with-loss", action="store_true")
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_forward)

    p = sub.add_parser("match", help="Hungarian-match a prediction against GT")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--dense-mask-cost", action="store_true")
    p.add_argument("--sample-count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("eval", help="evaluate a prediction file against GT")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--v11m", action="store_true")
    p.add_argument("--resample", type=int, default=11)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("bench", help="op counts and wall times per attention variant")
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--ctrl", type=int, default=8)
    p.add_argument("--offsets", type=int, default=4)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("fit", help="direct control-point optimization demo")
    p.add_argument("--scene", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-instances", type=int, default=3)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--step-size", type=float, default=0.01)
    p.add_argument("--init-offset", type=float, default=0.05)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ValidationError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
