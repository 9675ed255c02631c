"""Command-line entry point: train, eval, analyze, verify, transform.

The report-producing paths write machine-readable output (line-delimited
JSON logs, CSV cost tables) and render matplotlib figures next to them;
the console gets a human-readable summary.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import cost_report, percent_change
from .data import load_cifar10, synthetic_dataset
from .dct import dct1d, dct2d, idct1d, idct2d, make_plan
from .filtering import dct_filter_2d, kernel_to_multipliers, sym_conv_spatial
from .models import ModelSpec, build_model, canonical_names, canonical_spec, load_spec
from .train import TrainConfig, evaluate, load_checkpoint, train


def _resolve_spec(name_or_path: str) -> ModelSpec:
    p = Path(name_or_path)
    if p.suffix == ".json" or p.is_file():
        return load_spec(p)
    return canonical_spec(name_or_path)


def _cmd_train(args) -> int:
    cfg = TrainConfig.from_json_file(args.config)
    records, best_path, last_path = train(cfg, resume_from=args.resume, console=print)
    if records:
        from .figures import render_training_curves

        figure_path = args.figure or str(Path(cfg.checkpoint_dir) / "curves.png")
        render_training_curves(records, figure_path)
        print(f"curves: {figure_path}")
    print(f"best checkpoint: {best_path}")
    print(f"last checkpoint: {last_path}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    spec = ckpt.spec()
    model = build_model(spec, seed=0, dtype=np.float32)
    ckpt.restore(model)
    if args.data:
        _, test_set = load_cifar10(args.data, np.float32)
    else:
        test_set = synthetic_dataset(10_000, seed=2_000_033, dtype=np.float32, name="synthetic-test")
    if args.limit:
        test_set = test_set.take(args.limit)
    acc = evaluate(model, test_set, batch_size=args.batch_size)
    print(f"{spec.name} on {test_set.name} ({len(test_set)} images): top-1 {acc * 100:.2f}%")
    return 0


def _cmd_analyze(args) -> int:
    report = cost_report(_resolve_spec(args.spec))
    baseline = cost_report(_resolve_spec(args.baseline)) if args.baseline else None
    if args.format == "json":
        doc = json.loads(report.to_json())
        doc["schema_version"] = 1
        if baseline:
            doc["baseline"] = {
                "name": baseline.name,
                "total_params": baseline.total_params,
                "total_macs": baseline.total_macs,
                "params_change": percent_change(report.total_params, baseline.total_params),
                "macs_change": percent_change(report.total_macs, baseline.total_macs),
            }
        print(json.dumps(doc, indent=2))
    else:
        print(report.to_table())
        if baseline:
            print(
                f"\nvs {baseline.name}: params {report.total_params:,} against "
                f"{baseline.total_params:,} ({percent_change(report.total_params, baseline.total_params)}), "
                f"macs {report.total_macs:,} against {baseline.total_macs:,} "
                f"({percent_change(report.total_macs, baseline.total_macs)})"
            )
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(report.to_csv())
        print(f"csv: {args.csv}", file=sys.stderr)
    if args.figure:
        from .figures import render_cost_figure

        reports = [baseline, report] if baseline else [report]
        render_cost_figure(reports, args.figure)
        print(f"figure: {args.figure}", file=sys.stderr)
    return 0


def _cmd_verify(args) -> int:
    rng = np.random.default_rng(0)
    failures = 0

    def suite(name, max_err, bound):
        nonlocal failures
        ok = max_err < bound
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name}: max error {max_err:.3e} (bound {bound:g})")

    err = 0.0
    for n in (1, 2, 4, 7, 8, 16, 32, 56):
        x = rng.standard_normal((100, n))
        plan = make_plan(n)
        err = max(err, float(np.abs(idct1d(plan, dct1d(plan, x)) - x).max()))
    suite("round-trip idct1d(dct1d(x)) = x", err, 1e-10)

    err = 0.0
    for n in (1, 2, 4, 8, 16, 32, 64):
        x = rng.standard_normal((100, n))
        a = dct1d(make_plan(n, "naive_matrix"), x)
        b = dct1d(make_plan(n, "fast_butterfly"), x)
        err = max(err, float(np.abs(a - b).max()))
    suite("fast and naive backends agree", err, 1e-10)

    err = 0.0
    for n in (4, 8, 16):
        for k in (1, 2, 3):
            for _ in range(100):
                x = rng.standard_normal((n, n))
                w = rng.standard_normal(k)
                mult = np.outer(kernel_to_multipliers(w, n), kernel_to_multipliers(w, n))
                spectral = dct_filter_2d(x, mult)
                spatial = sym_conv_spatial(np.swapaxes(sym_conv_spatial(x, w), -1, -2), w)
                spatial = np.swapaxes(spatial, -1, -2)
                err = max(err, float(np.abs(spectral - spatial).max()))
    suite("transform-domain filtering equals symmetric convolution", err, 1e-8)

    err = 0.0
    for n in (4, 8):
        for k in (2, 3):
            w = rng.standard_normal(k)
            mult = kernel_to_multipliers(w, n)
            plan = make_plan(n)
            op_spectral = np.stack(
                [idct1d(plan, dct1d(plan, np.eye(n)[i]) * mult) for i in range(n)], axis=1
            )
            op_spatial = np.stack([sym_conv_spatial(np.eye(n)[i], w) for i in range(n)], axis=1)
            err = max(err, float(np.abs(op_spectral - op_spatial).max()))
    suite("operator matrices agree", err, 1e-10)

    err = 0.0
    for n in (8, 16):
        x = rng.standard_normal((2, 3, n, n))
        plan = make_plan(n)
        err = max(err, float(np.abs(idct2d(dct2d(x, plan, plan), plan, plan) - x).max()))
    suite("2D round-trip", err, 1e-10)

    print("all suites passed" if failures == 0 else f"{failures} suite(s) failed")
    return 0 if failures == 0 else 1


def _cmd_transform(args) -> int:
    values = np.loadtxt(args.input, dtype=np.float64)
    if args.size:
        n = args.size
        if values.size != n * n:
            print(f"error: expected {n * n} values for size {n}, got {values.size}", file=sys.stderr)
            return 2
        values = values.reshape(n, n)
    values = np.atleast_2d(values)
    x = values[None, None]
    plan_h, plan_w = make_plan(x.shape[-2]), make_plan(x.shape[-1])
    out = (idct2d(x, plan_h, plan_w) if args.inverse else dct2d(x, plan_h, plan_w))[0, 0]
    np.savetxt(args.output, out, fmt="%.18e")
    return 0


def _cmd_models(args) -> int:
    for name in canonical_names():
        print(name)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dctnet", description="Spectral residual networks: train, evaluate, analyze.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training recipe from a JSON config")
    p.add_argument("--config", required=True, help="path to a train config JSON file")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--figure", help="where to render training curves (default: checkpoint dir)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="directory of binary batch files (omit to use the synthetic set)")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--limit", type=int, default=0, help="evaluate only the first N images")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", help="parameter and MAC cost report for a model spec")
    p.add_argument("--spec", required=True, help="canonical model name or spec JSON path")
    p.add_argument("--baseline", help="second spec to compare against")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--csv", help="also write the per-layer rows as CSV")
    p.add_argument("--figure", help="also render a totals bar chart")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("verify", help="run the transform and filtering oracle suites")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("transform", help="2D transform of a whitespace-separated matrix file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--inverse", action="store_true")
    p.add_argument("--size", type=int, help="reshape a flat list of N*N values to N x N")
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("models", help="list canonical model names")
    p.set_defaults(func=_cmd_models)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
