"""Command-line pipeline: scene generation, depth fitting, evaluation, gradcheck.

Exit codes: 0 success, 2 invalid input or precondition, 3 numerical/solver
failure. All randomness comes from explicit seeds, so reruns with identical
arguments produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .camera import RansacConfig
from .errors import InputError, SolverError
from .experiments import gradcheck_suite
from .geometry import (
    load_correspondences_csv,
    read_depth_text,
    save_correspondences_csv,
    write_depth_pgm,
    write_depth_text,
)
from .metrics import align, metrics, shift_gt_positive, write_metrics_csv, write_metrics_json
from .optim import OptimConfig, fit_depth, write_report_json, write_trace_csv
from .robust import RobustParams
from .scenes import (
    CorruptionSpec,
    corrupt,
    generate_correspondences,
    load_scene,
    render_depth,
    scene_to_dict,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3


def _add_ransac_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--inlier-threshold", type=float, default=None,
                   help="RANSAC inlier distance in pixels")
    p.add_argument("--max-iterations", type=int, default=None,
                   help="RANSAC hypothesis rounds")
    p.add_argument("--min-sample-size", type=int, default=None,
                   help="points per RANSAC hypothesis")
    p.add_argument("--ransac-seed", type=int, default=None)
    p.add_argument("--refit-rounds", type=int, default=None)


def _add_robust_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cutoff", type=float, default=None,
                   help="robust kernel saturation level in pixels (inf disables)")
    p.add_argument("--on-squared", action="store_true", default=None,
                   help="feed the kernel squared distances")


def _add_optim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--grad-clamp", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--init-mode", choices=("zeros", "uniform-random"), default=None)
    p.add_argument("--optim-seed", type=int, default=None)
    p.add_argument("--smooth-lambda", type=float, default=None,
                   help="weight of the grid smoothness term (0 disables)")


def _merge(defaults: dict, overrides: dict) -> dict:
    out = dict(defaults)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _ransac_from(doc: dict, args: argparse.Namespace) -> RansacConfig:
    merged = _merge(doc, {
        "inlier_threshold": args.inlier_threshold,
        "max_iterations": args.max_iterations,
        "min_sample_size": args.min_sample_size,
        "seed": args.ransac_seed,
        "refit_rounds": args.refit_rounds,
    })
    return RansacConfig(**merged)


def _robust_from(doc: dict, args: argparse.Namespace) -> RobustParams:
    merged = _merge(doc, {"cutoff": args.cutoff, "on_squared": args.on_squared})
    return RobustParams(**merged)


def _optim_from(doc: dict, args: argparse.Namespace) -> OptimConfig:
    merged = _merge(doc, {
        "learning_rate": args.learning_rate,
        "momentum": args.momentum,
        "grad_clamp": args.grad_clamp,
        "max_iters": args.max_iters,
        "patience": args.patience,
        "init_mode": args.init_mode,
        "seed": args.optim_seed,
        "smooth_lambda": args.smooth_lambda,
    })
    return OptimConfig(**merged)


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    spec = load_scene(args.scene)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w, h = spec.resolution
    n_points = w * h if args.dense else args.n_points

    corruption = CorruptionSpec(
        gaussian_sigma=args.gaussian_sigma,
        outlier_fraction=args.outlier_fraction,
        outlier_magnitude=args.outlier_magnitude,
        seed=args.corruption_seed,
    )

    depth_files = []
    for i in range(len(spec.views)):
        field = render_depth(spec, i)
        name = f"view{i}_depth.txt"
        write_depth_text(field, out / name)
        depth_files.append(name)

    pair_entries = []
    for a in range(len(spec.views)):
        for b in range(a + 1, len(spec.views)):
            clean = generate_correspondences(spec, a, b, n_points)
            noisy = corrupt(clean, CorruptionSpec(
                gaussian_sigma=corruption.gaussian_sigma,
                outlier_fraction=corruption.outlier_fraction,
                outlier_magnitude=corruption.outlier_magnitude,
                seed=corruption.seed + a * len(spec.views) + b,
            ))
            clean_name = f"pair{a}-{b}_clean.csv"
            noisy_name = f"pair{a}-{b}_corrupt.csv"
            save_correspondences_csv(clean, out / clean_name)
            save_correspondences_csv(noisy, out / noisy_name)
            pair_entries.append({
                "src": a, "tgt": b, "n_points": n_points,
                "clean": clean_name, "corrupt": noisy_name,
            })

    manifest = {
        "scene_spec_path": str(args.scene),
        "scene": scene_to_dict(spec),
        "output_dir": str(out),
        "files": {"depth": depth_files, "pairs": pair_entries},
        "corruption": asdict(corruption),
        "ransac": asdict(RansacConfig()),
        "robust": asdict(RobustParams()),
        "optim": asdict(OptimConfig()),
    }
    _write_json(manifest, out / "manifest.json")
    print(f"wrote {len(depth_files)} depth grids, {len(pair_entries)} pairs -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _load_manifest(path: str) -> tuple[dict, Path]:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(
            f"invalid JSON in {path}: line {exc.lineno}, column {exc.colno}"
        ) from exc
    if not isinstance(doc, dict) or "files" not in doc:
        raise InputError(f"{path} is not a run manifest")
    return doc, p.parent


def cmd_fit(args: argparse.Namespace) -> int:
    manifest, base = _load_manifest(args.manifest)
    ransac_cfg = _ransac_from(manifest.get("ransac", {}), args)
    robust = _robust_from(manifest.get("robust", {}), args)
    optim_cfg = _optim_from(manifest.get("optim", {}), args)

    w, h = manifest["scene"]["resolution"]
    src_view = args.source_view
    key = "corrupt" if args.corrupted else "clean"
    pairs = []
    for entry in manifest["files"]["pairs"]:
        if entry["src"] != src_view:
            continue
        corr = load_correspondences_csv(base / entry[key])
        corr, moved = corr.snapped()
        if moved:
            print(f"note: snapped {moved} source points to the pixel grid", file=sys.stderr)
        pairs.append((corr, 1.0))
    if not pairs:
        raise InputError(f"manifest has no pairs with source view {src_view}")

    holdout = None
    if args.holdout_fraction > 0.0:
        rng = np.random.default_rng(optim_cfg.seed)
        first, weight = pairs[0]
        n_hold = max(4, int(args.holdout_fraction * len(first)))
        if len(first) - n_hold < 4:
            raise InputError("holdout fraction leaves too few training pairs")
        idx = rng.permutation(len(first))
        from .geometry import CorrespondenceSet

        holdout = CorrespondenceSet(first.source[idx[:n_hold]], first.target[idx[:n_hold]])
        pairs[0] = (
            CorrespondenceSet(first.source[idx[n_hold:]], first.target[idx[n_hold:]]),
            weight,
        )

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fitted, report = fit_depth(pairs, w, h, optim_cfg, ransac_cfg, robust, holdout=holdout)
    write_depth_text(fitted, out / "recovered_depth.txt")
    write_depth_pgm(fitted, out / "recovered_depth.pgm")
    write_report_json(report, out / "fit_report.json")
    write_trace_csv(report, out / "loss_trace.csv")
    print(
        f"fit stopped ({report.stop_reason}) after {report.iterations_run} iterations, "
        f"final loss {report.final_loss:.6g}"
    )
    if report.stop_reason == "error":
        print(f"solver error: {report.error_message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args: argparse.Namespace) -> int:
    pred = read_depth_text(args.pred)
    gt = read_depth_text(args.gt)
    mask = None
    if args.mask is not None:
        mask = read_depth_text(args.mask).values > 0.5
    if args.gt_floor is not None:
        gt = shift_gt_positive(gt, mask, floor=args.gt_floor)
    aligned, _ = align(pred, gt, mask, literal_scale=args.literal_scale)
    report = metrics(aligned, gt, mask)
    print(report.to_json())
    if args.json_out:
        write_metrics_json(report, args.json_out)
    if args.csv_out:
        write_metrics_csv(report, args.csv_out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def cmd_gradcheck(args: argparse.Namespace) -> int:
    sizes = sorted(args.sizes) if args.sizes else None
    if sizes:
        lo, hi = sizes[0], sizes[-1]
    else:
        lo, hi = 8, 200
    cases = gradcheck_suite(
        seed=args.seed,
        n_instances=args.instances,
        min_corr=lo,
        max_corr=hi,
        step=args.step,
        break_analytic=args.break_analytic,
    )
    worst = 0.0
    for i, case in enumerate(cases):
        status = "ok" if case.max_rel_error <= args.tolerance else "FAIL"
        print(
            f"instance {i:3d}: K={case.n_corr:4d} max rel error {case.max_rel_error:.3e} {status}"
        )
        worst = max(worst, case.max_rel_error)
    print(f"worst case: {worst:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if worst <= args.tolerance else EXIT_SOLVER


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrdepth",
        description="Recover dense depth from sparse two-view correspondences "
        "by descending a robust reprojection loss through a RANSAC-fitted "
        "affine camera.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a scene and generate correspondence files")
    g.add_argument("scene", help="scene spec JSON")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n-points", type=int, default=50,
                   help="correspondences per view pair")
    g.add_argument("--dense", action="store_true", help="one correspondence per pixel")
    g.add_argument("--gaussian-sigma", type=float, default=0.0)
    g.add_argument("--outlier-fraction", type=float, default=0.0)
    g.add_argument("--outlier-magnitude", type=float, default=0.0)
    g.add_argument("--corruption-seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="recover a depth grid from generated correspondences")
    f.add_argument("manifest", help="manifest.json written by gen")
    f.add_argument("--out-dir", required=True)
    f.add_argument("--source-view", type=int, default=0)
    f.add_argument("--corrupted", action="store_true",
                   help="fit the corrupted correspondence files")
    f.add_argument("--holdout-fraction", type=float, default=0.0,
                   help="fraction of the first pair held out for the plateau rule")
    _add_ransac_flags(f)
    _add_robust_flags(f)
    _add_optim_flags(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="align a prediction to ground truth and report metrics")
    e.add_argument("pred", help="predicted depth grid (text format)")
    e.add_argument("gt", help="ground-truth depth grid (text format)")
    e.add_argument("--mask", default=None, help="grid file; entries > 0.5 are evaluated")
    e.add_argument("--json-out", default=None)
    e.add_argument("--csv-out", default=None)
    e.add_argument("--literal-scale", action="store_true",
                   help="compute the depth scale from unshifted values")
    e.add_argument("--gt-floor", type=float, default=None,
                   help="shift gt so its minimum equals this before evaluating")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of the depth gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--instances", type=int, default=50)
    c.add_argument("--sizes", type=int, nargs="*", default=None,
                   help="min/max correspondence counts (default 8 200)")
    c.add_argument("--step", type=float, default=1e-5)
    c.add_argument("--tolerance", type=float, default=2e-3)
    c.add_argument("--break-analytic", action="store_true",
                   help="corrupt the analytic gradient; the check must fail")
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
