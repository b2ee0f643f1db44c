"""Command-line entry point: ``mpfusion {simulate,reconstruct,metrics,export-png}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DimensionError, FormatError, NumericalError
from .export import export_png
from .io import read_volume, write_volume
from .metrics import compute_metrics
from .pipeline import (
    METHODS,
    SINGLE_POSE_METHODS,
    Experiment,
    MethodResult,
    load_sinograms,
    recon_name,
    simulate,
    write_simulation,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def _write_result(out: Path, r: MethodResult) -> list[Path]:
    stem = recon_name(r.method, r.pose)[: -len(".vol")]
    paths = [write_volume(out / f"{stem}.vol", r.volume)]
    # timing lives in its own sidecar: it is the only output that varies between runs
    meta = {"method": r.method, "pose": r.pose, "iterations": r.iterations, "runtime_s": r.runtime}
    if r.diagnostics is not None:
        d = r.diagnostics
        meta.update(converged=d.converged, equilibrium_residual=d.equilibrium_residual,
                    mann_residuals=d.residuals)
        p = out / f"{stem}.diag.txt"
        p.write_text(d.table())
        paths.append(p)
    p = out / f"{stem}.json"
    p.write_text(json.dumps(meta, indent=2) + "\n")
    paths.append(p)
    return paths


def cmd_simulate(args) -> int:
    cfg = _config(args)
    for p in write_simulation(simulate(cfg), cfg.output_dir):
        print(p)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir
    exp = Experiment(cfg, load_sinograms(cfg, out))
    if args.method == "all":
        results = exp.run_all()
    elif args.method in SINGLE_POSE_METHODS and args.pose is None:
        results = [exp.run(args.method, k) for k in range(cfg.n_poses)]
    else:
        if args.pose is not None and args.method not in SINGLE_POSE_METHODS:
            raise ConfigError(f"--pose applies only to {', '.join(SINGLE_POSE_METHODS)}")
        results = [exp.run(args.method, args.pose or 0)]
    if args.method in ("all", "pw-avg", "mpf-pixelweighted"):
        ws = exp.pixel_weights()
        for k in range(ws.n_poses):
            print(write_volume(out / f"weights_pose{k}.vol", ws.volume(k)))
    for r in results:
        for p in _write_result(out, r):
            print(p)
        print(f"{r.label}: {r.iterations} iterations, {r.runtime:.2f} s", file=sys.stderr)
    return EXIT_OK


def _runtime_sidecar(vol_path: Path) -> tuple[float, int | None]:
    side = vol_path.with_suffix(".json")
    if not side.exists():
        return float("nan"), None
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return float(meta.get("runtime_s", float("nan"))), meta.get("iterations")


def cmd_metrics(args) -> int:
    out = Path(args.out) if args.out else load_config(args.config).output_dir
    truth = read_volume(out / "truth.vol")
    labels = read_volume(out / "labels.vol")
    paths = [Path(p) for p in args.recons] or sorted(out.glob("recon_*.vol"))
    if not paths:
        raise ConfigError(f"{out}: no reconstructions found (run 'reconstruct' first)")
    recons, runtimes, iters = {}, {}, {}
    for p in paths:
        name = p.stem[len("recon_"):] if p.stem.startswith("recon_") else p.stem
        recons[name] = read_volume(p)
        runtimes[name], iters[name] = _runtime_sidecar(p)
    report = compute_metrics(truth, labels, recons, runtimes, iters)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_export_png(args) -> int:
    v = read_volume(args.volume)
    window = tuple(args.window) if args.window else None
    index = args.index
    if args.output:
        target = Path(args.output)
    else:
        shown = v.dims["xyz".index(args.axis)] // 2 if index is None else index
        target = Path(args.volume).with_name(f"{Path(args.volume).stem}_{args.axis}{shown}.png")
    print(export_png(v, target, args.axis, index, window))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpfusion", description="Pixel-weighted multi-pose fusion CT reconstruction."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", type=Path, default=None,
                       help="experiment YAML (default: the shipped reference)")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="noise seed (overrides config)")

    p = sub.add_parser("simulate", help="write truth.vol, labels.vol and pose_<k>.sin")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="run one reconstruction method")
    common(p)
    p.add_argument("--method", required=True, choices=METHODS + ("all",))
    p.add_argument("--pose", type=int, default=None,
                   help="pose for single-pose methods (default: every pose)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", help="RMSE report for reconstructions against truth")
    common(p, seed=False)
    p.add_argument("recons", nargs="*", help="reconstruction volumes (default: recon_*.vol in the output dir)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export-png", help="write one windowed slice as an 8-bit PNG")
    p.add_argument("volume", type=Path)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, default=None, help="slice index (default: middle)")
    p.add_argument("--window", type=float, nargs=2, metavar=("MIN", "MAX"), default=None)
    p.add_argument("--output", "-o", type=Path, default=None, help="PNG path")
    p.set_defaults(func=cmd_export_png)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"mpfusion: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DimensionError, FormatError) as exc:
        print(f"mpfusion: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mpfusion: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
