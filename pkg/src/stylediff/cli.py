"""Command-line entry point.

Subcommands cover the whole pipeline: ``gen-data``, ``ingest``,
``train-backbone``, ``train-guidance``, ``generate``, ``evaluate``, and
``export-plots``. Flags override config-file values, which override built-in
defaults. Every artifact gets a ``<name>.provenance.json`` sidecar holding the
resolved config hash, seed, and input checksums, which is enough to replay the
run; all outputs are byte-deterministic given (config, seed, inputs).
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import backbone as bb
from . import guidance as gd
from . import metrics as mt
from . import storage
from .config import RunConfig, load_run_config
from .data import NormalizationState, csv_ingest, fit_normalization, sine_generate
from .errors import StyleDiffError, ValidationError
from .transform import from_image


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _crc_of(path: Path) -> str:
    return f"{zlib.crc32(Path(path).read_bytes()):08x}"


def _write_provenance(out_path: Path, command: str, config: RunConfig, inputs: dict, extra=None):
    record = {
        "command": command,
        "config_digest": config.digest(),
        "config": config.values,
        "seed": config.seed,
        "inputs": {str(p): _crc_of(p) for p in inputs.values() if p is not None},
    }
    if extra:
        record.update(extra)
    sidecar = out_path.with_name(out_path.name + ".provenance.json")
    sidecar.write_text(json.dumps(record, sort_keys=True, indent=1, default=str) + "\n")


def _resolve_out(config: RunConfig, name: str) -> Path:
    path = Path(name)
    if not path.is_absolute():
        path = config.output_dir / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_windows(path: Path):
    values, state = storage.load_dataset(path)
    return values, state


def cmd_gen_data(args, config: RunConfig) -> int:
    n = config.get("data", "samples")
    length = config.get("data", "length")
    features = config.get("data", "features")
    windows = sine_generate(n, length, features=features, seed=config.seed)
    state = fit_normalization(windows.reshape(-1, features))
    out = _resolve_out(config, args.out)
    storage.save_dataset(out, windows, state)
    _write_provenance(out, "gen-data", config, {})
    _log(f"wrote {n} sine windows ({length}x{features}) to {out}")
    return 0


def cmd_ingest(args, config: RunConfig) -> int:
    columns = config.get("data", "columns")
    feature_columns = None
    if columns:
        parts = [c.strip() for c in str(columns).split(",") if c.strip()]
        feature_columns = [int(p) if p.lstrip("-").isdigit() else p for p in parts]
    windows, state = csv_ingest(
        args.csv,
        length=config.get("data", "length"),
        stride=config.get("data", "stride"),
        feature_columns=feature_columns,
        delimiter=config.get("data", "delimiter"),
    )
    out = _resolve_out(config, args.out)
    storage.save_dataset(out, windows, state)
    _write_provenance(out, "ingest", config, {"csv": Path(args.csv)})
    _log(f"ingested {windows.shape[0]} windows from {args.csv} into {out}")
    return 0


def cmd_train_backbone(args, config: RunConfig) -> int:
    windows, _ = _load_windows(Path(args.data))
    features = windows.shape[2]
    result = bb.train_backbone(
        windows,
        config.transform_params(),
        config.denoiser_config(features),
        config.backbone_train_config(),
        seed=config.seed,
    )
    out = _resolve_out(config, args.out)
    storage.save_backbone(out, result.net.double())
    _write_provenance(
        out,
        "train-backbone",
        config,
        {"data": Path(args.data)},
        extra={"loss_history": [float(v) for v in result.loss_history]},
    )
    _log(
        f"trained backbone on {windows.shape[0]} windows, "
        f"final loss {result.loss_history[-1]:.6f}, saved to {out}"
    )
    return 0


def cmd_train_guidance(args, config: RunConfig) -> int:
    windows, _ = _load_windows(Path(args.data))
    net = storage.load_backbone(Path(args.backbone))
    length, features = windows.shape[1], windows.shape[2]
    kernel = config.kernel_config(length)
    result = gd.train_guidance(
        windows,
        net,
        config.guidance_config(features, length),
        config.guidance_train_config(),
        kernel,
        seed=config.seed,
    )
    out_trend = _resolve_out(config, args.out_trend)
    out_seasonal = _resolve_out(config, args.out_seasonal)
    storage.save_guidance(out_trend, result.trend_net.double(), role="trend")
    storage.save_guidance(out_seasonal, result.seasonal_net.double(), role="seasonal")
    inputs = {"data": Path(args.data), "backbone": Path(args.backbone)}
    _write_provenance(
        out_trend,
        "train-guidance",
        config,
        inputs,
        extra={"loss_history": [float(v) for v in result.trend_history]},
    )
    _write_provenance(
        out_seasonal,
        "train-guidance",
        config,
        inputs,
        extra={"loss_history": [float(v) for v in result.seasonal_history]},
    )
    _log(
        f"trained guidance nets (trend loss {result.trend_history[-1]:.6f}, "
        f"seasonal loss {result.seasonal_history[-1]:.6f})"
    )
    return 0


def cmd_generate(args, config: RunConfig) -> int:
    net = storage.load_backbone(Path(args.backbone))
    features = net.config.in_channels
    length = config.get("data", "length")
    out = _resolve_out(config, args.out)
    inputs = {"backbone": Path(args.backbone)}

    if args.unguided:
        images = bb.sample_unguided(net, config.schedule(), args.count, rng=config.seed)
        values = from_image(images.double().numpy(), config.transform_params(), length)
        state = NormalizationState(minimum=np.zeros(features), maximum=np.ones(features))
        extra = {"mode": "unguided"}
    else:
        missing = [
            flag
            for flag, value in (
                ("--data", args.data),
                ("--guidance-trend", args.guidance_trend),
                ("--guidance-seasonal", args.guidance_seasonal),
            )
            if value is None
        ]
        if missing:
            raise ValidationError(f"guided generation needs {', '.join(missing)}")
        windows, state = _load_windows(Path(args.data))
        if windows.shape[1] != length:
            length = windows.shape[1]
        trend_net = storage.load_guidance(Path(args.guidance_trend), role="trend")
        seasonal_net = storage.load_guidance(Path(args.guidance_seasonal), role="seasonal")
        selection = "fixed" if args.style_index is not None else "random"
        kernel = config.kernel_config(
            length, style_selection=selection, style_index=args.style_index or 0
        )
        library = gd.build_style_library(windows, kernel)
        result = gd.sample_guided(
            net,
            (trend_net, seasonal_net),
            library,
            kernel,
            count=args.count,
            seed=config.seed,
        )
        values = result.values
        inputs.update(
            {
                "data": Path(args.data),
                "guidance_trend": Path(args.guidance_trend),
                "guidance_seasonal": Path(args.guidance_seasonal),
            }
        )
        extra = {
            "mode": "guided",
            "style_indices": [int(i) for i in result.style_indices],
            "style_sources": result.style_sources,
        }

    storage.save_dataset(out, values, state)
    _write_provenance(out, "generate", config, inputs, extra=extra)
    _log(f"generated {args.count} windows ({extra['mode']}) into {out}")
    return 0


def cmd_evaluate(args, config: RunConfig) -> int:
    real, _ = _load_windows(Path(args.real))
    generated, _ = _load_windows(Path(args.generated))
    report = mt.metric_report(real, generated, config.eval_config(), seed=config.seed)
    out = _resolve_out(config, args.out)
    out.write_text(report.to_text())
    if args.csv_out:
        csv_path = _resolve_out(config, args.csv_out)
        csv_path.write_text(mt.MetricReport.csv_header() + "\n" + report.csv_row() + "\n")
    _write_provenance(
        out,
        "evaluate",
        config,
        {"real": Path(args.real), "generated": Path(args.generated)},
    )
    _log(report.to_text().rstrip())
    return 0


def cmd_export_plots(args, config: RunConfig) -> int:
    real, _ = _load_windows(Path(args.real))
    generated, _ = _load_windows(Path(args.generated))
    projection = mt.pca_project(real, generated)
    out = _resolve_out(config, args.out)
    lines = ["x,y,label"]
    for x, y in projection.real_points:
        lines.append(f"{x!r},{y!r},real")
    for x, y in projection.gen_points:
        lines.append(f"{x!r},{y!r},generated")
    out.write_text("\n".join(lines) + "\n")
    _write_provenance(
        out,
        "export-plots",
        config,
        {"real": Path(args.real), "generated": Path(args.generated)},
        extra={"explained_ratio": [float(v) for v in projection.explained_ratio]},
    )
    _log(f"wrote PCA projection ({len(lines) - 1} points) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylediff",
        description="Style-guided diffusion generation of time series",
    )
    parser.add_argument("--config", help="INI config file (key = value sections)")
    parser.add_argument("--seed", type=int, help="global seed (overrides config)")
    parser.add_argument("--output-dir", help="directory for artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic sine dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--features", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest", help="window and normalize a CSV file")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--columns", help="comma-separated names or 0-based indices")
    p.add_argument("--delimiter")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-backbone", help="train the diffusion denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--precision", choices=("float64", "float32"))
    p.set_defaults(func=cmd_train_backbone)

    p = sub.add_parser("train-guidance", help="train the style-guidance transformers")
    p.add_argument("--data", required=True)
    p.add_argument("--backbone", required=True)
    p.add_argument("--out-trend", required=True)
    p.add_argument("--out-seasonal", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--pairs-per-sample", type=int)
    p.add_argument("--precision", choices=("float64", "float32"))
    p.add_argument("--decomposer", choices=("stl", "fourier"))
    p.set_defaults(func=cmd_train_guidance)

    p = sub.add_parser("generate", help="sample windows from a trained backbone")
    p.add_argument("--backbone", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=128)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--guided", action="store_true", default=True)
    mode.add_argument("--unguided", action="store_true", default=False)
    p.add_argument("--data", help="real dataset supplying styles (guided mode)")
    p.add_argument("--guidance-trend")
    p.add_argument("--guidance-seasonal")
    p.add_argument("--style-index", type=int, help="pin one library style for all samples")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a generated set against a real set")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv-out")
    p.add_argument("--replicates", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-plots", help="export the joint PCA projection")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_plots)
    return parser


# flag -> (section, key) overrides, applied only when the flag was given
_OVERRIDES = {
    "seed": ("run", "seed"),
    "output_dir": ("run", "output_dir"),
    "samples": ("data", "samples"),
    "length": ("data", "length"),
    "features": ("data", "features"),
    "stride": ("data", "stride"),
    "columns": ("data", "columns"),
    "delimiter": ("data", "delimiter"),
    "epochs": None,  # resolved per subcommand below
    "batch_size": None,
    "learning_rate": None,
    "base_channels": ("diffusion", "base_channels"),
    "precision": None,
    "pairs_per_sample": ("guidance", "pairs_per_sample"),
    "decomposer": ("guidance", "decomposer"),
    "replicates": ("evaluation", "replicates"),
}

_TRAIN_SECTION = {"train-backbone": "diffusion", "train-guidance": "guidance"}


def _collect_overrides(args) -> dict:
    overrides: dict[str, dict[str, object]] = {}

    def put(section, key, value):
        overrides.setdefault(section, {})[key] = value

    for flag, target in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if target is not None:
            put(*target, value)
        elif args.command in _TRAIN_SECTION:
            put(_TRAIN_SECTION[args.command], flag, value)
    return overrides


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_run_config(args.config, _collect_overrides(args))
        _log(f"config sha256={config.digest()} seed={config.seed}")
        return args.func(args, config)
    except (StyleDiffError, OSError) as exc:
        _log(f"error ({type(exc).__name__}): {exc}")
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
