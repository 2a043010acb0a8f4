"""``layerquant`` command line.

Every command is a pure function of (config file, seed); artifacts are written
atomically and carry no timestamps, so reruns are byte-identical.

Exit codes: 0 ok, 2 usage / config / missing input, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .accounting import compression_table, format_table, model_layout, reports_to_json
from .config import ConfigError, RunConfig, dump_config, load_config, standard_benchmark
from .experiments import AXES, ablate, ablation_to_dict, calibration_set, eval_set, fp_model, uniform_quantize
from .harness import check_pow2_dims, error_metrics
from .quantizers import QuantConfigError
from .stack import QuantizedStack
from .tensor import DimensionError, atomic_write_bytes
from .volts import SCHEMES, CalibrationError, calibrate_model

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else standard_benchmark()
    layer = {}
    if args.bits_w is not None:
        layer["bits_w"] = args.bits_w
    if args.bits_a is not None:
        layer["bits_a"] = args.bits_a
    if args.rank is not None:
        layer["rank"] = args.rank
    if layer:
        cfg = cfg.replace(layer=cfg.layer.replace(**layer))
    if args.scheme is not None:
        cfg.calibration.scheme = args.scheme
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    cfg.calib_config()  # validates thresholds / scheme
    if cfg.layer.rotation != "identity":
        check_pow2_dims(cfg.model.dims)
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output.dir)


def _claim(out: Path, names, force: bool) -> None:
    """Refuse to overwrite existing artifacts unless ``--force``."""
    existing = [n for n in names if (out / n).exists()]
    if existing and not force:
        raise UsageError(f"{out}: {', '.join(existing)} already exist (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def _write_model(out: Path, qmodel: QuantizedStack, cfg: RunConfig) -> None:
    qmodel.save(out / "model")
    _write_text(out / "config.json", dump_config(cfg))


# -- commands -------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    _claim(out, ["model", "report.json", "report.txt", "config.json"], args.force)
    model = fp_model(cfg, cfg.seed)
    qmodel, report = calibrate_model(model, calibration_set(cfg, cfg.seed), cfg.calib_config())
    _write_model(out, qmodel, cfg)
    _write_text(out / "report.json", report.to_json())
    _write_text(out / "report.txt", report.table())
    print(report.table(), end="")
    print(f"total QAO rounds: {report.total_rounds}  classes: {report.class_counts()}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    _claim(out, ["model", "config.json"], args.force)
    qmodel = uniform_quantize(cfg, cfg.seed)
    _write_model(out, qmodel, cfg)
    print(f"wrote {out / 'model'} ({len(qmodel)} layers, {cfg.layer.qao_rounds} QAO round(s) each)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    archive = Path(args.archive)
    if not (archive / "meta.json").is_file():
        raise UsageError(f"model archive not found: {archive}")
    out = _out_dir(args, cfg)
    _claim(out, ["metrics.jsonl", "summary.json", "summary.txt"], args.force)
    qmodel = QuantizedStack.load(archive)
    model = fp_model(cfg, cfg.seed)
    if list(model.dims) != list(qmodel.dims):
        raise UsageError(f"archive dims {qmodel.dims} do not match config model dims {model.dims}")
    lines, ys_fp, ys_q = [], [], []
    for k, x in enumerate(eval_set(cfg, cfg.seed)):
        y_fp = np.asarray(model.forward(x)).reshape(-1, model.dims[-1])
        y_q = np.asarray(qmodel.forward(x)).reshape(-1, model.dims[-1])
        m = error_metrics(y_fp, y_q).to_dict()
        lines.append(json.dumps({"seed": cfg.seed, "sample": k, **m}, sort_keys=True))
        ys_fp.append(y_fp)
        ys_q.append(y_q)
    summary = error_metrics(np.concatenate(ys_fp), np.concatenate(ys_q))
    _write_text(out / "metrics.jsonl", "\n".join(lines) + "\n")
    _write_text(out / "summary.json", _json({"seed": cfg.seed, "num_samples": len(lines), **summary.to_dict()}))
    table = (
        f"{'seed':>6} {'rel_frob':>12} {'sqnr_db':>10} {'max_abs':>12}\n"
        f"{cfg.seed:>6d} {summary.rel_frob:>12.6g} {summary.sqnr_db:>10.4g} {summary.max_abs:>12.6g}\n"
    )
    _write_text(out / "summary.txt", table)
    print(table, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    _claim(out, ["compression.json", "compression.txt"], args.force)
    layout = model_layout(cfg.model.dims, cfg.layer.rank, cfg.layer.rotation)
    reports = compression_table(layout, cfg.report.tokens)
    _write_text(out / "compression.json", reports_to_json(reports))
    _write_text(out / "compression.txt", format_table(reports))
    print(format_table(reports), end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.axis not in AXES:
        raise UsageError(f"unknown ablation axis {args.axis!r}; expected one of {sorted(AXES)}")
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    stem = f"ablation-{args.axis}"
    _claim(out, [f"{stem}.json", f"{stem}.txt", f"{stem}.jsonl"], args.force)
    res = ablate(cfg, args.axis)
    per_seed = []
    for i, seed in enumerate(res.seeds):
        for arm in res.arms:
            row = {"seed": seed, "arm": arm, "qao_rounds": res.rounds[arm][i], **res.metrics[arm][i].to_dict()}
            per_seed.append(json.dumps(row, sort_keys=True))
    _write_text(out / f"{stem}.jsonl", "\n".join(per_seed) + "\n")
    _write_text(out / f"{stem}.json", _json(ablation_to_dict(res)))
    _write_text(out / f"{stem}.txt", res.table())
    print(res.table(), end="")
    return EXIT_OK


def cmd_dump_defaults(args) -> int:
    text = dump_config(RunConfig())
    if args.out:
        path = Path(args.out)
        if path.exists() and not args.force:
            raise UsageError(f"{path} already exists (use --force to overwrite)")
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_text(path, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config (JSON); default: the bundled standard benchmark")
    p.add_argument("--out", help="output directory (default: output.dir from the config)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    p.add_argument("--bits-w", type=int, help="weight bit-width")
    p.add_argument("--bits-a", type=int, help="activation bit-width")
    p.add_argument("--rank", type=int, help="rank of the full-precision branch")
    p.add_argument("--scheme", choices=SCHEMES, help="QAO budget scheme used by calibrate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layerquant", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="statistics pass + variance-guided QAO; writes report and model archive")
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quantize", help="build the model with a uniform QAO budget (no statistics pass)")
    _common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="compare a model archive against the FP model on the eval set")
    p.add_argument("archive", help="model archive directory (e.g. OUT/model)")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="effective Params / Ops table for W16A16, W8A8, W6A6, W4A4")
    _common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ablate", help="run every arm of an ablation axis over the benchmark seeds")
    p.add_argument("axis", help=f"one of: {', '.join(AXES)}")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-defaults", help="print (or write with --out) the default config")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=cmd_dump_defaults)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    # LinAlgError subclasses ValueError, so the numeric branch goes first
    except (CalibrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"layerquant: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, QuantConfigError, DimensionError, ValueError, OSError) as exc:
        print(f"layerquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
