"""Command-line front end.

Thin wrappers over the pipeline functions: every subcommand parses its flags
and JSON config file into the strict request schemas and prints a short
result.  Exit codes: 0 success, 1 usage/config error, 2 data or file-format
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from . import pipeline, schemas
from .errors import DataFormatError, QbnetError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        raise UsageError(message)


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataFormatError(f"missing config file {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{p}: invalid JSON ({exc})") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qbnet", description="size vs weight-precision trade-off lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a float network and save its checkpoint")
    p.add_argument("--config", required=True, help="JSON file: network/train/dataset/seed")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--data-dir", default=None)

    p = sub.add_parser("quantize", help="quantize a float checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--method", choices=["direct", "retrain"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON file with train/dataset (retrain only)")
    p.add_argument("--data-dir", default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.add_argument("--data-dir", default=None)

    p = sub.add_parser("sweep", help="run a (size x bits x method) grid")
    p.add_argument("--config", required=True, help="JSON sweep config file")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ecr", help="derive compression ratios from a results CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--reference-sizes", type=float, nargs="*", default=None)
    p.add_argument("--param-model", choices=["exact", "square_approx"],
                   default="square_approx")

    p = sub.add_parser("synth", help="generate synthetic dataset files")
    p.add_argument("--kind", choices=["frames", "images"], default="frames")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["npz", "cifar10", "mnist"], default="npz")
    p.add_argument("--n-samples", type=int, default=5000)
    p.add_argument("--n-features", type=int, default=1353)
    p.add_argument("--n-classes", type=int, default=61)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--contrast", type=float, default=0.4)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _cmd_train(args) -> str:
    req = schemas.TrainRequest(**_load_json(args.config), out=args.out, data_dir=args.data_dir)
    resp = pipeline.run_train(req)
    return (f"trained {resp.param_count} parameters for {resp.epochs} epochs: "
            f"valid_error={resp.valid_error:.6g} test_error={resp.test_error:.6g} "
            f"-> {resp.checkpoint}")


def _cmd_quantize(args) -> str:
    config = schemas.QuantizeJobConfig(**_load_json(args.config)) if args.config else None
    req = schemas.QuantizeRequest(checkpoint=args.checkpoint, bits=args.bits,
                                  method=args.method, out=args.out, config=config,
                                  data_dir=args.data_dir)
    resp = pipeline.run_quantize(req)
    extra = f" valid_error={resp.valid_error:.6g}" if resp.valid_error is not None else ""
    return f"{resp.method} {resp.bits}-bit quantization{extra} -> {resp.checkpoint}"


def _cmd_eval(args) -> str:
    req = schemas.EvalRequest(checkpoint=args.checkpoint, dataset=args.dataset,
                              split=args.split, data_dir=args.data_dir)
    resp = pipeline.run_eval(req)
    return f"{resp.error:.6g}"


def _cmd_sweep(args) -> str:
    req = schemas.SweepRequest(sweep=schemas.SweepJobConfig(**_load_json(args.config)),
                               out=args.out, data_dir=args.data_dir, max_workers=args.workers)
    resp = pipeline.run_sweep_job(req)
    return f"{resp.n_records} records -> {resp.records_path}"


def _cmd_ecr(args) -> str:
    req = schemas.EcrRequest(records=args.records, out_dir=args.out_dir,
                             reference_sizes=args.reference_sizes,
                             param_model=args.param_model)
    resp = pipeline.run_ecr(req)
    return f"{resp.n_reports} reference sizes -> {resp.report_path}"


def _cmd_synth(args) -> str:
    req = schemas.SynthRequest(kind=args.kind, out=args.out, format=args.format,
                               n_samples=args.n_samples, n_features=args.n_features,
                               n_classes=args.n_classes, class_separation=args.separation,
                               contrast=args.contrast, noise=args.noise, seed=args.seed)
    resp = pipeline.run_synth(req)
    return f"{resp.n_samples} samples, {resp.n_classes} classes -> {resp.paths[0]}"


def _cmd_serve(args) -> str:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return "server stopped"


_COMMANDS = {
    "train": _cmd_train,
    "quantize": _cmd_quantize,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "ecr": _cmd_ecr,
    "synth": _cmd_synth,
    "serve": _cmd_serve,
}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        print(_COMMANDS[args.command](args))
        return 0
    except (UsageError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, QbnetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
