"""Orchestration shared by the CLI and the HTTP service.

Each function takes a validated request schema, runs the corresponding core
operation, and returns a response schema.  The CLI and the FastAPI endpoints
are both thin wrappers over these, so results are identical no matter which
front end issued the job.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data, ecr, schemas, sweep
from .nn import build_network, count_parameters, evaluate, train
from .quant import direct_quantize, retrain


def _data_dir(explicit: str | None) -> str | None:
    return explicit if explicit is not None else os.environ.get(data.DATA_DIR_ENV)


def run_synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    if req.kind == "frames":
        ds = data.synth_frames(req.n_samples, req.n_features, req.n_classes,
                               req.class_separation, req.seed)
    else:
        ds = data.synth_images(req.n_samples, req.n_classes, contrast=req.contrast,
                               noise=req.noise, seed=req.seed)
    out = Path(req.out)
    if req.format == "npz":
        out.parent.mkdir(parents=True, exist_ok=True)
        data.save_dataset_npz(ds, out)
        paths = [str(out)]
    else:
        n_test = max(1, int(req.test_fraction * len(ds)))
        test = ds.subset(np.arange(len(ds) - n_test, len(ds)), ds.name + "-test")
        train_part = ds.subset(np.arange(len(ds) - n_test))
        if req.format == "cifar10":
            data.write_cifar10(train_part, test, out)
            paths = [str(out / name) for name in data.CIFAR_TRAIN_FILES + [data.CIFAR_TEST_FILE]]
        else:
            rows = cols = int(round(ds.features.shape[1] ** 0.5)) if ds.features.ndim == 2 else 28
            data.write_mnist_idx(train_part, test, out, rows=rows, cols=cols)
            paths = [str(out / n) for pair in data.MNIST_FILES.values() for n in pair]
    return schemas.SynthResponse(paths=paths, n_samples=len(ds), n_classes=ds.num_classes)


def run_train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    bundle = data.resolve_dataset(req.dataset, _data_dir(req.data_dir))
    size = req.network.to_size_config()
    n_inputs = req.network.inputs or (
        bundle.train.features.shape[1] if bundle.train.features.ndim == 2 else 0)
    n_outputs = req.network.outputs or bundle.train.num_classes
    net = build_network(size, n_inputs, n_outputs, req.seed,
                        input_shape=bundle.train.features.shape[1:])
    net, history = train(net, bundle.train, bundle.valid, req.train.to_train_config())
    valid_error = min(history) if history else evaluate(net, bundle.valid)
    out = Path(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save_checkpoint(out, net, extra_meta={"valid_error": valid_error, "seed": req.seed,
                                               "dataset": req.dataset})
    return schemas.TrainResponse(checkpoint=str(out), valid_error=valid_error,
                                 test_error=evaluate(net, bundle.test), epochs=len(history),
                                 param_count=count_parameters(net))


def run_quantize(req: schemas.QuantizeRequest) -> schemas.QuantizeResponse:
    loaded = ckpt.load_checkpoint(req.checkpoint)
    net = loaded.net
    valid_error = None
    if req.method == "direct":
        qnet, qspec = direct_quantize(net, req.bits)
        master = net
    else:
        if req.config is None:
            raise ValueError("retrain quantization needs a config with train settings "
                             "and a dataset")
        bundle = data.resolve_dataset(req.config.dataset, _data_dir(req.data_dir))
        qnet, qspec, history = retrain(net, req.bits, bundle.train, bundle.valid,
                                       req.config.train.to_train_config())
        valid_error = min(history) if history else evaluate(qnet, bundle.valid)
        master = qnet  # retrain exposes only the quantized view
    out = Path(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save_checkpoint(out, qnet, qspec=qspec, master=master,
                         extra_meta={"source": str(req.checkpoint), "method": req.method})
    return schemas.QuantizeResponse(checkpoint=str(out), bits=req.bits, method=req.method,
                                    valid_error=valid_error,
                                    step_sizes=list(qspec.step_sizes))


def run_eval(req: schemas.EvalRequest) -> schemas.EvalResponse:
    loaded = ckpt.load_checkpoint(req.checkpoint)
    bundle = data.resolve_dataset(req.dataset, _data_dir(req.data_dir))
    ds = getattr(bundle, req.split)
    return schemas.EvalResponse(error=evaluate(loaded.net, ds), n_samples=len(ds))


def run_sweep_job(req: schemas.SweepRequest) -> schemas.SweepResponse:
    cfg = sweep.SweepConfig(
        family=req.sweep.family,
        sizes=req.sweep.to_size_configs(),
        bit_widths=tuple(req.sweep.bit_widths),
        methods=tuple(req.sweep.methods),
        seeds=tuple(req.sweep.seeds),
        train_cfg=req.sweep.train.to_train_config(),
        dataset=req.sweep.dataset,
    )
    records = sweep.run_sweep(cfg, req.out, _data_dir(req.data_dir), req.max_workers)
    return schemas.SweepResponse(records_path=str(req.out), n_records=len(records))


def run_ecr(req: schemas.EcrRequest) -> schemas.EcrResponse:
    records = sweep.read_records(req.records)
    refs = req.reference_sizes
    if refs is None:
        refs = sorted({ecr.layer_size_of(r) for r in records if r.method == "float"})
    reports = ecr.build_ecr_report(records, refs, req.param_model)
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "ecr_report.csv"
    ecr.write_ecr_report_csv(reports, report_path)
    plot_paths = ecr.export_plot_data(records, reports, out_dir)
    return schemas.EcrResponse(report_path=str(report_path),
                               plot_paths=[str(p) for p in plot_paths],
                               n_reports=len(reports))
