"""Experiment harness for the (size x bits x method) grids.

One run record is one plotted point: a (family, size, bits, method, seed)
cell with its validation and test error.  For each (size, seed) the float
network is trained once, checkpointed, and reused by every quantization
cell.  Records are appended to the results CSV as soon as they complete, so
an interrupted sweep resumes by skipping every config hash already present;
after completion the file is rewritten in canonical order (sorted by config
hash) so its content is independent of scheduling.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .checkpoint import fnv1a64, load_checkpoint, save_checkpoint
from .data import DataBundle, resolve_dataset
from .errors import DataFormatError
from .nn import Network, SizeConfig, TrainConfig, build_network, evaluate, train
from .quant import direct_quantize, retrain

CSV_HEADER = ("config_hash,family,size_label,size_param_count,bits,method,"
              "seed,valid_error,test_error,wall_seconds")
METHODS = ("float", "direct", "retrain")
FLOAT_BITS_LABEL = "float32"


@dataclass(frozen=True)
class SweepConfig:
    family: str
    sizes: tuple[SizeConfig, ...]
    bit_widths: tuple[int, ...]
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    train_cfg: TrainConfig
    dataset: str

    def __post_init__(self):
        if not (self.sizes and self.methods and self.seeds):
            raise ValueError("sizes, methods and seeds must be non-empty")
        if any(s.family != self.family for s in self.sizes):
            raise ValueError("all sizes must belong to the sweep's family")
        if any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be a subset of {METHODS}")
        needs_bits = any(m in ("direct", "retrain") for m in self.methods)
        if needs_bits and not self.bit_widths:
            raise ValueError("quantization methods need at least one bit width")
        if any(not 2 <= b <= 8 for b in self.bit_widths):
            raise ValueError("bit widths must lie in [2, 8]")


@dataclass(frozen=True)
class RunRecord:
    config_hash: str
    family: str
    size_label: str
    size_param_count: int
    bits: str  # numeric string for quantized cells, "float32" for float cells
    method: str
    seed: int
    valid_error: float
    test_error: float
    wall_seconds: float

    def __post_init__(self):
        for value, name in ((self.valid_error, "valid_error"), (self.test_error, "test_error")):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")

    def key_fields(self) -> tuple:
        """Everything that identifies the cell's outcome; excludes wall time."""
        return (self.config_hash, self.family, self.size_label, self.size_param_count,
                self.bits, self.method, self.seed,
                _fmt_real(self.valid_error), _fmt_real(self.test_error))


def _fmt_real(x: float) -> str:
    return f"{x:.6g}"


def _cell_text(cfg: SweepConfig, size: SizeConfig, bits: str, method: str, seed: int) -> str:
    t = cfg.train_cfg
    return (f"family={cfg.family};size={size.label};bits={bits};method={method};seed={seed};"
            f"dataset={cfg.dataset};lr={t.learning_rate!r};batch={t.batch_size};"
            f"epochs={t.max_epochs};patience={t.early_stop_patience};decay={t.lr_decay!r}")


def cell_hash(cfg: SweepConfig, size: SizeConfig, bits: str, method: str, seed: int) -> str:
    return f"{fnv1a64(_cell_text(cfg, size, bits, method, seed)):016x}"


def write_records(records, path) -> None:
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in records:
            f.write(",".join([r.config_hash, r.family, r.size_label,
                              str(r.size_param_count), r.bits, r.method, str(r.seed),
                              _fmt_real(r.valid_error), _fmt_real(r.test_error),
                              _fmt_real(r.wall_seconds)]) + "\n")


def read_records(path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"missing records file {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise DataFormatError(f"{path}: line 1: bad or missing header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise DataFormatError(f"{path}: line {lineno}: expected 10 fields, got {len(parts)}")
        try:
            records.append(RunRecord(parts[0], parts[1], parts[2], int(parts[3]), parts[4],
                                     parts[5], int(parts[6]), float(parts[7]), float(parts[8]),
                                     float(parts[9])))
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
    return records


def sort_records(records) -> list[RunRecord]:
    return sorted(records, key=lambda r: r.config_hash)


class _ResultsWriter:
    """Append-as-you-go CSV writer under a single-writer lock."""

    def __init__(self, path: Path, existing: list[RunRecord]):
        self.path = path
        self.lock = threading.Lock()
        self.records = list(existing)
        if not path.exists():
            with open(path, "w") as f:
                f.write(CSV_HEADER + "\n")

    def append(self, record: RunRecord) -> None:
        with self.lock:
            self.records.append(record)
            with open(self.path, "a") as f:
                f.write(",".join([record.config_hash, record.family, record.size_label,
                                  str(record.size_param_count), record.bits, record.method,
                                  str(record.seed), _fmt_real(record.valid_error),
                                  _fmt_real(record.test_error),
                                  _fmt_real(record.wall_seconds)]) + "\n")
                f.flush()


def _float_checkpoint_path(out_path: Path, cfg: SweepConfig, size: SizeConfig, seed: int) -> Path:
    ckpt_dir = out_path.parent / (out_path.stem + "_checkpoints")
    h = cell_hash(cfg, size, FLOAT_BITS_LABEL, "float", seed)
    return ckpt_dir / f"float-{h}.qbnet"


def _train_or_load_float(cfg: SweepConfig, size: SizeConfig, seed: int,
                         bundle: DataBundle, ckpt_path: Path) -> tuple[Network, float]:
    if ckpt_path.exists():
        ckpt = load_checkpoint(ckpt_path)
        return ckpt.net, float(ckpt.meta["extra"]["valid_error"])
    net = build_network(size, bundle.train.features.shape[1] if size.family == "fcdnn" else 0,
                        bundle.train.num_classes, seed,
                        input_shape=bundle.train.features.shape[1:])
    net, history = train(net, bundle.train, bundle.valid, cfg.train_cfg)
    valid_error = min(history) if history else evaluate(net, bundle.valid)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt_path, net, extra_meta={"valid_error": valid_error, "seed": seed})
    return net, valid_error


def _run_group(cfg: SweepConfig, size: SizeConfig, seed: int, bundle: DataBundle,
               writer: _ResultsWriter, done: set[str], out_path: Path) -> None:
    plan = []
    if "float" in cfg.methods:
        plan.append((FLOAT_BITS_LABEL, "float"))
    for bits in cfg.bit_widths:
        for method in ("direct", "retrain"):
            if method in cfg.methods:
                plan.append((str(bits), method))
    todo = [(b, m) for b, m in plan if cell_hash(cfg, size, b, m, seed) not in done]
    if not todo:
        return

    float_net = None
    float_valid = None

    def ensure_float():
        nonlocal float_net, float_valid
        if float_net is None:
            float_net, float_valid = _train_or_load_float(
                cfg, size, seed, bundle, _float_checkpoint_path(out_path, cfg, size, seed))
        return float_net, float_valid

    for bits, method in todo:
        start = time.monotonic()
        net, _ = ensure_float()
        if method == "float":
            valid_error = float_valid
            qnet = net
        elif method == "direct":
            qnet, _spec = direct_quantize(net, int(bits))
            valid_error = evaluate(qnet, bundle.valid)
        else:
            qnet, _spec, history = retrain(net, int(bits), bundle.train, bundle.valid,
                                           cfg.train_cfg)
            valid_error = min(history) if history else evaluate(qnet, bundle.valid)
        test_error = evaluate(qnet, bundle.test)
        record = RunRecord(cell_hash(cfg, size, bits, method, seed), cfg.family, size.label,
                           _size_param_count(size, bundle), bits, method, seed,
                           valid_error, test_error, time.monotonic() - start)
        writer.append(record)


def _size_param_count(size: SizeConfig, bundle: DataBundle) -> int:
    from .nn import count_parameters
    net = build_network(size, bundle.train.features.shape[1] if size.family == "fcdnn" else 0,
                        bundle.train.num_classes, 0, input_shape=bundle.train.features.shape[1:])
    return count_parameters(net)


def run_sweep(cfg: SweepConfig, out_path, data_dir=None, max_workers: int = 1) -> list[RunRecord]:
    """Run every missing cell of the grid, appending records crash-safely, and
    finish by rewriting the results CSV in canonical (config-hash) order."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    bundle = resolve_dataset(cfg.dataset, data_dir)
    existing = read_records(out_path) if out_path.exists() else []
    writer = _ResultsWriter(out_path, existing)
    done = {r.config_hash for r in existing}
    groups = [(size, seed) for size in cfg.sizes for seed in cfg.seeds]
    if max_workers <= 1:
        for size, seed in groups:
            _run_group(cfg, size, seed, bundle, writer, done, out_path)
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_run_group, cfg, size, seed, bundle, writer, done, out_path)
                       for size, seed in groups]
            for fut in futures:
                fut.result()
    write_records(sort_records(writer.records), out_path)
    return read_records(out_path)  # canonical 6-significant-digit precision
