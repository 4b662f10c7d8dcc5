"""Effective compression ratio analysis.

Per bit width, seed-averaged error-vs-size measurements are made monotone by
a non-increasing isotonic fit (pool adjacent violators) and interpolated
piecewise-linearly in log2(size), matching the geometric spacing of the size
sweeps.  The equivalent size for a target error is the smallest size on the
interpolated curve reaching that error; targets outside the observed error
range clamp to the domain edge and are flagged as extrapolated rather than
extrapolated numerically.  The compression ratio of an n-bit network whose
equivalent size is N1 against a float reference of size N is

    ECR = (32 * P(N)) / (n * P(N1))

with P either the exact parameter-count closed form of the family or the
square-law approximation P(N) = N^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .nn import cnn_param_formula, fcdnn_param_formula
from .sweep import FLOAT_BITS_LABEL, RunRecord

FLOAT_BITS = 32
PARAM_MODELS = ("exact", "square_approx")


def isotonic_decreasing(values, weights=None) -> np.ndarray:
    """Least-squares non-increasing fit by pool-adjacent-violators."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=np.float64)
    blocks = [[values[i], weights[i], 1] for i in range(len(values))]  # mean, weight, count
    out: list[list] = []
    for blk in blocks:
        out.append(blk)
        while len(out) > 1 and out[-2][0] < out[-1][0]:  # rising pair violates non-increasing
            m2, w2, c2 = out.pop()
            m1, w1, c1 = out.pop()
            w = w1 + w2
            out.append([(m1 * w1 + m2 * w2) / w, w, c1 + c2])
    fitted = np.empty_like(values)
    pos = 0
    for mean, _, count in out:
        fitted[pos:pos + count] = mean
        pos += count
    return fitted


@dataclass
class PerformanceCurve:
    """Monotone error-vs-size knots, interpolated linearly in log2(size)."""

    bits: str  # numeric string or "float32"
    sizes: np.ndarray  # ascending, positive
    errors: np.ndarray  # non-increasing after the isotonic fit

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.float64)
        self.errors = np.asarray(self.errors, dtype=np.float64)
        if len(self.sizes) < 2:
            raise ValueError("a performance curve needs at least two sizes")
        if np.any(np.diff(self.sizes) <= 0):
            raise ValueError("sizes must be strictly increasing")
        if np.any(np.diff(self.errors) > 0):
            raise ValueError("errors must be non-increasing (isotonic preprocessing)")

    def error_at(self, size: float) -> float:
        """Interpolated error; clamps to the endpoint values outside the domain."""
        x = np.log2(size)
        return float(np.interp(x, np.log2(self.sizes), self.errors))


def fit_monotone_curve(records: Iterable[RunRecord],
                       value: str = "test_error") -> PerformanceCurve:
    """Seed-average one bits/method slice of records per size, then apply the
    non-increasing isotonic fit.  Sizes come from the size labels (hidden
    width for fcdnn, last feature-map count for cnn)."""
    records = list(records)
    if not records:
        raise ValueError("no records to fit")
    bits_values = {r.bits for r in records}
    if len(bits_values) != 1:
        raise ValueError(f"records mix bit widths {sorted(bits_values)}")
    by_size: dict[float, list[float]] = {}
    for r in records:
        by_size.setdefault(layer_size_of(r), []).append(getattr(r, value))
    if len(by_size) < 2:
        raise ValueError("need at least two distinct sizes")
    sizes = np.array(sorted(by_size), dtype=np.float64)
    means = np.array([np.mean(by_size[s]) for s in sizes])
    return PerformanceCurve(bits_values.pop(), sizes, isotonic_decreasing(means))


def layer_size_of(record: RunRecord) -> float:
    if record.family == "cnn":
        return float(record.size_label.split("-")[-1])
    return float(record.size_label)


def equivalent_size(curve: PerformanceCurve, target_error: float) -> tuple[float, bool]:
    """Smallest size on the interpolated curve whose error is <= target_error.

    Targets below the curve's best error clamp to the largest observed size;
    targets above its worst error clamp to the smallest.  Both are flagged."""
    if not 0.0 < target_error < 1.0:
        raise ValueError("target error must lie in (0, 1)")
    xs = np.log2(curve.sizes)
    es = curve.errors
    if target_error < es[-1]:
        return float(curve.sizes[-1]), True
    if target_error > es[0]:
        return float(curve.sizes[0]), True
    for i in range(len(xs)):
        if es[i] <= target_error:
            if i == 0:
                return float(curve.sizes[0]), False
            # first index at or below target: crossing lies in segment (i-1, i]
            # and es[i-1] > target >= es[i], so the slope is nonzero
            frac = (es[i - 1] - target_error) / (es[i - 1] - es[i])
            return float(2.0 ** (xs[i - 1] + frac * (xs[i] - xs[i - 1]))), False
    raise AssertionError("unreachable: target within [min, max] errors")


def resolve_param_model(param_model: str, family: str) -> Callable[[float], float]:
    if param_model == "square_approx":
        return lambda n: float(n) * float(n)
    if param_model == "exact":
        if family == "fcdnn":
            return fcdnn_param_formula
        if family == "cnn":
            return cnn_param_formula
        raise ValueError(f"unknown family {family!r}")
    raise ValueError(f"param_model must be one of {PARAM_MODELS}")


def compute_ecr(float_size: float, quant_bits: int, equivalent_size: float,
                param_model: str = "square_approx", family: str = "fcdnn",
                float_bits: int = FLOAT_BITS) -> float:
    """(float_bits * P(float_size)) / (quant_bits * P(equivalent_size))."""
    if float_size <= 0 or equivalent_size <= 0:
        raise ValueError("sizes must be positive")
    p = resolve_param_model(param_model, family)
    return (float_bits * p(float_size)) / (quant_bits * p(equivalent_size))


@dataclass(frozen=True)
class EcrEntry:
    bits: int
    equivalent_size: float
    ecr: float
    extrapolated: bool


@dataclass
class ECRReport:
    reference_size: float
    reference_error: float
    entries: list[EcrEntry]
    param_model: str


def build_ecr_report(records: Iterable[RunRecord], reference_sizes: Iterable[float],
                     param_model: str = "square_approx",
                     value: str = "test_error") -> list[ECRReport]:
    """One report per reference size: the float curve sets the target error at
    that size, and every retrain-based bit width contributes its equivalent
    size and compression ratio."""
    records = list(records)
    float_records = [r for r in records if r.method == "float"]
    if not float_records:
        raise ValueError("records contain no float32 curve")
    family = float_records[0].family
    float_curve = fit_monotone_curve(float_records, value)
    quant_bits = sorted({int(r.bits) for r in records if r.method == "retrain"})
    if not quant_bits:
        raise ValueError("records contain no retrain-based quantized curve")
    curves = {
        bits: fit_monotone_curve(
            [r for r in records if r.method == "retrain" and r.bits == str(bits)], value)
        for bits in quant_bits
    }
    reports = []
    for ref in reference_sizes:
        target = float_curve.error_at(ref)
        entries = []
        for bits in quant_bits:
            n1, extrapolated = equivalent_size(curves[bits], target)
            entries.append(EcrEntry(bits, n1,
                                    compute_ecr(ref, bits, n1, param_model, family), extrapolated))
        reports.append(ECRReport(float(ref), target, entries, param_model))
    return reports


# ---------------------------------------------------------------------------
# report and plot-data files
# ---------------------------------------------------------------------------

ECR_CSV_HEADER = "reference_size,reference_error,bits,equivalent_size,ecr,extrapolated"


def write_ecr_report_csv(reports: list[ECRReport], path) -> None:
    with open(path, "w") as f:
        f.write(ECR_CSV_HEADER + "\n")
        for rep in reports:
            for e in rep.entries:
                f.write(f"{rep.reference_size:g},{rep.reference_error:.6g},{e.bits},"
                        f"{e.equivalent_size:.6g},{e.ecr:.6g},{int(e.extrapolated)}\n")


def write_error_curves_tsv(records: Iterable[RunRecord], path,
                           value: str = "test_error") -> None:
    """Tidy per-(bits, method) seed-mean error curves (Fig. 1 / Fig. 2a analogs)."""
    records = list(records)
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.bits, r.method), []).append(r)
    with open(path, "w") as f:
        f.write("family\tsize\tbits\tmethod\terror\n")
        for (bits, method), rs in sorted(groups.items()):
            by_size: dict[float, list[float]] = {}
            for r in rs:
                by_size.setdefault(layer_size_of(r), []).append(getattr(r, value))
            for size in sorted(by_size):
                f.write(f"{rs[0].family}\t{size:g}\t{bits}\t{method}\t"
                        f"{np.mean(by_size[size]):.6g}\n")


def write_ecr_tsv(reports: list[ECRReport], path) -> None:
    """Tidy compression-ratio curves (Fig. 3 analog)."""
    with open(path, "w") as f:
        f.write("reference_size\tbits\tecr\textrapolated\n")
        for rep in reports:
            for e in rep.entries:
                f.write(f"{rep.reference_size:g}\t{e.bits}\t{e.ecr:.6g}\t{int(e.extrapolated)}\n")


def export_plot_data(records: Iterable[RunRecord], reports: list[ECRReport], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = out_dir / "error_curves.tsv"
    ecr_path = out_dir / "ecr_curves.tsv"
    write_error_curves_tsv(records, curves)
    write_ecr_tsv(reports, ecr_path)
    return [curves, ecr_path]
