"""qbnet: a trade-off laboratory for network size vs weight precision.

Train small fully-connected and convolutional networks at multiple sizes,
quantize their weights to 2^n - 1 symmetric levels (directly or with
retraining on full-precision shadow weights), and derive the effective
compression ratio that identifies the best (size, bit width) pair for a
target accuracy.
"""

__version__ = "0.1.0"

from .data import Dataset, SplitSpec, load_cifar10, load_mnist_idx, split, synth_frames
from .ecr import (PerformanceCurve, build_ecr_report, compute_ecr, equivalent_size,
                  fit_monotone_curve)
from .errors import DataFormatError, DegenerateTensorError, QbnetError
from .nn import (Network, SizeConfig, TrainConfig, build_cnn, build_fcdnn, count_parameters,
                 evaluate, forward, loss_and_gradients, sgd_update, train)
from .quant import QuantizerSpec, direct_quantize, optimize_step_size, quantize_tensor, retrain
from .sweep import RunRecord, SweepConfig, read_records, run_sweep, write_records

__all__ = [
    "Dataset", "SplitSpec", "load_cifar10", "load_mnist_idx", "split", "synth_frames",
    "PerformanceCurve", "build_ecr_report", "compute_ecr", "equivalent_size",
    "fit_monotone_curve",
    "DataFormatError", "DegenerateTensorError", "QbnetError",
    "Network", "SizeConfig", "TrainConfig", "build_cnn", "build_fcdnn", "count_parameters",
    "evaluate", "forward", "loss_and_gradients", "sgd_update", "train",
    "QuantizerSpec", "direct_quantize", "optimize_step_size", "quantize_tensor", "retrain",
    "RunRecord", "SweepConfig", "read_records", "run_sweep", "write_records",
    "__version__",
]
