"""Versioned model checkpoint files (header string "QBNET1").

Layout: the 7-byte magic b"QBNET1\\n", a big-endian uint32 length, a UTF-8
JSON metadata document, then the raw little-endian array payloads in the
order listed in the metadata.  Float checkpoints store float32 weights and
biases.  Quantized checkpoints store, per layer, the float64 step size and
the integer level indices (int8 when the bit width is <= 8, else int16),
alongside the full-precision master weights so retraining can resume.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .nn import LayerSpec, Network
from .quant import QuantizerSpec, level_indices, levels_for_bits

MAGIC = b"QBNET1\n"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a hash."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def param_hash(net: Network) -> str:
    digest = hashlib.sha256()
    for arr in list(net.weights) + list(net.biases):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()[:16]


def _spec_to_dict(spec: LayerSpec) -> dict:
    return {"kind": spec.kind, "in_dim": spec.in_dim, "out_dim": spec.out_dim,
            "in_channels": spec.in_channels, "out_channels": spec.out_channels}


def _net_meta(net: Network) -> dict:
    return {
        "specs": [_spec_to_dict(s) for s in net.specs],
        "input_shape": list(net.input_shape),
        "n_outputs": net.n_outputs,
        "seed": net.seed,
        "dtype": net.dtype.name,
    }


def _net_from_meta(meta: dict, weights, biases) -> Network:
    specs = [LayerSpec(**d) for d in meta["specs"]]
    return Network(specs, weights, biases, tuple(meta["input_shape"]),
                   meta["n_outputs"], meta["seed"], np.dtype(meta["dtype"]))


@dataclass
class Checkpoint:
    net: Network  # quantized network when qspec is set, else the float network
    qspec: QuantizerSpec | None
    master: Network | None
    meta: dict


def save_checkpoint(path, net: Network, qspec: QuantizerSpec | None = None,
                    master: Network | None = None, extra_meta: dict | None = None) -> None:
    """Write a float checkpoint (qspec None) or a quantized one (qspec set;
    master defaults to the quantized net itself)."""
    arrays: list[tuple[str, np.ndarray]] = []
    meta: dict = {"network": _net_meta(net), "param_hash": param_hash(net)}
    if extra_meta:
        meta["extra"] = extra_meta
    if qspec is None:
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays.append((f"w{i}", w))
            arrays.append((f"b{i}", b))
    else:
        if len(qspec.step_sizes) != len(net.weights):
            raise ValueError("quantizer spec does not match the network's layers")
        master = master if master is not None else net
        idx_dtype = np.int8 if qspec.bits <= 8 else np.int16
        k_max = (levels_for_bits(qspec.bits) - 1) // 2
        meta["quant"] = {"bits": qspec.bits, "step_sizes": list(qspec.step_sizes)}
        meta["master"] = _net_meta(master)
        for i, (w, d) in enumerate(zip(net.weights, qspec.step_sizes)):
            k = level_indices(w, d)
            if np.abs(k).max(initial=0) > k_max:
                raise ValueError("weights are not on the quantizer grid")
            arrays.append((f"k{i}", k.astype(idx_dtype)))
            arrays.append((f"b{i}", net.biases[i]))
        for i, (w, b) in enumerate(zip(master.weights, master.biases)):
            arrays.append((f"mw{i}", w))
            arrays.append((f"mb{i}", b))
    meta["arrays"] = [
        {"name": name, "shape": list(a.shape), "dtype": a.dtype.newbyteorder("<").str}
        for name, a in arrays
    ]
    payload = b"".join(np.ascontiguousarray(a.astype(a.dtype.newbyteorder("<"))).tobytes()
                       for _, a in arrays)
    doc = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(doc).to_bytes(4, "big"))
        f.write(doc)
        f.write(payload)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"missing checkpoint file {path}")
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise DataFormatError(f"{path}: not a QBNET1 checkpoint")
    n = int.from_bytes(blob[len(MAGIC):len(MAGIC) + 4], "big")
    try:
        meta = json.loads(blob[len(MAGIC) + 4:len(MAGIC) + 4 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt metadata ({exc})") from exc
    offset = len(MAGIC) + 4 + n
    arrays: dict[str, np.ndarray] = {}
    for entry in meta["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(blob):
            raise DataFormatError(f"{path}: truncated array payload")
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
        offset += nbytes
    if offset != len(blob):
        raise DataFormatError(f"{path}: trailing bytes after arrays")

    net_meta = meta["network"]
    n_param = len([s for s in net_meta["specs"] if s["kind"] in ("fully_connected", "conv2d")])
    if "quant" not in meta:
        weights = [arrays[f"w{i}"].copy() for i in range(n_param)]
        biases = [arrays[f"b{i}"].copy() for i in range(n_param)]
        return Checkpoint(_net_from_meta(net_meta, weights, biases), None, None, meta)
    bits = meta["quant"]["bits"]
    deltas = meta["quant"]["step_sizes"]
    dtype = np.dtype(net_meta["dtype"])
    weights = [(np.float64(d) * arrays[f"k{i}"].astype(np.float64)).astype(dtype)
               for i, d in enumerate(deltas)]
    biases = [arrays[f"b{i}"].copy() for i in range(n_param)]
    net = _net_from_meta(net_meta, weights, biases)
    m_weights = [arrays[f"mw{i}"].copy() for i in range(n_param)]
    m_biases = [arrays[f"mb{i}"].copy() for i in range(n_param)]
    master = _net_from_meta(meta["master"], m_weights, m_biases)
    return Checkpoint(net, QuantizerSpec(bits, tuple(deltas)), master, meta)
