"""Model persistence.

Binary format (little-endian): magic b"PSMF", uint32 version, uint32 layer
count, int64 layer sizes, float64 flat parameter vector. A JSON export with
nested weight/bias lists exists for eyeballing models.
"""

import json
import struct

import numpy as np

from .errors import IngestionError
from .nn import MlpParams, param_count

MAGIC = b"PSMF"
VERSION = 1


def save_model(params: MlpParams, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params.layer_sizes)))
        fh.write(np.asarray(params.layer_sizes, dtype="<i8").tobytes())
        fh.write(params.theta.astype("<f8").tobytes())


def load_model(path) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise IngestionError(f"{path}: not a model file (bad magic)")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise IngestionError(f"{path}: unsupported model format version {version}")
    off = 12
    sizes = np.frombuffer(blob, dtype="<i8", count=n_layers, offset=off)
    off += 8 * n_layers
    expected = param_count(tuple(int(s) for s in sizes))
    theta = np.frombuffer(blob, dtype="<f8", count=expected, offset=off)
    if len(blob) != off + 8 * expected:
        raise IngestionError(f"{path}: truncated or oversized parameter block")
    return MlpParams(tuple(int(s) for s in sizes), theta.copy())


def export_model_text(params: MlpParams, path):
    """Human-readable JSON dump of the same model."""
    doc = {
        "format_version": VERSION,
        "layer_sizes": list(params.layer_sizes),
        "weights": [params.weights(l).tolist() for l in range(len(params.layer_sizes) - 1)],
        "biases": [params.biases(l).tolist() for l in range(len(params.layer_sizes) - 1)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model_text(path) -> MlpParams:
    with open(path) as fh:
        doc = json.load(fh)
    sizes = tuple(int(s) for s in doc["layer_sizes"])
    parts = []
    for W, b in zip(doc["weights"], doc["biases"]):
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64))
    return MlpParams(sizes, np.concatenate(parts))
