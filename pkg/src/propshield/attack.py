"""Property-inference attack machinery.

Model information is the adversary-visible fingerprint of a model: in the
white-box setting the flat parameter vector after hidden neurons are sorted
into a canonical order (so the fingerprint is invariant to neuron
permutation), in the black-box setting the concatenated class-probability
outputs on a fixed query set. An attack model maps fingerprints to the
property class of the training data behind them. The responsive variant
reweights its shadow training samples by a Gaussian-kernel density ratio
toward the current target fingerprint:

    r_i = N * K_sigma(F_i, F_target) / sum_j K_sigma(F_j, F_target)
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, ShapeError
from .kernels import layer_offsets

WHITE_BOX = "white-box"
BLACK_BOX = "black-box"


@dataclass
class InfoMode:
    mode: str
    query_set: np.ndarray | None = None  # encoded feature rows, black-box only

    def __post_init__(self):
        if self.mode not in (WHITE_BOX, BLACK_BOX):
            raise ConfigError(f"unknown info mode {self.mode!r}")
        if self.mode == BLACK_BOX:
            if self.query_set is None or len(self.query_set) == 0:
                raise ConfigError("black-box mode needs a non-empty query set")
            self.query_set = np.ascontiguousarray(self.query_set, dtype=np.float64)


@dataclass
class ModelInfo:
    vector: np.ndarray
    mode: str


def canonical_permutation(params: nn.MlpParams) -> np.ndarray:
    """Flat index permutation that sorts each hidden layer's neurons.

    Neurons are ordered by descending sum of incoming weights; incoming
    rows, biases and outgoing columns move together, so functionally
    equivalent networks that differ by hidden-neuron permutation map to the
    same canonical vector. Extracting is theta[perm].
    """
    sizes = params.sizes
    offs, p = layer_offsets(sizes)
    idx = np.arange(p, dtype=np.int64)

    def w_block(l):
        n_out, n_in = int(sizes[l + 1]), int(sizes[l])
        return idx[offs[l, 0]:offs[l, 0] + n_out * n_in].reshape(n_out, n_in)

    def b_block(l):
        n_out = int(sizes[l + 1])
        return idx[offs[l, 1]:offs[l, 1] + n_out]

    blocks = [[w_block(l), b_block(l)] for l in range(len(sizes) - 1)]
    for h in range(1, len(sizes) - 1):  # hidden layers only
        incoming = params.weights(h - 1)
        order = np.argsort(-incoming.sum(axis=1), kind="stable")
        blocks[h - 1][0] = blocks[h - 1][0][order]
        blocks[h - 1][1] = blocks[h - 1][1][order]
        blocks[h][0] = blocks[h][0][:, order]
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in blocks])


def extract_info_whitebox(params: nn.MlpParams) -> ModelInfo:
    """Canonicalized flat parameter vector."""
    return ModelInfo(params.theta[canonical_permutation(params)], WHITE_BOX)


def extract_info_blackbox(params: nn.MlpParams, query_set) -> ModelInfo:
    """Concatenated class probabilities on the query rows, in query order."""
    probs = nn.forward(params, query_set)
    return ModelInfo(probs.ravel().copy(), BLACK_BOX)


def extract_info(params: nn.MlpParams, mode: InfoMode) -> ModelInfo:
    if mode.mode == WHITE_BOX:
        return extract_info_whitebox(params)
    return extract_info_blackbox(params, mode.query_set)


@dataclass
class AttackDataset:
    infos: np.ndarray    # (N, F) fingerprint matrix, one row per shadow
    classes: np.ndarray  # (N,) property classes
    mode: str
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.infos = np.ascontiguousarray(self.infos, dtype=np.float64)
        self.classes = np.ascontiguousarray(self.classes, dtype=np.int64)
        if self.infos.shape[0] != self.classes.shape[0]:
            raise ShapeError("one property class per fingerprint row required")
        if self.weights is not None:
            self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.infos.shape[0],):
                raise ShapeError("one weight per sample required")

    @property
    def n(self):
        return self.infos.shape[0]


def build_attack_dataset(pool, mode: InfoMode) -> AttackDataset:
    """One (fingerprint, property class) sample per pool entry, pool order."""
    if len(pool.entries) == 0:
        raise ConfigError("empty shadow pool")
    infos, classes = [], []
    for i, entry in enumerate(pool.entries):
        try:
            infos.append(extract_info(entry.params, mode).vector)
        except Exception as exc:
            raise type(exc)(f"pool entry {i}: {exc}") from exc
        classes.append(entry.property_class)
    return AttackDataset(np.vstack(infos), np.asarray(classes), mode.mode)


def _standardized(ds: AttackDataset, target: np.ndarray):
    mu = ds.infos.mean(axis=0)
    sd = ds.infos.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (ds.infos - mu) / sd, (target - mu) / sd


def squared_distances(ds: AttackDataset, target_info: ModelInfo, standardize: bool = True):
    """Per-sample squared distance between fingerprints and the target's."""
    t = np.asarray(target_info.vector, dtype=np.float64)
    if t.shape != (ds.infos.shape[1],):
        raise ShapeError("target fingerprint length differs from dataset")
    if standardize:
        X, t = _standardized(ds, t)
    else:
        X = ds.infos
    d = X - t
    return np.einsum("ij,ij->i", d, d)


def median_kernel_width(ds: AttackDataset, target_info: ModelInfo,
                        standardize: bool = True) -> float:
    """Median-distance heuristic for the kernel width sigma^2."""
    d2 = squared_distances(ds, target_info, standardize)
    med = float(np.median(d2))
    return max(med / 2.0, 1e-12)


def estimate_weights(ds: AttackDataset, target_info: ModelInfo, sigma2: float,
                     standardize: bool = True) -> AttackDataset:
    """Gaussian-kernel density-ratio weights toward the target fingerprint.

    Computed in log space (log-kernel minus log-sum-exp), so uniformly tiny
    kernels renormalize instead of underflowing to 0/0. The weights always
    average to 1.
    """
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be > 0")
    d2 = squared_distances(ds, target_info, standardize)
    logk = -d2 / (2.0 * sigma2)
    if not np.all(np.isfinite(logk)):
        raise NumericError(
            "kernel exponents are not finite; increase sigma2 or check fingerprints"
        )
    logk -= logk.max()
    k = np.exp(logk)
    w = ds.n * k / k.sum()
    return AttackDataset(ds.infos, ds.classes, ds.mode, weights=w)


def train_attack(ds: AttackDataset, hidden, cfg: nn.TrainConfig,
                 n_classes: int | None = None,
                 init: nn.MlpParams | None = None) -> nn.MlpParams:
    """Fit the attack model by (weighted) cross-entropy over the samples.

    With weights set this is the responsive objective; with weights unset
    (or all ones) it reduces bit-for-bit to the plain empirical loss. Pass
    init to warm-start from an existing attack model.

    Fingerprint coordinates are z-scored for training, then the affine
    scaler is folded into the first layer, so the returned model consumes
    raw fingerprints.
    """
    present = np.unique(ds.classes)
    if present.size < 2:
        raise ConfigError("attack dataset has a single property class")
    if n_classes is None:
        n_classes = int(present.max()) + 1
    if init is not None:
        # warm start: the scaler is already folded into the given model
        trained, _ = nn.sgd_train(init, ds.infos, ds.classes, cfg,
                                  sample_weights=ds.weights)
        return trained
    mu = ds.infos.mean(axis=0)
    sd = ds.infos.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Z = (ds.infos - mu) / sd
    layer_sizes = (ds.infos.shape[1], *tuple(int(h) for h in hidden), int(n_classes))
    init = nn.mlp_init(layer_sizes, cfg.seed)
    trained, _ = nn.sgd_train(init, Z, ds.classes, cfg, sample_weights=ds.weights)
    W0 = trained.weights(0)
    b0 = trained.biases(0)
    b0 -= (W0 * (mu / sd)).sum(axis=1)
    W0 /= sd
    return trained


def infer_property(attack: nn.MlpParams, target_info: ModelInfo):
    """Predicted property class and the class probabilities behind it.

    Ties break toward the lowest class index.
    """
    probs = nn.forward(attack, target_info.vector[None, :])[0]
    return int(np.argmax(probs)), probs


def attack_loss(attack: nn.MlpParams, ds: AttackDataset) -> float:
    """Current (weighted) training loss of the attack on its dataset."""
    return nn.dataset_loss(attack, ds.infos, ds.classes, sample_weights=ds.weights)


def query_set_digest(query_set) -> str:
    return hashlib.sha256(
        np.ascontiguousarray(query_set, dtype=np.float64).tobytes()
    ).hexdigest()


def save_attack_dataset(ds: AttackDataset, path, sigma2=None, query_set=None):
    """Binary matrix bundle plus a small manifest next to it."""
    np.savez(path, infos=ds.infos, classes=ds.classes,
             weights=ds.weights if ds.weights is not None else np.zeros(0))
    manifest = {
        "mode": ds.mode,
        "n": int(ds.n),
        "info_dim": int(ds.infos.shape[1]),
        "sigma2": sigma2,
        "query_set_sha256": query_set_digest(query_set) if query_set is not None else None,
    }
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_attack_dataset(path) -> AttackDataset:
    with open(str(path) + ".manifest.json") as fh:
        manifest = json.load(fh)
    bundle = np.load(str(path) if str(path).endswith(".npz") else str(path) + ".npz")
    weights = bundle["weights"]
    return AttackDataset(bundle["infos"], bundle["classes"], manifest["mode"],
                         weights if weights.size else None)


def write_prediction(path, target_id, predicted_class, probabilities, true_class=None):
    """Append one structured prediction record (JSON lines)."""
    rec = {
        "target_id": target_id,
        "predicted_class": int(predicted_class),
        "probabilities": [float(p) for p in probabilities],
        "true_class": None if true_class is None else int(true_class),
    }
    with open(path, "a") as fh:
        fh.write(json.dumps(rec) + "\n")
