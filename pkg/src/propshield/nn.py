"""Minimal deterministic feed-forward network engine.

Models are softmax classifiers with ReLU hidden layers, stored as a flat
float64 parameter vector (per layer: weight matrix row-major, then bias).
Training is plain mini-batch SGD with a fixed learning rate; everything is
reproducible bit-for-bit for a fixed seed on a fixed platform and backend.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError


@dataclass
class MlpParams:
    """Flat parameter vector plus the layer widths that give it shape."""

    layer_sizes: tuple
    theta: np.ndarray

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ConfigError("need at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"layer widths must be >= 1, got {self.layer_sizes}")
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1 or self.theta.shape[0] != param_count(self.layer_sizes):
            raise ShapeError(
                f"parameter vector has length {self.theta.shape}, "
                f"expected {param_count(self.layer_sizes)} for sizes {self.layer_sizes}"
            )

    @property
    def sizes(self):
        return np.asarray(self.layer_sizes, dtype=np.int64)

    @property
    def n_params(self):
        return self.theta.shape[0]

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    def weights(self, l):
        """Weight matrix of layer l as a view, shape (sizes[l+1], sizes[l])."""
        offs, _ = kernels.layer_offsets(self.sizes)
        n_out, n_in = self.layer_sizes[l + 1], self.layer_sizes[l]
        return self.theta[offs[l, 0]:offs[l, 0] + n_out * n_in].reshape(n_out, n_in)

    def biases(self, l):
        offs, _ = kernels.layer_offsets(self.sizes)
        n_out = self.layer_sizes[l + 1]
        return self.theta[offs[l, 1]:offs[l, 1] + n_out]

    def copy(self):
        return MlpParams(self.layer_sizes, self.theta.copy())


def param_count(layer_sizes):
    return sum(
        layer_sizes[l + 1] * layer_sizes[l] + layer_sizes[l + 1]
        for l in range(len(layer_sizes) - 1)
    )


def flatten(params: MlpParams) -> np.ndarray:
    return params.theta.copy()


def unflatten(layer_sizes, vec) -> MlpParams:
    return MlpParams(tuple(layer_sizes), np.array(vec, dtype=np.float64))


def mlp_init(layer_sizes, seed: int) -> MlpParams:
    """Fan-in scaled uniform weights, zero biases; deterministic per seed."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ConfigError("need at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ConfigError(f"layer widths must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    parts = []
    for l in range(len(sizes) - 1):
        bound = 1.0 / np.sqrt(sizes[l])
        parts.append(rng.uniform(-bound, bound, size=sizes[l + 1] * sizes[l]))
        parts.append(np.zeros(sizes[l + 1]))
    return MlpParams(sizes, np.concatenate(parts))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    l2_coeff: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.l2_coeff < 0:
            raise ConfigError("l2_coeff must be >= 0")


def _check_batch(params: MlpParams, X, y=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise ShapeError(
            f"input width {X.shape[-1] if X.ndim == 2 else X.shape} does not "
            f"match model input width {params.n_inputs}"
        )
    if y is None:
        return X, None
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ShapeError("labels must be one class index per input row")
    if y.size and (y.min() < 0 or y.max() >= params.n_classes):
        raise ShapeError(
            f"label out of range: classes are 0..{params.n_classes - 1}"
        )
    return X, y


def forward(params: MlpParams, X) -> np.ndarray:
    """Class probabilities, one row per input row."""
    X, _ = _check_batch(params, X)
    return kernels.forward(params.theta, params.sizes, X)


def loss_xent(probs, labels) -> float:
    """Mean negative log-probability of the true class, clamped away from log(0)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ShapeError("label index out of range")
    p_true = np.clip(probs[np.arange(len(labels)), labels], kernels.LOG_CLAMP, 1.0)
    return float(np.mean(-np.log(p_true)))


def _ones_weights(n, sample_weights):
    if sample_weights is None:
        return np.ones(n, dtype=np.float64)
    w = np.ascontiguousarray(sample_weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError("sample_weights must have one entry per row")
    return w


def backward(params: MlpParams, X, y, l2_coeff: float = 0.0, sample_weights=None):
    """Flat gradient of (weighted) mean cross-entropy + (l2/2)|theta|^2."""
    X, y = _check_batch(params, X, y)
    w = _ones_weights(X.shape[0], sample_weights)
    grad, _ = kernels.grad_loss(params.theta, params.sizes, X, y, w, float(l2_coeff))
    return grad


def dataset_loss(params: MlpParams, X, y, l2_coeff: float = 0.0, sample_weights=None) -> float:
    X, y = _check_batch(params, X, y)
    w = _ones_weights(X.shape[0], sample_weights)
    _, loss = kernels.grad_loss(params.theta, params.sizes, X, y, w, float(l2_coeff))
    return loss


def input_gradient(params: MlpParams, X, y, sample_weights=None) -> np.ndarray:
    """Gradient of (weighted) mean cross-entropy w.r.t. the input rows."""
    X, y = _check_batch(params, X, y)
    w = _ones_weights(X.shape[0], sample_weights)
    return kernels.grad_inputs(params.theta, params.sizes, X, y, w)


def output_vjp(params: MlpParams, X, U) -> np.ndarray:
    """Gradient w.r.t. theta of sum(U * forward(params, X))."""
    X, _ = _check_batch(params, X)
    U = np.ascontiguousarray(U, dtype=np.float64)
    if U.shape != (X.shape[0], params.n_classes):
        raise ShapeError("cotangent must be (rows, classes)")
    return kernels.vjp_probs(params.theta, params.sizes, X, U)


def accuracy(params: MlpParams, X, y) -> float:
    X, y = _check_batch(params, X, y)
    pred = np.argmax(kernels.forward(params.theta, params.sizes, X), axis=1)
    return float(np.mean(pred == y))


def sgd_train(params: MlpParams, X, y, cfg: TrainConfig, sample_weights=None):
    """Mini-batch SGD from the given initial parameters.

    Returns (trained params, per-epoch mean batch loss). The shuffle order
    is drawn from cfg.seed, so two runs with the same seed are identical.
    """
    X, y = _check_batch(params, X, y)
    if X.shape[0] == 0:
        raise ConfigError("cannot train on an empty dataset")
    w = _ones_weights(X.shape[0], sample_weights)
    theta = params.theta.copy()
    sizes = params.sizes
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(X.shape[0]).astype(np.int64)
        loss = kernels.sgd_epoch(
            theta, sizes, X, y, w, order,
            float(cfg.learning_rate), int(cfg.batch_size), float(cfg.l2_coeff),
        )
        history.append(float(loss))
    return MlpParams(params.layer_sizes, theta), history
