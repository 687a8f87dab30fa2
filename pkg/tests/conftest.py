import numpy as np
import pytest

from propshield import nn
from propshield.data import PropertySpec, encode
from propshield.synth import make_synthetic_bank


@pytest.fixture(scope="session")
def bank_small():
    """Small synthetic dataset shared by data-level tests."""
    return make_synthetic_bank(1200, default_rate=0.05, seed=7)


@pytest.fixture(scope="session")
def bank_small_encoded(bank_small):
    return encode(bank_small)


@pytest.fixture(scope="session")
def default_spec():
    return PropertySpec("default", "yes", ((0.0, 0.05), (0.05, 1.0)))


def fd_gradient(params, X, y, l2=0.0, h=1e-6):
    """Central finite differences of the loss, the gradient oracle."""
    g = np.zeros_like(params.theta)
    for i in range(params.n_params):
        tp = params.theta.copy()
        tp[i] += h
        tm = params.theta.copy()
        tm[i] -= h
        lp = nn.dataset_loss(nn.MlpParams(params.layer_sizes, tp), X, y, l2)
        lm = nn.dataset_loss(nn.MlpParams(params.layer_sizes, tm), X, y, l2)
        g[i] = (lp - lm) / (2 * h)
    return g


def fd_hvp(params, X, y, v, l2=0.0, h=1e-5):
    """Central finite differences of the analytic gradient, the HVP oracle."""
    tp = nn.MlpParams(params.layer_sizes, params.theta + h * v)
    tm = nn.MlpParams(params.layer_sizes, params.theta - h * v)
    return (nn.backward(tp, X, y, l2) - nn.backward(tm, X, y, l2)) / (2 * h)
