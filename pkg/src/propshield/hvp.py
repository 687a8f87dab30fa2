"""Hessian-vector products and damped inverse-HVP solvers."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError, ShapeError
from .nn import MlpParams, _check_batch

CG = "conjugate-gradient"
STOCHASTIC = "stochastic-recursive"


@dataclass
class IhvpConfig:
    method: str = CG
    damping: float = 0.01
    max_iters: int = 100
    tolerance: float = 1e-6
    sample_count: int = 256  # |B| rows subsampled for the Hessian estimate
    seed: int = 0

    def __post_init__(self):
        if self.method not in (CG, STOCHASTIC):
            raise ConfigError(f"unknown iHVP method {self.method!r}")
        if self.damping < 0:
            raise ConfigError("damping must be >= 0")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be > 0")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.sample_count < 1:
            raise ConfigError("sample_count must be >= 1")


@dataclass
class IhvpResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float


def hvp(params: MlpParams, X, y, v, l2_coeff: float = 0.0) -> np.ndarray:
    """Exact Hessian-vector product of the empirical loss at params.

    The Hessian is of mean cross-entropy over (X, y) plus (l2/2)|theta|^2,
    computed by a forward-over-reverse sweep (see kernels), not by finite
    differences.
    """
    X, y = _check_batch(params, X, y)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != params.theta.shape:
        raise ShapeError(
            f"direction has length {v.shape}, expected {params.theta.shape}"
        )
    return kernels.hvp(params.theta, params.sizes, X, y, v, float(l2_coeff))


def _subsample(X, y, cfg: IhvpConfig):
    n = X.shape[0]
    if cfg.sample_count >= n:
        return X, y
    idx = np.random.default_rng(cfg.seed).choice(n, size=cfg.sample_count, replace=False)
    idx.sort()
    return X[idx], y[idx]


def inverse_hvp(params: MlpParams, X, y, v, cfg: IhvpConfig, l2_coeff: float = 0.0) -> IhvpResult:
    """Approximately solve (H + damping*I) x = v.

    H is estimated on at most cfg.sample_count rows of (X, y). Converged
    means the residual dropped below tolerance*|v| (conjugate gradient) or
    the recursion stabilised (stochastic-recursive); otherwise the best
    iterate is returned with converged=False.
    """
    X, y = _check_batch(params, X, y)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != params.theta.shape:
        raise ShapeError("right-hand side has wrong length")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return IhvpResult(np.zeros_like(v), True, 0, 0.0)

    Xb, yb = _subsample(X, y, cfg)
    theta, sizes = params.theta, params.sizes

    def apply(u):
        return kernels.hvp(theta, sizes, Xb, yb, u, float(l2_coeff)) + cfg.damping * u

    if cfg.method == CG:
        return _solve_cg(apply, v, vnorm, cfg)
    return _solve_lissa(params, X, y, v, vnorm, cfg, l2_coeff)


def _solve_cg(apply, v, vnorm, cfg: IhvpConfig) -> IhvpResult:
    x = np.zeros_like(v)
    r = v.copy()
    p = r.copy()
    rs = float(r @ r)
    target = cfg.tolerance * vnorm
    for it in range(1, cfg.max_iters + 1):
        Ap = apply(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise NumericError(f"non-finite curvature at iteration {it}")
        if pAp <= 0.0:
            # negative curvature (non-convex model, damping too small):
            # keep the best iterate and flag the solve as non-converged
            return IhvpResult(x, False, it, float(np.sqrt(rs)))
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise NumericError(f"non-finite residual at iteration {it}")
        if np.sqrt(rs_new) <= target:
            return IhvpResult(x, True, it, float(np.sqrt(rs_new)))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return IhvpResult(x, False, cfg.max_iters, float(np.sqrt(rs)))


def _solve_lissa(params, X, y, v, vnorm, cfg: IhvpConfig, l2_coeff) -> IhvpResult:
    """Neumann-series recursion with fresh Hessian mini-batches per step."""
    theta, sizes = params.theta, params.sizes
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)

    # crude spectral bound via power iteration on one fixed subsample
    Xb, yb = _subsample(X, y, cfg)
    u = rng.normal(size=v.shape)
    u /= np.linalg.norm(u)
    lam = 1.0
    for _ in range(12):
        hu = kernels.hvp(theta, sizes, Xb, yb, u, float(l2_coeff)) + cfg.damping * u
        lam = float(np.linalg.norm(hu))
        if lam == 0.0:
            break
        u = hu / lam
    scale = max(lam * 1.5, cfg.damping, 1e-12)

    x = v.copy()
    for it in range(1, cfg.max_iters + 1):
        if cfg.sample_count < n:
            idx = rng.choice(n, size=cfg.sample_count, replace=False)
            Xi, yi = X[idx], y[idx]
        else:
            Xi, yi = X, y
        hx = kernels.hvp(theta, sizes, Xi, yi, x, float(l2_coeff)) + cfg.damping * x
        x_new = v + x - hx / scale
        if not np.all(np.isfinite(x_new)):
            raise NumericError(f"non-finite iterate at iteration {it}")
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if step <= cfg.tolerance * max(1.0, float(np.linalg.norm(x))):
            return IhvpResult(x / scale, True, it, step)
    return IhvpResult(x / scale, False, cfg.max_iters, step)
