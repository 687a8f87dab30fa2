"""The attack-defense arms race and the baseline defenses it is compared to.

Each arms-race round ascends the defender objective

    L_privacy(true class, attack(F_theta)) - lambda * L_task(theta; D)

for a fixed number of gradient steps against the frozen attack, then lets
the simulated adversary refit: weights are re-estimated against the moved
fingerprint and the attack model continues training from where it was.
Rounds stop when the parameter change drops below epsilon or the round
budget T runs out.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .attack import (AttackDataset, InfoMode, WHITE_BOX, attack_loss,
                     canonical_permutation, estimate_weights, extract_info,
                     train_attack)
from .data import PropertySpec, TabularDataset, compute_property
from .errors import ConfigError


@dataclass
class ArmsRaceConfig:
    lambda_: float = 0.3
    max_iters: int = 50
    epsilon: float | None = None   # None resolves to 1e-3 * sqrt(p)
    defense_steps_per_round: int = 20
    attack_epochs_per_round: int = 5
    defense_lr: float = 5e-3
    attack_cfg: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(epochs=30))
    sigma2: float | None = None    # None resolves via the median heuristic
    standardize: bool = True
    lr_schedule: str = "inv-sqrt"  # or "constant"
    l2_coeff: float = 0.0

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.defense_steps_per_round < 1 or self.attack_epochs_per_round < 1:
            raise ConfigError("per-round step counts must be >= 1")
        if self.lr_schedule not in ("constant", "inv-sqrt"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass
class IterRecord:
    iteration: int
    theta_change: float
    loss_privacy: float
    loss_task: float
    loss_attack: float
    wall_time: float


@dataclass
class ArmsRaceTrace:
    records: list = field(default_factory=list)
    terminated_by: str | None = None  # "epsilon" | "max_iters"
    warnings: list = field(default_factory=list)

    @property
    def theta_changes(self):
        return [r.theta_change for r in self.records]


def _privacy_grad_and_loss(target: nn.MlpParams, attack_model: nn.MlpParams,
                           mode: InfoMode, true_class: int):
    """Gradient w.r.t. theta of the frozen attack's cross-entropy on the
    true property class, routed through fingerprint extraction."""
    y = np.asarray([true_class], dtype=np.int64)
    if mode.mode == WHITE_BOX:
        perm = canonical_permutation(target)
        info = target.theta[perm][None, :]
        du = nn.input_gradient(attack_model, info, y)[0]
        g = np.zeros_like(target.theta)
        g[perm] = du  # sort held fixed within the step: route through it
        loss = nn.dataset_loss(attack_model, info, y)
        return g, loss
    probs = nn.forward(target, mode.query_set)
    info = probs.ravel()[None, :]
    du = nn.input_gradient(attack_model, info, y)[0]
    U = du.reshape(probs.shape)
    g = nn.output_vjp(target, mode.query_set, U)
    loss = nn.dataset_loss(attack_model, info, y)
    return g, loss


def defense_step(target: nn.MlpParams, attack_model: nn.MlpParams,
                 X, y, true_class: int, mode: InfoMode, lambda_: float,
                 steps: int, lr: float, l2_coeff: float = 0.0):
    """A block of gradient-ascent updates on the composite objective.

    Returns (params, warning). On a non-finite objective the last finite
    iterate is returned with a warning string instead of raising.
    """
    theta = target.theta.copy()
    params = nn.MlpParams(target.layer_sizes, theta)
    warning = None
    for s in range(steps):
        g_priv, _ = _privacy_grad_and_loss(params, attack_model, mode, true_class)
        g_task = nn.backward(params, X, y, l2_coeff)
        step_vec = lr * (g_priv - lambda_ * g_task)
        if not np.all(np.isfinite(step_vec)):
            warning = f"non-finite defense update at inner step {s}; kept last iterate"
            break
        theta = theta + step_vec
        params = nn.MlpParams(target.layer_sizes, theta)
    return params, warning


def attack_refine(attack_model: nn.MlpParams, ds: AttackDataset, target_info,
                  sigma2: float, cfg: nn.TrainConfig, standardize: bool = True):
    """Re-estimate weights against the current target fingerprint, then
    continue training the attack from its current parameters."""
    weighted = estimate_weights(ds, target_info, sigma2, standardize)
    refined = train_attack(weighted, (), cfg, init=attack_model)
    return refined, weighted


def arms_race(target0: nn.MlpParams, pool, provider_data: TabularDataset,
              spec: PropertySpec, mode: InfoMode, cfg: ArmsRaceConfig,
              attack_ds: AttackDataset | None = None, responsive: bool = True):
    """Run the full defense loop; returns (secure params, trace).

    attack_ds can be passed in when the caller already extracted the pool
    fingerprints. With responsive=False the simulated attack never
    reweights (the non-adaptive ablation); it still refits every round.
    """
    from .attack import build_attack_dataset, median_kernel_width

    if not provider_data.is_encoded:
        raise ConfigError("provider data must be encoded")
    X, y = provider_data.features, provider_data.labels
    _, true_class = compute_property(provider_data, spec)
    if attack_ds is None:
        attack_ds = build_attack_dataset(pool, mode)

    info = extract_info(target0, mode)
    sigma2 = cfg.sigma2
    if sigma2 is None:
        sigma2 = median_kernel_width(attack_ds, info, cfg.standardize)
    eps = cfg.epsilon if cfg.epsilon is not None else 1e-3 * np.sqrt(target0.n_params)

    ds0 = (estimate_weights(attack_ds, info, sigma2, cfg.standardize)
           if responsive else attack_ds)
    attack_model = train_attack(ds0, (32, 16, 8), cfg.attack_cfg,
                                n_classes=spec.n_classes)

    trace = ArmsRaceTrace()
    params = target0.copy()
    refine_cfg = nn.TrainConfig(cfg.attack_cfg.learning_rate, cfg.attack_cfg.batch_size,
                                cfg.attack_epochs_per_round, cfg.attack_cfg.seed,
                                cfg.attack_cfg.l2_coeff)
    current_ds = ds0
    for t in range(1, cfg.max_iters + 1):
        started = time.perf_counter()
        lr_t = cfg.defense_lr / np.sqrt(t) if cfg.lr_schedule == "inv-sqrt" else cfg.defense_lr
        new_params, warning = defense_step(
            params, attack_model, X, y, true_class, mode,
            cfg.lambda_, cfg.defense_steps_per_round, lr_t, cfg.l2_coeff,
        )
        if warning:
            trace.warnings.append(f"round {t}: {warning}")
        change = float(np.linalg.norm(new_params.theta - params.theta))
        params = new_params

        info = extract_info(params, mode)
        if responsive:
            attack_model, current_ds = attack_refine(
                attack_model, attack_ds, info, sigma2, refine_cfg, cfg.standardize)
        else:
            attack_model = train_attack(current_ds, (), refine_cfg, init=attack_model)

        _, loss_priv = _privacy_grad_and_loss(params, attack_model, mode, true_class)
        loss_task = nn.dataset_loss(params, X, y, cfg.l2_coeff)
        trace.records.append(IterRecord(
            t, change, loss_priv, loss_task,
            attack_loss(attack_model, current_ds),
            time.perf_counter() - started,
        ))
        if change < eps:
            trace.terminated_by = "epsilon"
            break
    if trace.terminated_by is None:
        trace.terminated_by = "max_iters"
    return params, trace


def baseline_noisy_label(dataset: TabularDataset, flip_frac: float, seed: int) -> TabularDataset:
    """Flip exactly round(flip_frac * n) task labels to a different class."""
    if not (0.0 < flip_frac < 1.0):
        raise ConfigError("flip_frac must be in (0, 1)")
    schema = dataset.schema
    n_classes = schema.n_label_classes
    if n_classes < 2:
        raise ConfigError("cannot flip labels with a single label class")
    rng = np.random.default_rng(seed)
    n_flip = int(round(flip_frac * dataset.n_rows))
    rows = rng.choice(dataset.n_rows, size=n_flip, replace=False)
    cols = dataset.copy_columns()
    lab = cols[schema.label_column]
    lab[rows] = (lab[rows] + rng.integers(1, n_classes, size=n_flip)) % n_classes
    labels = dataset.labels.copy() if dataset.is_encoded else None
    if labels is not None:
        labels[rows] = lab[rows]
    return TabularDataset(schema, cols, dataset.features, labels, dataset.encode_stats)


def clip_gradient(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def baseline_dp_sgd(params: nn.MlpParams, X, y, epsilon_privacy: float,
                    clip_norm: float, cfg: nn.TrainConfig):
    """SGD with per-batch gradient clipping and Laplace noise.

    Noise scale is clip_norm / (epsilon_privacy * batch rows), the Laplace
    mechanism with the clip as sensitivity. Returns (params, loss history).
    """
    if epsilon_privacy <= 0:
        raise ConfigError("privacy budget must be > 0")
    if clip_norm <= 0:
        raise ConfigError("clip_norm must be > 0")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    theta = params.theta.copy()
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(X.shape[0])
        total, batches = 0.0, 0
        for s in range(0, X.shape[0], cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            cur = nn.MlpParams(params.layer_sizes, theta)
            g = nn.backward(cur, X[idx], y[idx], cfg.l2_coeff)
            total += nn.dataset_loss(cur, X[idx], y[idx], cfg.l2_coeff)
            g = clip_gradient(g, clip_norm)
            scale = clip_norm / (epsilon_privacy * idx.size)
            g = g + rng.laplace(0.0, scale, size=g.shape)
            theta = theta - cfg.learning_rate * g
            batches += 1
        history.append(total / batches)
    return nn.MlpParams(params.layer_sizes, theta), history


def baseline_resample(dataset: TabularDataset, drop_frac: float,
                      spec: PropertySpec, seed: int) -> TabularDataset:
    """Under-sample positive-property rows so the property value drops."""
    if not (0.0 < drop_frac < 1.0):
        raise ConfigError("drop_frac must be in (0, 1)")
    col = dataset.schema.column(spec.column)
    positive = col.categories.index(spec.positive_category)
    pos_rows = np.flatnonzero(dataset.column(spec.column) == positive)
    if pos_rows.size == 0:
        raise ConfigError("no positive-property rows to drop")
    n_drop = int(round(drop_frac * pos_rows.size))
    rng = np.random.default_rng(seed)
    drop = rng.choice(pos_rows, size=n_drop, replace=False)
    keep = np.setdiff1d(np.arange(dataset.n_rows), drop)
    return dataset.subset(keep)


def baseline_adversarial_defense(target0: nn.MlpParams, pool,
                                 provider_data: TabularDataset, spec: PropertySpec,
                                 mode: InfoMode, gamma: float, cfg: ArmsRaceConfig):
    """One-shot model-based defense: a static unweighted attack is trained
    once, then the target is optimized against it without any arms race."""
    from .attack import build_attack_dataset

    if not provider_data.is_encoded:
        raise ConfigError("provider data must be encoded")
    ds = build_attack_dataset(pool, mode)
    attack_model = train_attack(ds, (32, 16, 8), cfg.attack_cfg,
                                n_classes=spec.n_classes)
    _, true_class = compute_property(provider_data, spec)
    params = target0.copy()
    for t in range(1, cfg.max_iters + 1):
        lr_t = cfg.defense_lr / np.sqrt(t) if cfg.lr_schedule == "inv-sqrt" else cfg.defense_lr
        params, warning = defense_step(
            params, attack_model, provider_data.features, provider_data.labels,
            true_class, mode, gamma, cfg.defense_steps_per_round, lr_t, cfg.l2_coeff,
        )
        if warning:
            break
    return params
