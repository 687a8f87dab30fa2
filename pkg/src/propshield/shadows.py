"""Shadow model pools.

A pool holds N (model, training data) pairs: K references trained from
scratch on sampled subsets of the auxiliary data, and N-K approximated
entries whose parameters are a reference's parameters plus an influence
delta. The delta for a perturbation Z -> Z' of a reference's training set
is

    delta = -(1/n) * (H + damping*I)^-1 (sum_{z' in Z'} grad l(z')
                                         - sum_{z in Z} grad l(z))

with H the Hessian of the reference's training objective at its final
parameters, applied through the damped iHVP solver rather than ever being
formed densely.
"""

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import PropertySpec, TabularDataset, compute_property, encode, sample_subset
from .errors import ConfigError
from .hvp import IhvpConfig, inverse_hvp
from .perturb import ALL_KINDS, PerturbationKind, perturb
from .serialize import load_model, save_model

REFERENCE = "reference"
APPROXIMATED = "approximated"


@dataclass(frozen=True)
class Provenance:
    kind: str
    source_index: int | None = None
    perturbation: str | None = None
    ihvp_converged: bool = True


@dataclass
class ShadowEntry:
    params: nn.MlpParams
    train_data: TabularDataset | None
    property_class: int
    provenance: Provenance


@dataclass
class ShadowPool:
    entries: list
    k_reference: int

    def __post_init__(self):
        refs = sum(1 for e in self.entries if e.provenance.kind == REFERENCE)
        if refs != self.k_reference:
            raise ConfigError(
                f"pool claims {self.k_reference} references but holds {refs}"
            )
        for e in self.entries:
            if e.provenance.kind == APPROXIMATED:
                if not (0 <= e.provenance.source_index < self.k_reference):
                    raise ConfigError("approximated entry references a bad index")

    def __len__(self):
        return len(self.entries)

    @property
    def n(self):
        return len(self.entries)


def train_reference_shadows(aux: TabularDataset, K: int, subset_size: int,
                            layer_sizes, cfg: nn.TrainConfig, seed: int,
                            spec: PropertySpec):
    """K shadow models trained on independent subsets of the auxiliary data."""
    if subset_size > aux.n_rows:
        raise ConfigError("subset_size exceeds the auxiliary dataset")
    if not aux.is_encoded:
        raise ConfigError("auxiliary dataset must be encoded first")
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(K):
        sub_seed = int(rng.integers(2**31 - 1))
        init_seed = int(rng.integers(2**31 - 1))
        train_seed = int(rng.integers(2**31 - 1))
        subset = sample_subset(aux, subset_size, sub_seed)
        params0 = nn.mlp_init(layer_sizes, init_seed)
        train_cfg = nn.TrainConfig(cfg.learning_rate, cfg.batch_size,
                                   cfg.epochs, train_seed, cfg.l2_coeff)
        try:
            params, _ = nn.sgd_train(params0, subset.features, subset.labels, train_cfg)
        except Exception as exc:
            raise type(exc)(f"reference shadow {k}: {exc}") from exc
        _, prop_class = compute_property(subset, spec)
        entries.append(ShadowEntry(params, subset, prop_class, Provenance(REFERENCE)))
    return entries


def approximate_shadow(ref: ShadowEntry, spec: PropertySpec, kind: PerturbationKind,
                       delta: int, ihvp_cfg: IhvpConfig, seed: int,
                       l2_coeff: float = 0.0, source_index: int = 0) -> ShadowEntry:
    """Perturb a reference's data and shift its parameters by the influence delta."""
    if ref.provenance.kind != REFERENCE:
        raise ConfigError("can only approximate from a reference entry")
    if ref.train_data is None or not ref.train_data.is_encoded:
        raise ConfigError("reference entry is missing encoded training data")

    result = perturb(ref.train_data, kind, delta, seed)
    perturbed = encode(result.perturbed, stats_from=ref.train_data)
    _, prop_class = compute_property(perturbed, spec)

    n = ref.train_data.n_rows
    converged = True
    if result.changed_rows.size == 0:
        new_theta = ref.params.theta.copy()
    else:
        z_new = encode(result.z_perturbed, stats_from=ref.train_data)
        z_old = ref.train_data.subset(result.changed_rows)
        nz = result.changed_rows.size
        g_new = nn.backward(ref.params, z_new.features, z_new.labels) * nz
        g_old = nn.backward(ref.params, z_old.features, z_old.labels) * nz
        cfg = IhvpConfig(ihvp_cfg.method, ihvp_cfg.damping, ihvp_cfg.max_iters,
                         ihvp_cfg.tolerance, ihvp_cfg.sample_count, seed)
        sol = inverse_hvp(ref.params, ref.train_data.features, ref.train_data.labels,
                          g_new - g_old, cfg, l2_coeff=l2_coeff)
        converged = sol.converged
        new_theta = ref.params.theta - sol.x / n

    params = nn.MlpParams(ref.params.layer_sizes, new_theta)
    prov = Provenance(APPROXIMATED, source_index, kind.kind, converged)
    return ShadowEntry(params, perturbed, prop_class, prov)


def build_shadow_pool(aux: TabularDataset, N: int, K: int, layer_sizes,
                      delta: int, train_cfg: nn.TrainConfig, ihvp_cfg: IhvpConfig,
                      seed: int, spec: PropertySpec, subset_size: int,
                      assignment: str = "balanced", perturb_m: int = 2) -> ShadowPool:
    """K trained references plus N-K influence-approximated entries.

    assignment picks how approximated entries map to references: "balanced"
    hands each reference an equal share (round robin), "uniform" draws the
    source reference uniformly at random per entry.
    """
    if N < K or K < 1:
        raise ConfigError(f"need N >= K >= 1, got N={N}, K={K}")
    if assignment not in ("balanced", "uniform"):
        raise ConfigError(f"unknown assignment mode {assignment!r}")
    rng = np.random.default_rng(seed)
    ref_seed = int(rng.integers(2**31 - 1))
    entries = train_reference_shadows(aux, K, subset_size, layer_sizes,
                                      train_cfg, ref_seed, spec)
    for i in range(N - K):
        k = i % K if assignment == "balanced" else int(rng.integers(K))
        kind = PerturbationKind(ALL_KINDS[int(rng.integers(len(ALL_KINDS)))], perturb_m)
        entry_seed = int(rng.integers(2**31 - 1))
        entries.append(
            approximate_shadow(entries[k], spec, kind, delta, ihvp_cfg,
                               entry_seed, l2_coeff=train_cfg.l2_coeff,
                               source_index=k)
        )
    return ShadowPool(entries, K)


def save_pool(pool: ShadowPool, directory, extra: dict | None = None):
    """Serialized models plus a manifest with provenance and property classes."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format_version": 1,
        "n": pool.n,
        "k_reference": pool.k_reference,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "entries": [],
    }
    if extra:
        manifest.update(extra)
    for i, e in enumerate(pool.entries):
        fname = f"entry_{i:05d}.model"
        save_model(e.params, os.path.join(directory, fname))
        manifest["entries"].append({
            "file": fname,
            "property_class": int(e.property_class),
            "provenance": {
                "kind": e.provenance.kind,
                "source_index": e.provenance.source_index,
                "perturbation": e.provenance.perturbation,
                "ihvp_converged": e.provenance.ihvp_converged,
            },
        })
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_pool(directory) -> ShadowPool:
    """Rebuild a pool from disk; training datasets are not persisted."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    entries = []
    for rec in manifest["entries"]:
        prov = Provenance(
            rec["provenance"]["kind"],
            rec["provenance"]["source_index"],
            rec["provenance"]["perturbation"],
            rec["provenance"]["ihvp_converged"],
        )
        params = load_model(os.path.join(directory, rec["file"]))
        entries.append(ShadowEntry(params, None, rec["property_class"], prov))
    return ShadowPool(entries, manifest["k_reference"])
