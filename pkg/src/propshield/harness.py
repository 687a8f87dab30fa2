"""End-to-end experiment orchestration.

One experiment = n_cases independent re-partitions of a master dataset into
a model provider and an adversary. Per case: train the target, apply the
configured defense, let the adversary build its own shadow pool from its
own split and mount the configured attack on the shared model, then record
the prediction, the defended model's held-out task accuracy, and per-phase
wall times. Sweeps rerun the same cases (same seeds, so comparisons are
paired) while varying one parameter.
"""

import concurrent.futures
import csv
import dataclasses
import io
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .attack import (BLACK_BOX, WHITE_BOX, AttackDataset, InfoMode,
                     build_attack_dataset, estimate_weights, extract_info,
                     infer_property, median_kernel_width, train_attack)
from .data import (PropertySpec, Schema, TabularDataset, compute_property,
                   encode, load_csv, load_schema)
from .defense import (ArmsRaceConfig, arms_race, baseline_adversarial_defense,
                      baseline_dp_sgd, baseline_noisy_label, baseline_resample)
from .errors import ConfigError
from .hvp import IhvpConfig
from .shadows import build_shadow_pool
from .synth import make_synthetic_bank

METHODS = ("none", "dshare", "ours-r", "ours-a", "noisy-label", "dp-sgd",
           "resample", "adversarial-defense")

SWEEPABLE = {
    "lambda": "defense_lambda",
    "K": "pool_k",
    "delta": "delta",
    "flip_frac": "flip_frac",
    "epsilon_privacy": "dp_epsilon",
    "drop_frac": "drop_frac",
    "gamma": "gamma",
}


def default_workers():
    return int(os.environ.get("PROPSHIELD_WORKERS", "1"))


@dataclass
class ExperimentConfig:
    # data source: a CSV + schema, or the synthetic generator
    dataset_csv: str | None = None
    schema_json: str | None = None
    csv_delimiter: str = ";"
    synth_rows: int = 6000
    synth_default_rate: float = 0.05
    synth_seed: int = 97

    # confidential property
    property_positive: str = "yes"
    property_bins: tuple = ((0.0, 0.05), (0.05, 1.0))

    # adversary visibility
    info_mode: str = WHITE_BOX
    query_count: int = 256

    # case structure
    n_cases: int = 20
    provider_total: int = 2500
    target_train: int = 1000     # allotment; 80% trains, 20% held out
    attack_sim: int = 1500       # provider rows for the defender's own pool

    # target model
    target_hidden: tuple = (32, 16)
    target_lr: float = 0.01
    target_batch: int = 32
    target_epochs: int = 40
    target_l2: float = 0.0

    # shadow pools (both the defender's and the adversary's)
    pool_n: int = 64
    pool_k: int = 16
    pool_subset: int = 600
    pool_assignment: str = "balanced"
    shadow_epochs: int = 30
    delta: int = 60
    perturb_m: int = 2
    ihvp_method: str = "conjugate-gradient"
    ihvp_damping: float = 0.01
    ihvp_iters: int = 25
    ihvp_tol: float = 1e-4
    ihvp_sample: int = 128

    # attack model
    attack_hidden: tuple = (32, 16, 8)
    attack_lr: float = 0.01
    attack_batch: int = 32
    attack_epochs: int = 40
    sigma2: float | None = None   # None -> median heuristic
    standardize_info: bool = True

    # arms race
    defense_lambda: float = 0.3
    defense_T: int = 50
    defense_epsilon: float | None = None
    defense_steps: int = 20
    defense_attack_epochs: int = 5
    defense_lr: float = 5e-3
    defense_lr_schedule: str = "inv-sqrt"

    # method under test and baseline knobs
    method: str = "none"
    flip_frac: float = 0.2
    dp_epsilon: float = 1.0
    dp_clip: float = 1.0
    drop_frac: float = 0.4
    gamma: float = 0.4
    eval_attack: str = "responsive"  # or "static"

    base_seed: int = 1234
    workers: int = field(default_factory=default_workers)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; pick from {METHODS}")
        if self.info_mode not in (WHITE_BOX, BLACK_BOX):
            raise ConfigError(f"unknown info mode {self.info_mode!r}")
        if self.eval_attack not in ("responsive", "static"):
            raise ConfigError("eval_attack must be 'responsive' or 'static'")
        if self.target_train + self.attack_sim > self.provider_total:
            raise ConfigError("target_train + attack_sim exceed provider_total")
        if self.n_cases < 1:
            raise ConfigError("n_cases must be >= 1")
        self.target_hidden = tuple(int(h) for h in self.target_hidden)
        self.attack_hidden = tuple(int(h) for h in self.attack_hidden)
        self.property_bins = tuple(tuple(float(x) for x in b) for b in self.property_bins)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["target_hidden"] = list(self.target_hidden)
        d["attack_hidden"] = list(self.attack_hidden)
        d["property_bins"] = [list(b) for b in self.property_bins]
        return d

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


@dataclass
class CaseRecord:
    case_id: int
    predicted_class: int | None = None
    true_class: int | None = None
    target_accuracy: float | None = None
    phase_times: dict = field(default_factory=dict)
    defense_terminated_by: str | None = None
    defense_rounds: int = 0
    theta_changes: list = field(default_factory=list)
    failure: str | None = None

    @property
    def correct(self):
        return self.predicted_class == self.true_class


@dataclass
class Report:
    records: list
    aggregates: dict
    config: dict

    @property
    def success_rate(self):
        return self.aggregates["success_rate"]

    @property
    def mean_accuracy(self):
        return self.aggregates["mean_target_accuracy"]


def attack_success_rate(records) -> float:
    """Fraction of (non-failed) cases whose property class was predicted."""
    good = [r for r in records if r.failure is None]
    if not good:
        raise ConfigError("no successful case records")
    return float(np.mean([r.correct for r in good]))


def target_accuracy(params: nn.MlpParams, X, y) -> float:
    """Argmax prediction accuracy on a held-out set."""
    if len(y) == 0:
        raise ConfigError("empty test set")
    return nn.accuracy(params, X, y)


_MASTER_CACHE: dict = {}


def load_master(cfg: ExperimentConfig) -> TabularDataset:
    if cfg.dataset_csv:
        key = ("csv", cfg.dataset_csv, cfg.schema_json, cfg.csv_delimiter)
        if key not in _MASTER_CACHE:
            schema = load_schema(cfg.schema_json)
            _MASTER_CACHE[key] = load_csv(cfg.dataset_csv, schema, cfg.csv_delimiter)
    else:
        key = ("synth", cfg.synth_rows, cfg.synth_default_rate, cfg.synth_seed)
        if key not in _MASTER_CACHE:
            _MASTER_CACHE[key] = make_synthetic_bank(
                cfg.synth_rows, cfg.synth_default_rate, cfg.synth_seed)
    return _MASTER_CACHE[key]


def property_spec(cfg: ExperimentConfig, schema: Schema) -> PropertySpec:
    return PropertySpec(schema.property_column, cfg.property_positive, cfg.property_bins)


def case_seeds(base_seed: int, case_index: int) -> dict:
    names = ("split", "target_init", "target_train", "defender_pool",
             "defender_query", "adversary_pool", "adversary_query",
             "eval_attack", "method")
    state = np.random.SeedSequence([base_seed, case_index]).generate_state(len(names))
    return {n: int(s) for n, s in zip(names, state)}


def case_split_indices(n_rows: int, cfg: ExperimentConfig, case_index: int) -> dict:
    """Disjoint index sets for one case: provider train/test/aux + adversary."""
    if cfg.provider_total >= n_rows:
        raise ConfigError("provider_total must be below the dataset size")
    seeds = case_seeds(cfg.base_seed, case_index)
    perm = np.random.default_rng(seeds["split"]).permutation(n_rows)
    provider = perm[:cfg.provider_total]
    adversary = perm[cfg.provider_total:]
    allot = provider[:cfg.target_train]
    n_train = int(round(0.8 * cfg.target_train))
    return {
        "provider_train": allot[:n_train],
        "provider_test": allot[n_train:],
        "provider_aux": provider[cfg.target_train:cfg.target_train + cfg.attack_sim],
        "adversary": adversary,
    }


def _shadow_cfg(cfg: ExperimentConfig, seed: int) -> nn.TrainConfig:
    return nn.TrainConfig(cfg.target_lr, cfg.target_batch, cfg.shadow_epochs,
                          seed, cfg.target_l2)


def _ihvp_cfg(cfg: ExperimentConfig) -> IhvpConfig:
    return IhvpConfig(cfg.ihvp_method, cfg.ihvp_damping, cfg.ihvp_iters,
                      cfg.ihvp_tol, cfg.ihvp_sample)


def _arms_cfg(cfg: ExperimentConfig, attack_seed: int) -> ArmsRaceConfig:
    attack_cfg = nn.TrainConfig(cfg.attack_lr, cfg.attack_batch,
                                cfg.attack_epochs, attack_seed, 0.0)
    return ArmsRaceConfig(
        lambda_=cfg.defense_lambda, max_iters=cfg.defense_T,
        epsilon=cfg.defense_epsilon,
        defense_steps_per_round=cfg.defense_steps,
        attack_epochs_per_round=cfg.defense_attack_epochs,
        defense_lr=cfg.defense_lr, attack_cfg=attack_cfg,
        sigma2=cfg.sigma2, standardize=cfg.standardize_info,
        lr_schedule=cfg.defense_lr_schedule, l2_coeff=cfg.target_l2,
    )


def _info_mode(cfg: ExperimentConfig, aux_encoded: TabularDataset, seed: int) -> InfoMode:
    if cfg.info_mode == WHITE_BOX:
        return InfoMode(WHITE_BOX)
    rng = np.random.default_rng(seed)
    take = min(cfg.query_count, aux_encoded.n_rows)
    idx = rng.choice(aux_encoded.n_rows, size=take, replace=False)
    return InfoMode(BLACK_BOX, aux_encoded.features[idx])


def _build_pool(cfg: ExperimentConfig, aux_encoded, layer_sizes, spec, seed,
                all_references=False):
    n, k = cfg.pool_n, cfg.pool_k
    if all_references:
        k = n
    subset = min(cfg.pool_subset, aux_encoded.n_rows)
    return build_shadow_pool(
        aux_encoded, n, k, layer_sizes, cfg.delta, _shadow_cfg(cfg, seed),
        _ihvp_cfg(cfg), seed, spec, subset,
        assignment=cfg.pool_assignment, perturb_m=cfg.perturb_m,
    )


def run_case(cfg: ExperimentConfig, case_index: int) -> CaseRecord:
    rec = CaseRecord(case_id=case_index)
    t_start = time.perf_counter()
    try:
        master = load_master(cfg)
        spec = property_spec(cfg, master.schema)
        seeds = case_seeds(cfg.base_seed, case_index)
        parts = case_split_indices(master.n_rows, cfg, case_index)

        train_raw = master.subset(parts["provider_train"])
        train = encode(train_raw)
        _, rec.true_class = compute_property(train, spec)
        layer_sizes = (train.features.shape[1], *cfg.target_hidden, master.schema.n_label_classes)

        t0 = time.perf_counter()
        target0 = nn.mlp_init(layer_sizes, seeds["target_init"])
        target_cfg = nn.TrainConfig(cfg.target_lr, cfg.target_batch,
                                    cfg.target_epochs, seeds["target_train"], cfg.target_l2)
        target, _ = nn.sgd_train(target0, train.features, train.labels, target_cfg)
        rec.phase_times["target_train"] = time.perf_counter() - t0

        secure, eval_train = _apply_method(cfg, rec, master, parts, spec, train,
                                           target0, target, target_cfg, seeds,
                                           layer_sizes)

        test = encode(master.subset(parts["provider_test"]), stats_from=eval_train)
        rec.target_accuracy = target_accuracy(secure, test.features, test.labels)

        t0 = time.perf_counter()
        adv = encode(master.subset(parts["adversary"]))
        adv_mode = _info_mode(cfg, adv, seeds["adversary_query"])
        adv_pool = _build_pool(cfg, adv, layer_sizes, spec, seeds["adversary_pool"])
        rec.phase_times["adversary_pool"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        ds = build_attack_dataset(adv_pool, adv_mode)
        target_info = extract_info(secure, adv_mode)
        attack_cfg = nn.TrainConfig(cfg.attack_lr, cfg.attack_batch,
                                    cfg.attack_epochs, seeds["eval_attack"], 0.0)
        if cfg.eval_attack == "responsive":
            s2 = cfg.sigma2
            if s2 is None:
                s2 = median_kernel_width(ds, target_info, cfg.standardize_info)
            ds = estimate_weights(ds, target_info, s2, cfg.standardize_info)
        attacker = train_attack(ds, cfg.attack_hidden, attack_cfg,
                                n_classes=spec.n_classes)
        rec.predicted_class, _ = infer_property(attacker, target_info)
        rec.phase_times["eval_attack"] = time.perf_counter() - t0
    except Exception as exc:  # recorded, excluded from aggregates
        rec.failure = f"{type(exc).__name__}: {exc}"
    rec.phase_times["total"] = time.perf_counter() - t_start
    return rec


def _apply_method(cfg, rec, master, parts, spec, train, target0, target,
                  target_cfg, seeds, layer_sizes):
    """Produce the shared (defended) model; returns (params, its train set)."""
    method = cfg.method
    if method == "none":
        return target, train

    if method in ("dshare", "ours-r", "ours-a", "adversarial-defense"):
        t0 = time.perf_counter()
        aux = encode(master.subset(parts["provider_aux"]))
        def_mode = _info_mode(cfg, aux, seeds["defender_query"])
        pool = _build_pool(cfg, aux, layer_sizes, spec, seeds["defender_pool"],
                           all_references=(method == "ours-a"))
        rec.phase_times["defense_pool"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        arms = _arms_cfg(cfg, seeds["method"])
        if method == "adversarial-defense":
            secure = baseline_adversarial_defense(target, pool, train, spec,
                                                  def_mode, cfg.gamma, arms)
        else:
            secure, trace = arms_race(target, pool, train, spec, def_mode, arms,
                                      responsive=(method != "ours-r"))
            rec.defense_terminated_by = trace.terminated_by
            rec.defense_rounds = len(trace.records)
            rec.theta_changes = [float(c) for c in trace.theta_changes]
        rec.phase_times["defense_race"] = time.perf_counter() - t0
        return secure, train

    if method == "noisy-label":
        flipped = baseline_noisy_label(train, cfg.flip_frac, seeds["method"])
        model, _ = nn.sgd_train(target0, flipped.features, flipped.labels, target_cfg)
        return model, train

    if method == "dp-sgd":
        model, _ = baseline_dp_sgd(target0, train.features, train.labels,
                                   cfg.dp_epsilon, cfg.dp_clip, target_cfg)
        return model, train

    if method == "resample":
        reduced_raw = baseline_resample(master.subset(parts["provider_train"]),
                                        cfg.drop_frac, spec, seeds["method"])
        reduced = encode(reduced_raw)
        model, _ = nn.sgd_train(target0, reduced.features, reduced.labels, target_cfg)
        return model, reduced

    raise ConfigError(f"unhandled method {method!r}")


def _case_job(cfg_doc, case_index):
    return run_case(ExperimentConfig.from_dict(cfg_doc), case_index)


def run_experiment(cfg: ExperimentConfig) -> Report:
    """All cases of one configuration, aggregated into a Report."""
    if cfg.workers > 1:
        doc = cfg.to_dict()
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_case_job, [doc] * cfg.n_cases, range(cfg.n_cases)))
    else:
        records = [run_case(cfg, i) for i in range(cfg.n_cases)]
    records.sort(key=lambda r: r.case_id)
    return Report(records, compute_aggregates(records), cfg.to_dict())


def compute_aggregates(records) -> dict:
    good = [r for r in records if r.failure is None]
    agg = {
        "n_cases": len(records),
        "n_failures": len(records) - len(good),
        "success_rate": None,
        "mean_target_accuracy": None,
        "mean_total_time": None,
        "mean_defense_time": None,
    }
    if good:
        agg["success_rate"] = float(np.mean([r.correct for r in good]))
        agg["mean_target_accuracy"] = float(np.mean([r.target_accuracy for r in good]))
        agg["mean_total_time"] = float(np.mean([r.phase_times["total"] for r in good]))
        agg["mean_defense_time"] = float(np.mean([
            r.phase_times.get("defense_pool", 0.0) + r.phase_times.get("defense_race", 0.0)
            for r in good]))
    return agg


def sweep(cfg: ExperimentConfig, parameter: str, values) -> list:
    """One report per value; all reports share base seeds (paired cases)."""
    if parameter not in SWEEPABLE:
        raise ConfigError(
            f"unknown sweep parameter {parameter!r}; pick from {sorted(SWEEPABLE)}"
        )
    fld = SWEEPABLE[parameter]
    reports = []
    for v in values:
        doc = cfg.to_dict()
        doc[fld] = type(getattr(cfg, fld))(v) if getattr(cfg, fld) is not None else v
        reports.append(run_experiment(ExperimentConfig.from_dict(doc)))
    return reports


# ---------------------------------------------------------------- reports

FORMAT_JSON = "structured-text"
FORMAT_TABLE = "delimited-table"

_CSV_FIELDS = ("case_id", "predicted_class", "true_class", "target_accuracy",
               "t_target_train", "t_defense_pool", "t_defense_race",
               "t_adversary_pool", "t_eval_attack", "t_total",
               "defense_terminated_by", "defense_rounds", "theta_changes",
               "failure")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def emit_report(report: Report, path, fmt=FORMAT_JSON):
    """Write a report losslessly; parse_report reads either format back."""
    if fmt == FORMAT_JSON:
        doc = {
            "records": [dataclasses.asdict(r) for r in report.records],
            "aggregates": report.aggregates,
            "config": report.config,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
        return
    if fmt != FORMAT_TABLE:
        raise ConfigError(f"unknown report format {fmt!r}")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("row_kind",) + _CSV_FIELDS)
        for r in report.records:
            pt = r.phase_times
            wr.writerow(["case", r.case_id, _fmt(r.predicted_class), _fmt(r.true_class),
                         _fmt(r.target_accuracy),
                         _fmt(pt.get("target_train")), _fmt(pt.get("defense_pool")),
                         _fmt(pt.get("defense_race")), _fmt(pt.get("adversary_pool")),
                         _fmt(pt.get("eval_attack")), _fmt(pt.get("total")),
                         _fmt(r.defense_terminated_by), r.defense_rounds,
                         "|".join(format(c, ".12g") for c in r.theta_changes),
                         _fmt(r.failure)])
        for key, val in report.aggregates.items():
            wr.writerow(["aggregate", key, _fmt(val)])
        wr.writerow(["config", json.dumps(report.config)])


def _record_from_row(row: dict) -> CaseRecord:
    def opt_int(s):
        return None if s == "" else int(s)

    def opt_float(s):
        return None if s == "" else float(s)

    pt = {}
    for name in ("target_train", "defense_pool", "defense_race",
                 "adversary_pool", "eval_attack", "total"):
        v = opt_float(row["t_" + name])
        if v is not None:
            pt[name] = v
    return CaseRecord(
        case_id=int(row["case_id"]),
        predicted_class=opt_int(row["predicted_class"]),
        true_class=opt_int(row["true_class"]),
        target_accuracy=opt_float(row["target_accuracy"]),
        phase_times=pt,
        defense_terminated_by=row["defense_terminated_by"] or None,
        defense_rounds=int(row["defense_rounds"]),
        theta_changes=[float(c) for c in row["theta_changes"].split("|") if c],
        failure=row["failure"] or None,
    )


def parse_report(path) -> Report:
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        records = [CaseRecord(**r) for r in doc["records"]]
        return Report(records, doc["aggregates"], doc["config"])
    records, aggregates, config = [], {}, {}
    rd = csv.reader(io.StringIO(text))
    header = next(rd)[1:]
    for row in rd:
        kind, rest = row[0], row[1:]
        if kind == "case":
            records.append(_record_from_row(dict(zip(header, rest))))
        elif kind == "aggregate":
            key, val = rest[0], rest[1]
            if val == "":
                aggregates[key] = None
            else:
                aggregates[key] = int(val) if key.startswith("n_") else float(val)
        elif kind == "config":
            config = json.loads(rest[0])
    return Report(records, aggregates, config)


def emit_tradeoff_table(entries, path):
    """Plot-ready rows: one (method, parameter value, success, accuracy) each."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "parameter", "value", "success_rate", "target_accuracy"])
        for method, parameter, value, report in entries:
            wr.writerow([method, parameter, _fmt(value),
                         _fmt(report.aggregates["success_rate"]),
                         _fmt(report.aggregates["mean_target_accuracy"])])
