"""Command-line surface.

One binary, nine subcommands: ingest, split, train-target, build-pool,
attack, defend, evaluate, sweep, report. Pipelines compose through files
(CSV datasets, model files, pool directories, JSON configs/reports), so a
shadow pool built once can back many defend/attack runs.

Flag precedence everywhere: command line > --config file > defaults. Every
run writes a JSON snapshot of its resolved options next to its main output;
re-running from the snapshot reproduces the outputs.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import nn
from .attack import (BLACK_BOX, WHITE_BOX, InfoMode, build_attack_dataset,
                     estimate_weights, extract_info, infer_property,
                     median_kernel_width, train_attack, write_prediction)
from .data import encode, load_csv, load_schema, PropertySpec, split_provider_adversary
from .defense import ArmsRaceConfig, arms_race
from .errors import ConfigError
from .harness import (FORMAT_JSON, FORMAT_TABLE, ExperimentConfig, Report,
                      emit_report, emit_tradeoff_table, parse_report,
                      run_experiment, sweep as run_sweep)
from .hvp import IhvpConfig
from .serialize import load_model, save_model
from .shadows import build_shadow_pool, load_pool, save_pool


def _parse_bool(s):
    if isinstance(s, bool):
        return s
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _parse_ints(s):
    return tuple(int(x) for x in str(s).split(",") if x != "")


def _parse_bins(s):
    # "0,0.05;0.05,1" -> ((0.0, 0.05), (0.05, 1.0))
    if isinstance(s, (list, tuple)):
        return tuple(tuple(float(x) for x in b) for b in s)
    return tuple(tuple(float(x) for x in part.split(",")) for part in str(s).split(";"))


def _add_flags(parser, spec):
    for name, (typ, default, help_) in spec.items():
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, type=typ, default=None,
                            help=f"{help_} (default: {default})")


def _resolve(args, spec):
    """defaults < config file < explicit flags."""
    merged = {name: default for name, (_, default, _h) in spec.items()}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        unknown = set(doc) - set(spec)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, val in doc.items():
            typ = spec[key][0]
            merged[key] = typ(val) if val is not None and typ is not str else val
    for name in spec:
        val = getattr(args, name, None)
        if val is not None:
            merged[name] = val
    return merged


def _snapshot(opts, out_path):
    snap = {k: (list(v) if isinstance(v, tuple) else v) for k, v in opts.items()}
    with open(str(out_path) + ".config.json", "w") as fh:
        json.dump(snap, fh, indent=1)


def _require(opts, *names):
    for n in names:
        if opts.get(n) in (None, ""):
            raise ConfigError(f"missing required option --{n.replace('_', '-')}")


def _load_encoded(opts):
    schema = load_schema(opts["schema"])
    ds = load_csv(opts["data"], schema, opts["delimiter"])
    return encode(ds)


def _prop_spec(opts, schema):
    return PropertySpec(schema.property_column, opts["property_positive"],
                        _parse_bins(opts["property_bins"]))


def _query_mode(opts, encoded):
    if opts["mode"] == WHITE_BOX:
        return InfoMode(WHITE_BOX)
    rng = np.random.default_rng(opts["query_seed"])
    take = min(int(opts["queries"]), encoded.n_rows)
    idx = rng.choice(encoded.n_rows, size=take, replace=False)
    return InfoMode(BLACK_BOX, encoded.features[idx])


# ------------------------------------------------------------- subcommands

INGEST_SPEC = {
    "data": (str, None, "input CSV"),
    "schema": (str, None, "schema JSON"),
    "delimiter": (str, ";", "CSV delimiter"),
    "out": (str, None, "validated CSV copy to write"),
}


def cmd_ingest(opts):
    _require(opts, "data", "schema", "out")
    schema = load_schema(opts["schema"])
    ds = load_csv(opts["data"], schema, opts["delimiter"])
    ds.to_csv(opts["out"], opts["delimiter"])
    _snapshot(opts, opts["out"])
    print(f"ingested {ds.n_rows} rows, {len(schema.columns)} columns -> {opts['out']}")
    return 0


SPLIT_SPEC = {
    "data": (str, None, "input CSV"),
    "schema": (str, None, "schema JSON"),
    "delimiter": (str, ";", "CSV delimiter"),
    "n_provider": (int, None, "rows for the provider split"),
    "seed": (int, 0, "split seed"),
    "out_provider": (str, None, "provider CSV"),
    "out_adversary": (str, None, "adversary CSV"),
}


def cmd_split(opts):
    _require(opts, "data", "schema", "n_provider", "out_provider", "out_adversary")
    schema = load_schema(opts["schema"])
    ds = load_csv(opts["data"], schema, opts["delimiter"])
    provider, adversary = split_provider_adversary(ds, int(opts["n_provider"]), int(opts["seed"]))
    provider.to_csv(opts["out_provider"], opts["delimiter"])
    adversary.to_csv(opts["out_adversary"], opts["delimiter"])
    _snapshot(opts, opts["out_provider"])
    print(f"split {ds.n_rows} rows -> {provider.n_rows} provider / {adversary.n_rows} adversary")
    return 0


TRAIN_SPEC = {
    "data": (str, None, "training CSV"),
    "schema": (str, None, "schema JSON"),
    "delimiter": (str, ";", "CSV delimiter"),
    "hidden": (_parse_ints, (32, 16), "hidden layer widths"),
    "lr": (float, 1e-3, "learning rate"),
    "batch": (int, 32, "batch size"),
    "epochs": (int, 40, "epochs"),
    "seed": (int, 0, "init and shuffle seed"),
    "l2": (float, 0.0, "L2 coefficient"),
    "out": (str, None, "model file to write"),
}


def cmd_train_target(opts):
    _require(opts, "data", "schema", "out")
    train = _load_encoded(opts)
    sizes = (train.features.shape[1], *_parse_ints(opts["hidden"]),
             train.schema.n_label_classes)
    params = nn.mlp_init(sizes, int(opts["seed"]))
    cfg = nn.TrainConfig(float(opts["lr"]), int(opts["batch"]),
                         int(opts["epochs"]), int(opts["seed"]), float(opts["l2"]))
    trained, history = nn.sgd_train(params, train.features, train.labels, cfg)
    save_model(trained, opts["out"])
    _snapshot(opts, opts["out"])
    acc = nn.accuracy(trained, train.features, train.labels)
    print(f"trained {sizes} model: final loss {history[-1]:.4f}, train acc {acc:.3f}")
    return 0


POOL_SPEC = {
    "data": (str, None, "auxiliary CSV the shadows sample from"),
    "schema": (str, None, "schema JSON"),
    "delimiter": (str, ";", "CSV delimiter"),
    "hidden": (_parse_ints, (32, 16), "shadow hidden layer widths"),
    "n": (int, 64, "total pool size N"),
    "k": (int, 16, "trained references K"),
    "subset": (int, 600, "rows per shadow training subset"),
    "delta": (int, 60, "perturbation budget (cells)"),
    "m": (int, 2, "extra attributes for multi perturbations"),
    "assignment": (str, "balanced", "balanced or uniform reference draws"),
    "lr": (float, 1e-2, "shadow learning rate"),
    "batch": (int, 32, "shadow batch size"),
    "epochs": (int, 30, "shadow epochs"),
    "l2": (float, 0.0, "shadow L2 coefficient"),
    "ihvp_damping": (float, 0.01, "iHVP damping"),
    "ihvp_iters": (int, 25, "iHVP max iterations"),
    "ihvp_sample": (int, 128, "iHVP Hessian subsample"),
    "property_positive": (str, "yes", "positive category of the property column"),
    "property_bins": (str, "0,0.05;0.05,1", "property bins"),
    "seed": (int, 0, "pool seed"),
    "out": (str, None, "pool directory to write"),
}


def cmd_build_pool(opts):
    _require(opts, "data", "schema", "out")
    aux = _load_encoded(opts)
    spec = _prop_spec(opts, aux.schema)
    sizes = (aux.features.shape[1], *_parse_ints(opts["hidden"]),
             aux.schema.n_label_classes)
    cfg = nn.TrainConfig(float(opts["lr"]), int(opts["batch"]),
                         int(opts["epochs"]), int(opts["seed"]), float(opts["l2"]))
    ihvp = IhvpConfig(damping=float(opts["ihvp_damping"]),
                      max_iters=int(opts["ihvp_iters"]),
                      sample_count=int(opts["ihvp_sample"]), tolerance=1e-4)
    pool = build_shadow_pool(aux, int(opts["n"]), int(opts["k"]), sizes,
                             int(opts["delta"]), cfg, ihvp, int(opts["seed"]),
                             spec, min(int(opts["subset"]), aux.n_rows),
                             assignment=opts["assignment"], perturb_m=int(opts["m"]))
    save_pool(pool, opts["out"], extra={"delta": int(opts["delta"]), "seed": int(opts["seed"])})
    _snapshot(opts, os.path.join(opts["out"], "pool"))
    print(f"built pool: {pool.n} entries ({pool.k_reference} references) -> {opts['out']}")
    return 0


ATTACK_SPEC = {
    "pool": (str, None, "shadow pool directory"),
    "target": (str, None, "target model file"),
    "mode": (str, WHITE_BOX, "white-box or black-box"),
    "queries": (int, 256, "query set size (black-box)"),
    "query_data": (str, None, "CSV to draw the query set from (black-box)"),
    "schema": (str, None, "schema JSON for --query-data"),
    "delimiter": (str, ";", "CSV delimiter"),
    "query_seed": (int, 0, "query set draw seed"),
    "sigma2": (float, None, "kernel width; omit for the median heuristic"),
    "standardize": (_parse_bool, True, "standardize fingerprints for the kernel"),
    "responsive": (_parse_bool, True, "reweight toward the target fingerprint"),
    "hidden": (_parse_ints, (32, 16, 8), "attack hidden layer widths"),
    "lr": (float, 1e-2, "attack learning rate"),
    "batch": (int, 32, "attack batch size"),
    "epochs": (int, 40, "attack epochs"),
    "seed": (int, 0, "attack training seed"),
    "n_classes": (int, 2, "property classes"),
    "true_class": (int, None, "true property class, recorded if known"),
    "out": (str, None, "prediction record file (JSON lines)"),
}


def cmd_attack(opts):
    _require(opts, "pool", "target", "out")
    pool = load_pool(opts["pool"])
    target = load_model(opts["target"])
    if opts["mode"] == BLACK_BOX:
        _require(opts, "query_data", "schema")
        mode = _query_mode(opts, _load_encoded({**opts, "data": opts["query_data"]}))
    else:
        mode = InfoMode(WHITE_BOX)
    ds = build_attack_dataset(pool, mode)
    info = extract_info(target, mode)
    if opts["responsive"]:
        s2 = opts["sigma2"]
        if s2 is None:
            s2 = median_kernel_width(ds, info, opts["standardize"])
        ds = estimate_weights(ds, info, float(s2), opts["standardize"])
    cfg = nn.TrainConfig(float(opts["lr"]), int(opts["batch"]),
                         int(opts["epochs"]), int(opts["seed"]), 0.0)
    model = train_attack(ds, _parse_ints(opts["hidden"]), cfg,
                         n_classes=int(opts["n_classes"]))
    pred, probs = infer_property(model, info)
    if os.path.exists(opts["out"]):
        os.remove(opts["out"])
    write_prediction(opts["out"], opts["target"], pred, probs, opts["true_class"])
    _snapshot(opts, opts["out"])
    print(f"predicted property class {pred} (probs {np.round(probs, 4).tolist()})")
    return 0


DEFEND_SPEC = {
    "data": (str, None, "provider training CSV"),
    "schema": (str, None, "schema JSON"),
    "delimiter": (str, ";", "CSV delimiter"),
    "target": (str, None, "target model file to harden"),
    "pool": (str, None, "shadow pool directory for the simulated adversary"),
    "mode": (str, WHITE_BOX, "white-box or black-box"),
    "queries": (int, 256, "query set size (black-box)"),
    "query_seed": (int, 0, "query set draw seed"),
    "property_positive": (str, "yes", "positive category of the property column"),
    "property_bins": (str, "0,0.05;0.05,1", "property bins"),
    "lambda_": (float, 0.3, "robustness/utility trade-off"),
    "T": (int, 50, "max arms-race rounds"),
    "epsilon": (float, None, "parameter-change stop threshold"),
    "steps": (int, 20, "defense gradient steps per round"),
    "attack_epochs": (int, 5, "attack refit epochs per round"),
    "defense_lr": (float, 5e-3, "defense step size"),
    "lr_schedule": (str, "inv-sqrt", "constant or inv-sqrt"),
    "sigma2": (float, None, "kernel width; omit for the median heuristic"),
    "standardize": (_parse_bool, True, "standardize fingerprints for the kernel"),
    "attack_lr": (float, 1e-2, "simulated attack learning rate"),
    "attack_batch": (int, 32, "simulated attack batch size"),
    "attack_train_epochs": (int, 40, "initial attack training epochs"),
    "seed": (int, 0, "defense-side seed"),
    "l2": (float, 0.0, "target L2 coefficient"),
    "out": (str, None, "secure model file to write"),
}


def cmd_defend(opts):
    _require(opts, "data", "schema", "target", "pool", "out")
    train = _load_encoded(opts)
    spec = _prop_spec(opts, train.schema)
    target = load_model(opts["target"])
    pool = load_pool(opts["pool"])
    mode = _query_mode(opts, train)
    attack_cfg = nn.TrainConfig(float(opts["attack_lr"]), int(opts["attack_batch"]),
                                int(opts["attack_train_epochs"]), int(opts["seed"]), 0.0)
    cfg = ArmsRaceConfig(
        lambda_=float(opts["lambda_"]), max_iters=int(opts["T"]),
        epsilon=None if opts["epsilon"] is None else float(opts["epsilon"]),
        defense_steps_per_round=int(opts["steps"]),
        attack_epochs_per_round=int(opts["attack_epochs"]),
        defense_lr=float(opts["defense_lr"]), attack_cfg=attack_cfg,
        sigma2=None if opts["sigma2"] is None else float(opts["sigma2"]),
        standardize=opts["standardize"], lr_schedule=opts["lr_schedule"],
        l2_coeff=float(opts["l2"]),
    )
    secure, trace = arms_race(target, pool, train, spec, mode, cfg)
    save_model(secure, opts["out"])
    trace_doc = {
        "terminated_by": trace.terminated_by,
        "warnings": trace.warnings,
        "rounds": [
            {"iteration": r.iteration, "theta_change": r.theta_change,
             "loss_privacy": r.loss_privacy, "loss_task": r.loss_task,
             "loss_attack": r.loss_attack, "wall_time": r.wall_time}
            for r in trace.records
        ],
    }
    with open(opts["out"] + ".trace.json", "w") as fh:
        json.dump(trace_doc, fh, indent=1)
    _snapshot(opts, opts["out"])
    print(f"arms race: {len(trace.records)} rounds, terminated by {trace.terminated_by}")
    return 0


def _experiment_spec():
    import dataclasses as dc
    spec = {}
    coercers = {
        "target_hidden": _parse_ints, "attack_hidden": _parse_ints,
        "property_bins": _parse_bins,
    }
    for f in dc.fields(ExperimentConfig):
        typ = coercers.get(f.name)
        if typ is None:
            if f.type in ("int", int):
                typ = int
            elif f.type in ("float", float, "float | None"):
                typ = float
            elif f.type in ("bool", bool):
                typ = _parse_bool
            else:
                typ = str
        default = f.default if f.default is not dc.MISSING else None
        spec[f.name] = (typ, default, f"experiment field {f.name}")
    return spec


EXPERIMENT_SPEC = _experiment_spec()


def _experiment_config(opts) -> ExperimentConfig:
    doc = {k: v for k, v in opts.items() if k in EXPERIMENT_SPEC}
    doc["property_bins"] = _parse_bins(doc["property_bins"])
    doc["target_hidden"] = _parse_ints(doc["target_hidden"]) if not isinstance(
        doc["target_hidden"], tuple) else doc["target_hidden"]
    doc["attack_hidden"] = _parse_ints(doc["attack_hidden"]) if not isinstance(
        doc["attack_hidden"], tuple) else doc["attack_hidden"]
    return ExperimentConfig.from_dict(doc)


def cmd_evaluate(opts):
    _require(opts, "out")
    cfg = _experiment_config(opts)
    report = run_experiment(cfg)
    emit_report(report, opts["out"],
                FORMAT_TABLE if opts["format"] == "table" else FORMAT_JSON)
    _snapshot(opts, opts["out"])
    agg = report.aggregates
    print(f"method={cfg.method} cases={agg['n_cases']} "
          f"success_rate={agg['success_rate']} "
          f"target_accuracy={agg['mean_target_accuracy']}")
    return 0


def cmd_sweep(opts):
    _require(opts, "out_dir", "param", "values")
    cfg = _experiment_config(opts)
    values = [float(v) for v in str(opts["values"]).split(",")]
    reports = run_sweep(cfg, opts["param"], values)
    os.makedirs(opts["out_dir"], exist_ok=True)
    entries = []
    for v, rep in zip(values, reports):
        path = os.path.join(opts["out_dir"], f"report_{opts['param']}_{v:g}.json")
        emit_report(rep, path, FORMAT_JSON)
        entries.append((cfg.method, opts["param"], v, rep))
        print(f"{opts['param']}={v:g}: success={rep.aggregates['success_rate']} "
              f"accuracy={rep.aggregates['mean_target_accuracy']}")
    emit_tradeoff_table(entries, os.path.join(opts["out_dir"], "tradeoff.csv"))
    _snapshot(opts, os.path.join(opts["out_dir"], "sweep"))
    return 0


REPORT_SPEC = {
    "in_path": (str, None, "report file to read (either format)"),
    "format": (str, "table", "output format: table or json"),
    "out": (str, None, "path to write; omit to print a summary"),
}


def cmd_report(opts):
    _require(opts, "in_path")
    report = parse_report(opts["in_path"])
    if opts["out"]:
        emit_report(report, opts["out"],
                    FORMAT_TABLE if opts["format"] == "table" else FORMAT_JSON)
        _snapshot(opts, opts["out"])
    agg = report.aggregates
    print(f"cases={agg['n_cases']} failures={agg['n_failures']} "
          f"success_rate={agg['success_rate']} "
          f"target_accuracy={agg['mean_target_accuracy']}")
    return 0


COMMANDS = {
    "ingest": (INGEST_SPEC, cmd_ingest, "validate a CSV against a schema"),
    "split": (SPLIT_SPEC, cmd_split, "partition a dataset into provider/adversary"),
    "train-target": (TRAIN_SPEC, cmd_train_target, "train a target model"),
    "build-pool": (POOL_SPEC, cmd_build_pool, "build and persist a shadow pool"),
    "attack": (ATTACK_SPEC, cmd_attack, "infer a model's confidential property"),
    "defend": (DEFEND_SPEC, cmd_defend, "run the arms-race defense on a model"),
    "evaluate": (dict(EXPERIMENT_SPEC,
                      out=(str, None, "report path"),
                      format=(str, "json", "report format: json or table")),
                 cmd_evaluate, "run a full multi-case experiment"),
    "sweep": (dict(EXPERIMENT_SPEC,
                   param=(str, None, "parameter to sweep"),
                   values=(str, None, "comma-separated values"),
                   out_dir=(str, None, "directory for per-value reports")),
              cmd_sweep, "sweep one parameter over a shared-seed experiment"),
    "report": (REPORT_SPEC, cmd_report, "convert or summarize a report file"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="propshield",
        description="Property-inference attacks and arms-race defenses "
                    "for shared tabular models.",
    )
    sub = parser.add_subparsers(dest="command")
    for name, (spec, _fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=str, default=None,
                       help="JSON file of options; explicit flags override it")
        _add_flags(p, spec)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    spec, fn, _help = COMMANDS[args.command]
    try:
        opts = _resolve(args, spec)
        return fn(opts)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
