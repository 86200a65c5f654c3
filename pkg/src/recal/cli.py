"""Command-line entry point wiring the library into reproducible runs.

Configuration is a flat set of dotted keys (``train.lr``, ``sampler.p_size``,
...) resolvable from three layers, later layers winning: built-in defaults,
a ``key = value`` config file (``--config``), and per-key CLI flags named
exactly like the keys. The root ``seed`` additionally falls back to the
RECAL_SEED environment variable and is fanned out to every stage.

Every command echoes its fully-resolved configuration (plus tool version)
into the run directory so a run can be reproduced from its artifacts alone.

Exit codes: 0 success, 2 configuration error, 3 data/I-O error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .data import (EmbeddingDataset, SyntheticSpec, generate_synthetic,
                   read_dataset, write_dataset)
from .errors import ConfigError, DataError, NumericError, RecalError
from .head import (ClassifierConfig, init_head, load_head, save_head)
from .kv import read_kv, write_kv
from .losses import LossConfig
from .metrics import evaluate, export_embeddings, metrics_pairs, write_group_table, write_metrics_report
from .sampling import SamplerConfig, build_calibration_set, export_calibration_set
from .training import (TrainConfig, train_cfr, train_erm, sweep,
                       write_curve, write_sweep_table)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in s.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from exc


# key -> (string parser, default source description)
CONFIG_KEYS = {
    "seed": int,
    "data.n_per_group": _parse_int_tuple,
    "data.core_separation": float,
    "data.spurious_separation": float,
    "data.d_in": int,
    "data.d_out": int,
    "data.noise_sigma": float,
    "train.lr": float,
    "train.momentum": float,
    "train.weight_decay": float,
    "train.epochs": int,
    "train.anchor_batch": int,
    "train.cs_batch": int,
    "train.eval_every": int,
    "train.ema_gamma": float,
    "train.use_cs": _parse_bool,
    "sampler.positive_mode": str,
    "sampler.negative_mode": str,
    "sampler.p_size": int,
    "sampler.n_size": int,
    "sampler.nns_candidate_size": int,
    "loss.tau": float,
    "loss.lam": float,
    "classifier.beta": float,
    "classifier.normalize_output": _parse_bool,
}


@dataclass
class ExperimentConfig:
    data: SyntheticSpec
    train: TrainConfig
    seed: int
    raw: dict[str, str]  # resolved key -> value strings, for the echo file


def resolve_config(config_path: str | None, flag_pairs: dict[str, str]) -> ExperimentConfig:
    """defaults < RECAL_SEED < config file < flags; unknown keys error."""
    values: dict[str, str] = {}
    env_seed = os.environ.get("RECAL_SEED")
    if env_seed is not None:
        values["seed"] = env_seed
    if config_path is not None:
        for key, val in read_kv(config_path).items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            values[key] = val
    for key, val in flag_pairs.items():
        if val is not None:
            values[key] = val

    parsed = {}
    for key, val in values.items():
        try:
            parsed[key] = CONFIG_KEYS[key](val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {val!r} ({exc})") from exc

    def pick(prefix: str, cls, **extra):
        kwargs = {k.split(".", 1)[1]: v for k, v in parsed.items()
                  if k.startswith(prefix + ".")}
        return cls(**kwargs, **extra)

    seed = parsed.get("seed", 0)
    data = pick("data", SyntheticSpec, seed=seed)
    train = TrainConfig(
        **{k.split(".", 1)[1]: v for k, v in parsed.items() if k.startswith("train.")},
        sampler=pick("sampler", SamplerConfig, seed=seed),
        loss=pick("loss", LossConfig),
        classifier=pick("classifier", ClassifierConfig),
        seed=seed,
    )
    raw = {key: _render(parsed.get(key, _default_for(key, data, train, seed)))
           for key in CONFIG_KEYS}
    return ExperimentConfig(data, train, seed, raw)


def _default_for(key: str, data: SyntheticSpec, train: TrainConfig, seed: int):
    section, _, name = key.partition(".")
    if key == "seed":
        return seed
    src = {"data": data, "train": train, "sampler": train.sampler,
           "loss": train.loss, "classifier": train.classifier}[section]
    return getattr(src, name)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _echo_config(cfg: ExperimentConfig, out_dir: str) -> None:
    pairs = {"version": __version__, **cfg.raw}
    write_kv(os.path.join(out_dir, "config.resolved"), pairs)


def _require_dir(path: str) -> str:
    if not os.path.isdir(path):
        raise DataError(f"output directory does not exist: {path}")
    return path


def _load_split(path: str, expect_groups: bool = False) -> EmbeddingDataset:
    ds = read_dataset(path)
    if expect_groups and ds.groups is None:
        raise DataError(f"{path} carries no group labels")
    return ds


def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    out = _require_dir(args.out)
    train, val, test = generate_synthetic(cfg.data)
    for name, ds in (("train", train), ("val", val), ("test", test)):
        write_dataset(ds, os.path.join(out, f"{name}.vle"))
    _echo_config(cfg, out)
    print(f"wrote train/val/test datasets to {out}")
    return EXIT_OK


def cmd_erm(cfg: ExperimentConfig, args) -> int:
    out = _require_dir(args.out)
    train = _load_split(args.train)
    val = _load_split(args.val)
    head0 = load_head(args.head) if args.head else \
        init_head(train.d_in, train.d_out, cfg.seed)
    record = train_erm(train, val, head0, cfg.train)
    save_head(record.best_head, os.path.join(out, "erm_head.prj1"))
    write_curve(record, os.path.join(out, "erm_curve.tsv"))
    _echo_config(cfg, out)
    best = record.epochs[record.best_epoch]
    print(f"erm best_epoch = {record.best_epoch}")
    print(f"erm val_wga = {best.val_wga!r}")
    return EXIT_OK


def cmd_calibset(cfg: ExperimentConfig, args) -> int:
    out = _require_dir(args.out)
    train = _load_split(args.train)
    head = load_head(args.head)
    calset = build_calibration_set(train.without_groups(), head, cfg.train.classifier)
    write_kv(os.path.join(out, "calibset.txt"), export_calibration_set(calset))
    _echo_config(cfg, out)
    print(f"calibration anchors = {len(calset.anchor_indices)}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _require_dir(args.out)
    train = _load_split(args.train)
    val = _load_split(args.val)
    erm_head = load_head(args.head)
    record = train_cfr(train, val, erm_head, cfg.train)
    save_head(record.best_head, os.path.join(out, "cfr_head.prj1"))
    write_curve(record, os.path.join(out, "cfr_curve.tsv"))
    _echo_config(cfg, out)
    for note in record.notes:
        print(f"note: {note}", file=sys.stderr)
    best = record.epochs[record.best_epoch]
    print(f"cfr best_epoch = {record.best_epoch}")
    print(f"cfr val_wga = {best.val_wga!r}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    ds = _load_split(args.data, expect_groups=True)
    head = load_head(args.head)
    m = evaluate(head, ds, cfg.train.classifier)
    for key, val in metrics_pairs(m).items():
        print(f"{key} = {val}")
    if args.out:
        out = _require_dir(args.out)
        write_metrics_report(m, os.path.join(out, "metrics.txt"))
        write_group_table(m, os.path.join(out, "groups.tsv"))
        _echo_config(cfg, out)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    out = _require_dir(args.out)
    train = _load_split(args.train)
    val = _load_split(args.val)
    test = _load_split(args.test, expect_groups=True)
    erm_head = load_head(args.head)
    values = [float(v) for v in args.values.split(",") if v != ""]
    rows = sweep(train, val, test, erm_head, cfg.train, args.axis, values)
    write_sweep_table(args.axis, rows, os.path.join(out, "sweep.tsv"))
    _echo_config(cfg, out)
    for v, wga, avg in rows:
        print(f"{args.axis} = {v!r}: wga = {wga!r}, avg = {avg!r}")
    return EXIT_OK


def cmd_export_embeddings(cfg: ExperimentConfig, args) -> int:
    ds = _load_split(args.data)
    head = load_head(args.head)
    export_embeddings(head, ds, args.out, cfg.train.classifier)
    print(f"wrote embeddings for {ds.n_samples} samples to {args.out}")
    return EXIT_OK


def cmd_export_head(cfg: ExperimentConfig, args) -> int:
    head = load_head(args.head)
    save_head(head, args.out)
    print(f"wrote {head.d_out}x{head.d_in} head to {args.out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recal",
        description="Group-robust recalibration of frozen embedding classifiers.")
    parser.add_argument("--version", action="version", version=f"recal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, paths):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key = value config file")
        for flag, required in paths:
            p.add_argument(f"--{flag}", required=required,
                           help=f"{flag} path" + ("" if required else " (optional)"))
        for key in CONFIG_KEYS:
            p.add_argument(f"--{key}", dest=key, metavar="V",
                           help=argparse.SUPPRESS)
        return p

    add("gen-data", cmd_gen_data, "generate synthetic train/val/test splits",
        [("out", True)])
    add("erm", cmd_erm, "train the reference head by cross-entropy",
        [("train", True), ("val", True), ("out", True), ("head", False)])
    add("calibset", cmd_calibset, "export the calibration set of a head",
        [("train", True), ("head", True), ("out", True)])
    add("train", cmd_train, "contrastive feature recalibration from an ERM head",
        [("train", True), ("val", True), ("head", True), ("out", True)])
    p_eval = add("eval", cmd_eval, "group-wise evaluation of a head",
                 [("data", True), ("head", True), ("out", False)])
    p_sweep = add("sweep", cmd_sweep, "one recalibration run per knob value",
                  [("train", True), ("val", True), ("test", True),
                   ("head", True), ("out", True)])
    p_sweep.add_argument("--axis", required=True, choices=("lambda", "p_size", "n_size"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    add("export-embeddings", cmd_export_embeddings, "dump head-space embeddings as TSV",
        [("data", True), ("head", True), ("out", True)])
    add("export-head", cmd_export_head, "re-emit a head file (validates the format)",
        [("head", True), ("out", True)])
    return parser


def _origin_module(exc: BaseException) -> str:
    """Deepest package-local module in the traceback, for diagnostics."""
    origin = "cli"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("recal."):
            origin = mod.removeprefix("recal.")
        tb = tb.tb_next
    return origin


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    flag_pairs = {key: vars(args).get(key) for key in CONFIG_KEYS}
    try:
        cfg = resolve_config(args.config, flag_pairs)
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"config error [{_origin_module(exc)}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error [{_origin_module(exc)}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error [{_origin_module(exc)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
