"""Configuration-driven experiment runner.

Subcommands: train, infer, retrain, sweep, validate-config. Runs are
described by a JSON config validated up front (unknown keys are hard errors,
every violation is reported). Artifacts land in the output directory:
metrics.csv with one row per epoch, summary.json with the final accuracy and
a config echo sufficient to re-run the experiment, and model.cimf. Progress
goes to stderr; files are the machine-readable product.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import multiprocessing
import os
import sys
import time

import numpy as np

from cimsim import data as data_mod
from cimsim import nn, persist
from cimsim.crossbar import CrossbarConfig, CrossbarError
from cimsim.device import (DeviceModelError, DeviceParams, SramAdcParams,
                           load_device_preset)
from cimsim.variation import VariationSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# Config schema: {key: (required, validator)} per section
# ---------------------------------------------------------------------------

def _typed(kind, predicate=None, desc=""):
    def check(v):
        if not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float):
            return f"expected {desc or kind}"
        if predicate and not predicate(v):
            return f"violates constraint: {desc}"
        return None
    return check


_num = (int, float)
_pos_int = _typed(int, lambda v: v >= 1, "integer >= 1")
_nonneg = _typed(_num, lambda v: v >= 0, "number >= 0")
_pos_num = _typed(_num, lambda v: v > 0, "number > 0")
_str = _typed(str)
_bool = _typed(bool)

_VARIATION_KEYS = {
    "distribution": (False, _typed(str, lambda v: v in ("normal", "lognormal"),
                                   "'normal' or 'lognormal'")),
    "mu": (False, _typed(_num)),
    "sigma": (False, _nonneg),
}

_SCHEMA = {
    "experiment": (False, _str),
    "seed": (False, _typed(int, lambda v: v >= 0, "integer >= 0")),
    "out_dir": (False, _str),
    "model": (False, _str),
    "dataset": (True, {
        "name": (True, _typed(str, lambda v: v in ("mnist", "cifar10"),
                              "'mnist' or 'cifar10'")),
        "dir": (False, _str),
        "subset": (False, _pos_int),
        "test_subset": (False, _pos_int),
    }),
    "network": (True, {
        "preset": (False, _typed(str, lambda v: v in nn.NETWORK_PRESETS,
                                 f"one of {sorted(nn.NETWORK_PRESETS)}")),
        "num_classes": (False, _pos_int),
        "layers": (False, _typed(list)),
    }),
    "device": (False, {
        "preset": (False, _str),
        "g_max": (False, _pos_num),
        "g_min": (False, _pos_num),
        "theta_ltp": (False, _pos_num),
        "theta_ltd": (False, _pos_num),
        "p_max": (False, _pos_int),
        "w_max": (False, _pos_num),
        "w_min": (False, _nonneg),
    }),
    "crossbar": (False, {
        "scheme": (False, _typed(str, lambda v: v in ("two_device", "one_device"),
                                 "'two_device' or 'one_device'")),
        "bit_precision": (False, _pos_int),
        "update_mode": (False, _typed(str, lambda v: v in ("reset_and_set",
                                                           "accumulated", "linear"),
                                      "a known update mode")),
        "g_ref": (False, _pos_num),
        "accumulate_threshold": (False, _pos_num),
        "adc_bits": (False, _pos_int),
        "adc_full_scale": (False, _pos_num),
        "input_encoding": (False, _typed(str, lambda v: v in ("amplitude", "bit_serial"),
                                         "'amplitude' or 'bit_serial'")),
        "input_bits": (False, _pos_int),
        "tile": (False, _pos_int),
    }),
    "c2c": (False, dict(_VARIATION_KEYS)),
    "d2d": (False, dict(_VARIATION_KEYS)),
    "sram_adc": (False, {
        "theta_sram": (True, _pos_num),
        "adc_bits": (True, _pos_int),
        "v_min": (True, _nonneg),
        "v_max": (True, _pos_num),
    }),
    "train": (True, {
        "optimizer": (False, _typed(str, lambda v: v in ("sgd", "adam", "rmsprop"),
                                    "'sgd', 'adam' or 'rmsprop'")),
        "learning_rate": (False, _pos_num),
        "epochs": (False, _typed(int, lambda v: v >= 0, "integer >= 0")),
        "batch_size": (False, _pos_int),
        "loss": (False, _typed(str, lambda v: v == "cross_entropy", "'cross_entropy'")),
    }),
}


def validate_config(raw: dict) -> list:
    """Return every schema violation; an empty list means the config is valid."""
    problems = []

    def walk(section, schema, path):
        if section is None:
            return
        if not isinstance(section, dict):
            problems.append(f"{path or 'config'}: expected an object")
            return
        for key in section:
            if key not in schema:
                problems.append(f"{path + key}: unknown key")
        for key, (required, rule) in schema.items():
            if key not in section:
                if required:
                    problems.append(f"{path + key}: missing required key")
                continue
            value = section[key]
            if isinstance(rule, dict):
                if value is not None:
                    walk(value, rule, path + key + ".")
            else:
                msg = rule(value)
                if msg:
                    problems.append(f"{path + key}: {msg}")

    walk(raw, _SCHEMA, "")
    if not problems:
        net = raw.get("network", {})
        if not net.get("preset") and not net.get("layers"):
            problems.append("network: needs either 'preset' or 'layers'")
        dev_sec = raw.get("device")
        if dev_sec and not dev_sec.get("preset"):
            for key in ("g_max", "g_min", "theta_ltp", "theta_ltd"):
                if key not in dev_sec:
                    problems.append(f"device.{key}: required without a preset")
        if raw.get("crossbar") is not None and not dev_sec:
            problems.append("device: required when a crossbar is configured")
    return problems


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config {path} is not valid JSON: {exc}"]) from exc
    problems = validate_config(raw)
    if problems:
        raise ConfigError(problems)
    return raw


# ---------------------------------------------------------------------------
# Component construction
# ---------------------------------------------------------------------------

def _variation(section) -> VariationSpec:
    if not section:
        return VariationSpec()
    return VariationSpec(
        distribution=section.get("distribution", "normal"),
        mu=section.get("mu", 0.0),
        sigma=section.get("sigma", 0.0),
    )


def build_device(cfg: dict) -> DeviceParams | None:
    section = cfg.get("device")
    if not section:
        return None
    if section.get("preset"):
        params = load_device_preset(section["preset"])
        if "p_max" in section:
            params = params.with_p_max(section["p_max"])
        for key in ("theta_ltp", "theta_ltd", "w_max", "w_min", "g_max", "g_min"):
            if key in section:
                import dataclasses
                params = dataclasses.replace(params, **{key: section[key]})
        return params
    return DeviceParams(**{k: v for k, v in section.items() if k != "preset"})


def build_hardware(cfg: dict) -> nn.HardwareContext | None:
    xb = cfg.get("crossbar")
    if xb is None:
        return None
    kwargs = dict(xb)
    crossbar = CrossbarConfig(rows=1, cols=1, **kwargs)
    return nn.HardwareContext(
        device=build_device(cfg),
        crossbar=crossbar,
        c2c=_variation(cfg.get("c2c")),
        d2d=_variation(cfg.get("d2d")),
        seed=cfg.get("seed", 0),
    )


def build_net_spec(cfg: dict) -> nn.NetworkSpec:
    section = cfg["network"]
    if section.get("preset"):
        builder = nn.NETWORK_PRESETS[section["preset"]]
        if section["preset"] in ("vgg16", "c4w1") and section.get("num_classes"):
            return builder(section["num_classes"])
        return builder()
    return nn.NetworkSpec.from_dicts(section["layers"])


def build_train_config(cfg: dict) -> nn.TrainConfig:
    t = cfg.get("train", {})
    return nn.TrainConfig(
        optimizer=t.get("optimizer", "sgd"),
        learning_rate=t.get("learning_rate", 0.01),
        epochs=t.get("epochs", 1),
        batch_size=t.get("batch_size", 64),
        loss=t.get("loss", "cross_entropy"),
        seed=cfg.get("seed", 0),
    )


def load_datasets(cfg: dict, subset_override: int | None = None):
    section = cfg["dataset"]
    directory = section.get("dir")
    if not directory or not os.path.isdir(directory):
        raise data_mod.DataError(
            f"dataset directory {directory!r} does not exist (files must be local)")
    if section["name"] == "mnist":
        train_ds, test_ds = data_mod.load_mnist(directory)
    else:
        train_ds, test_ds = data_mod.load_cifar10(directory)
    seed = cfg.get("seed", 0)
    n = subset_override or section.get("subset")
    if n:
        train_ds = data_mod.subset(train_ds, min(n, len(train_ds)), seed)
    n_test = section.get("test_subset")
    if n_test:
        test_ds = data_mod.subset(test_ds, min(n_test, len(test_ds)), seed + 1)
    return train_ds, test_ds


def build_network_for_run(cfg: dict, input_shape) -> nn.Network:
    return nn.build_network(build_net_spec(cfg), input_shape,
                            hardware=build_hardware(cfg), seed=cfg.get("seed", 0))


def _sram_params(cfg: dict) -> SramAdcParams | None:
    section = cfg.get("sram_adc")
    if not section:
        return None
    return SramAdcParams(**section)


# ---------------------------------------------------------------------------
# Run flows
# ---------------------------------------------------------------------------

def _input_shape(cfg):
    return (28, 28, 1) if cfg["dataset"]["name"] == "mnist" else (32, 32, 3)


def _write_summary(out_dir, cfg, result: dict):
    summary = {
        "experiment": cfg.get("experiment", "run"),
        "seed": cfg.get("seed", 0),
        "config": cfg,
        **result,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def run_train(cfg: dict, out_dir: str, subset: int | None = None,
              start_model: str | None = None) -> dict:
    """Shared implementation of the train and retrain flows."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    train_ds, test_ds = load_datasets(cfg, subset)
    net = build_network_for_run(cfg, _input_shape(cfg))
    if start_model:
        persist.restore_into(net, persist.load(start_model))
    sram = _sram_params(cfg)
    if sram is not None:
        net.enable_sram_adc(sram, train_ds.images[: min(256, len(train_ds))])
    record = nn.train(net, train_ds, test_ds, build_train_config(cfg), verbose=True)
    record.to_csv(os.path.join(out_dir, "metrics.csv"))
    container = persist.from_network(net, meta={"config": cfg})
    persist.save(container, os.path.join(out_dir, "model.cimf"))
    final = record.final_test_acc if record.rows else nn.evaluate(net, test_ds)
    return _write_summary(out_dir, cfg, {
        "final_test_acc": final,
        "epochs_run": len(record.rows),
        "wall_seconds": time.time() - t0,
    })


def run_infer(cfg: dict, out_dir: str, model_path: str,
              subset: int | None = None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    train_ds, test_ds = load_datasets(cfg, subset)
    net = build_network_for_run(cfg, _input_shape(cfg))
    persist.restore_into(net, persist.load(model_path))
    sram = _sram_params(cfg)
    if sram is not None:
        net.enable_sram_adc(sram, train_ds.images[: min(256, len(train_ds))])
    acc = nn.infer(net, test_ds)
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write("epoch,train_loss,train_acc,test_acc,seconds\n")
        fh.write(f"0,nan,nan,{acc:.6f},{time.time() - t0:.3f}\n")
    return _write_summary(out_dir, cfg, {
        "final_test_acc": acc,
        "wall_seconds": time.time() - t0,
        "model": model_path,
    })


def _set_by_path(cfg: dict, dotted: str, value):
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def _sweep_point(args):
    cfg, out_dir, axis, value, index = args
    point_cfg = copy.deepcopy(cfg)
    _set_by_path(point_cfg, axis, value)
    problems = validate_config(point_cfg)
    if problems:
        raise ConfigError(problems)
    point_dir = os.path.join(out_dir, f"point-{index:03d}")
    summary = run_train(point_cfg, point_dir)
    return value, summary["final_test_acc"]


def run_sweep(cfg: dict, out_dir: str, axis: str, values, jobs: int = 1) -> list:
    """One training run per axis value; everything else (seed included) fixed."""
    if not values:
        raise ConfigError(["sweep: no values given"])
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError([f"sweep axis {axis}: non-numeric value {v!r}"])
    probe = copy.deepcopy(cfg)
    _set_by_path(probe, axis, values[0])
    problems = validate_config(probe)
    if problems:
        raise ConfigError([f"sweep axis {axis}: {p}" for p in problems])
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(cfg, out_dir, axis, v, i) for i, v in enumerate(values)]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            rows = pool.map(_sweep_point, tasks)
    else:
        rows = [_sweep_point(t) for t in tasks]
    with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
        fh.write("value,final_test_acc\n")
        for value, acc in rows:
            fh.write(f"{value},{acc:.6f}\n")
    return rows


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cimsim",
        description="Computing-in-memory accelerator training simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "infer", "retrain", "sweep", "validate-config"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--subset", type=int, default=None,
                       help="override training subset size")
        p.add_argument("--mnist-dir", default=None, help="local MNIST IDX directory")
        p.add_argument("--cifar-dir", default=None, help="local CIFAR-10 directory")
        if name in ("infer", "retrain"):
            p.add_argument("--model", default=None, help="model.cimf to load")
        if name == "sweep":
            p.add_argument("--axis", required=True,
                           help="dotted config path, e.g. d2d.sigma")
            p.add_argument("--values", required=True,
                           help="comma-separated numeric values")
            p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.mnist_dir and cfg["dataset"]["name"] == "mnist":
            cfg["dataset"]["dir"] = args.mnist_dir
        if args.cifar_dir and cfg["dataset"]["name"] == "cifar10":
            cfg["dataset"]["dir"] = args.cifar_dir
        out_dir = args.out or cfg.get("out_dir") or "runs/" + cfg.get("experiment", "run")

        if args.command == "validate-config":
            print("config OK", file=sys.stderr)
            return EXIT_OK
        if args.command == "train":
            summary = run_train(cfg, out_dir, args.subset)
        elif args.command == "retrain":
            model = args.model or cfg.get("model")
            if not model:
                raise ConfigError(["retrain: --model or config 'model' required"])
            summary = run_train(cfg, out_dir, args.subset, start_model=model)
        elif args.command == "infer":
            model = args.model or cfg.get("model")
            if not model:
                raise ConfigError(["infer: --model or config 'model' required"])
            summary = run_infer(cfg, out_dir, model, args.subset)
        else:  # sweep
            try:
                values = [float(v) for v in args.values.split(",") if v != ""]
            except ValueError as exc:
                raise ConfigError([f"sweep values: {exc}"]) from exc
            rows = run_sweep(cfg, out_dir, args.axis, values, args.jobs)
            print(f"sweep complete: {len(rows)} points", file=sys.stderr)
            return EXIT_OK
        print(f"final test accuracy: {summary['final_test_acc']:.4f}",
              file=sys.stderr)
        return EXIT_OK
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (CrossbarError, DeviceModelError, nn.NetworkError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except data_mod.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except persist.PersistError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
