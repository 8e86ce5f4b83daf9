"""Command-line harness: ``lrqt {static,varsweep,rsweep,quench,traceerr}``.

Every subcommand writes ``<command>.csv`` and ``<command>.json`` (metadata
sidecar with config hash, seed and cost counters) into the output directory.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import yaml

from .ensemble import RealizationError
from .experiments import (
    ConfigValidationError,
    EnsembleConfig,
    EstimatorConfig,
    ExperimentConfig,
    ModelConfig,
    OutputConfig,
    ScheduleConfig,
    run_command,
)

log = logging.getLogger("lrqt")

SECTIONS = {
    "model": ModelConfig,
    "estimator": EstimatorConfig,
    "schedule": ScheduleConfig,
    "ensemble": EnsembleConfig,
    "output": OutputConfig,
}

# Per-subcommand defaults layered under the config file.
COMMAND_DEFAULTS = {
    "static": {"estimator": {"rank": 10, "samples": 30}, "ensemble": {"n_realizations": 1000}},
    "varsweep": {"estimator": {"rank": 100, "samples": 300}, "ensemble": {"n_realizations": 100}},
    "rsweep": {"ensemble": {"n_realizations": 200}},
    "quench": {"estimator": {"rank": 100, "samples": 300}, "ensemble": {"n_realizations": 100}},
    "traceerr": {"model": {"L": 10}, "ensemble": {"n_realizations": 100}},
}


class ConfigError(ValueError):
    pass


def _coerce(value, current, where: str):
    if current is None or value is None:
        return value
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    return value


def _apply(cfg: ExperimentConfig, data: dict, marks: dict | None = None, origin: str = "") -> None:
    marks = marks or {}
    for section, values in data.items():
        where = f"{origin}{marks.get((section,), '')}"
        if section not in SECTIONS:
            raise ConfigError(f"{where}unknown section {section!r} (expected one of {sorted(SECTIONS)})")
        if not isinstance(values, dict):
            raise ConfigError(f"{where}section {section!r} must be a mapping")
        target = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(target)}
        for key, value in values.items():
            kwhere = f"{origin}{marks.get((section, key), '')}"
            if key not in names:
                raise ConfigError(f"{kwhere}unknown key {section}.{key} (expected one of {sorted(names)})")
            setattr(target, key, _coerce(value, getattr(target, key), f"{kwhere}{section}.{key}"))


def _key_marks(node, prefix=()) -> dict:
    """(section, key) -> 'line N: ' for every mapping key in a YAML node tree."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out[path] = f"line {k.start_mark.line + 1}: "
            out.update(_key_marks(v, path))
    return out


def load_config_text(text: str, source: str = "<config>") -> tuple[dict, dict]:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed config: {exc}") from exc
    if data is None:
        return {}, {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections")
    return data, _key_marks(node)


def build_config(command: str, config_path: str | None = None,
                 overrides: dict | None = None) -> tuple[ExperimentConfig, dict]:
    """Defaults, then the config file, then command-line overrides.

    Also returns where each setting came from, keyed by (section, key), so
    value errors found later can point at the offending line.
    """
    cfg = ExperimentConfig()
    _apply(cfg, COMMAND_DEFAULTS.get(command, {}))
    origins: dict = {}
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        data, marks = load_config_text(text, config_path)
        _apply(cfg, data, marks, origin=f"{config_path}: ")
        origins.update({k: f"{config_path}: {v}" for k, v in marks.items()})
    if overrides:
        _apply(cfg, overrides, origin="command line: ")
        origins.update({(sec, key): "command line: " for sec, vals in overrides.items() for key in vals})
    return cfg, origins


def describe_problems(exc: ConfigValidationError, origins: dict) -> str:
    lines = []
    for key, msg in exc.problems:
        where = origins.get(tuple(key.split(".")), "default value: ")
        lines.append(f"{where}{key} {msg}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def write_outputs(out: Path, command: str, result) -> list[Path]:
    """``<command>.csv``, ``<command>_raw.csv`` and the ``<command>.json`` sidecar."""
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{command}.csv", out / f"{command}_raw.csv", out / f"{command}.json"]
    paths[0].write_text(rows_to_csv(result.rows))
    paths[1].write_text(rows_to_csv(result.raw_rows))
    paths[2].write_text(json.dumps(result.sidecar, indent=2, sort_keys=True) + "\n")
    return paths


def _overrides(args) -> dict:
    ov: dict = {}

    def put(section, key, value):
        if value is not None:
            ov.setdefault(section, {})[key] = value

    put("model", "L", args.L)
    put("model", "delta", args.delta)
    put("estimator", "rank", args.rank)
    put("estimator", "samples", args.samples)
    put("ensemble", "n_realizations", args.nreal)
    put("ensemble", "seed", args.seed)
    put("ensemble", "threads", args.threads)
    put("schedule", "tmin", args.tmin)
    put("schedule", "tmax", args.tmax)
    put("schedule", "tpoints", args.tpoints)
    put("schedule", "beta", args.beta)
    put("schedule", "delta_final", args.delta_final)
    put("schedule", "temperature", args.temperature)
    put("schedule", "t_final", args.t_final)
    put("schedule", "dt", args.dt)
    if args.rgrid:
        put("schedule", "r_grid", [int(x) for x in args.rgrid.split(",")])
    if args.trace_ranks:
        put("schedule", "trace_ranks", [int(x) for x in args.trace_ranks.split(",")])
    if args.temperatures:
        put("schedule", "temperature_grid", [float(x) for x in args.temperatures.split(",")])
    if args.beta_grid:
        put("schedule", "beta_grid", [float(x) for x in args.beta_grid.split(",")])
    if args.kinds:
        put("estimator", "kinds", args.kinds.split(","))
    put("output", "directory", args.out)
    return ov


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrqt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "static": "mean and variance of <C> versus temperature (all four estimators)",
        "varsweep": "variance versus temperature at large rank",
        "rsweep": "variance versus rank at fixed temperature, with power-law slopes",
        "quench": "<C(t)> after a quench of the anisotropy",
        "traceerr": "low-rank trace error versus truncated-spectrum error",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="YAML/JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int)
        p.add_argument("--L", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--rank", type=int)
        p.add_argument("--samples", type=int, help="plain-QT vectors M (default 3*rank)")
        p.add_argument("--nreal", type=int, help="number of independent realizations")
        p.add_argument("--tmin", type=float)
        p.add_argument("--tmax", type=float)
        p.add_argument("--tpoints", type=int)
        p.add_argument("--temperatures", help="comma-separated temperatures (overrides the tmin/tmax grid)")
        p.add_argument("--temperature", type=float, help="rsweep temperature")
        p.add_argument("--beta", type=float, help="quench initial inverse temperature")
        p.add_argument("--delta-final", dest="delta_final", type=float)
        p.add_argument("--t-final", dest="t_final", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--rgrid", help="comma-separated ranks for rsweep")
        p.add_argument("--beta-grid", dest="beta_grid", help="comma-separated betas for traceerr")
        p.add_argument("--trace-ranks", dest="trace_ranks", help="comma-separated ranks for traceerr")
        p.add_argument("--kinds", help="comma-separated estimator kinds")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg, origins = build_config(args.command, args.config, _overrides(args))
        result = run_command(args.command, cfg)
    except ConfigValidationError as exc:
        print(f"error: {describe_problems(exc, origins)}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RealizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        paths = write_outputs(Path(cfg.output.directory), args.command, result)
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %s (%.1f s)", ", ".join(map(str, paths)), result.sidecar["wall_seconds"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
