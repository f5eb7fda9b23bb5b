"""Command-line front end.

Exit codes: 0 ok, 1 verification failure, 2 config error, 3 infeasible parameters.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import re
import sys
from pathlib import Path

from bdcs.channel import SystemConfig
from bdcs.errors import InfeasibleError, ParameterError
from bdcs.pilot import (
    PilotPattern,
    bdso_optimize,
    block_coherence,
    equidistant_positions,
    ga_optimize,
    random_sign_sequences,
    write_pattern,
)
from bdcs.sim import PILOT_SCHEMES, SWEEP_VARIABLES, ExperimentSpec, default_threads, manifest_text, results_to_csv, run_experiment

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3

SYSTEM_KEYS = {f.name: f.type for f in dataclasses.fields(SystemConfig)}
EXPERIMENT_KEYS = {
    "sweep_variable", "sweep_values", "trials", "methods", "pilot_scheme", "seed",
    "smoothing", "exact_bem", "pilot_iterations", "record_runtime",
}
OUTPUT_KEYS = {"csv", "manifest"}
SECTIONS = {"system": set(SYSTEM_KEYS) | {"normalized_doppler"}, "experiment": EXPERIMENT_KEYS, "output": OUTPUT_KEYS}


class ConfigError(Exception):
    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


@dataclasses.dataclass
class RunConfig:
    system: SystemConfig
    experiment: ExperimentSpec
    csv_path: Path | None = None
    manifest_path: Path | None = None


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def load_run_config(path) -> RunConfig:
    """Parse a sectioned ``key = value`` file; errors carry the offending line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read config: {exc.strerror}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(path, lineno, "malformed line") from None
    except configparser.Error as exc:
        raise ConfigError(path, getattr(exc, "lineno", None), exc.message) from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(path, _line_of(text, section), f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SECTIONS[section]:
                raise ConfigError(path, _line_of(text, section, key), f"unknown key '{key}' in [{section}]")

    def convert(section, key, fn):
        try:
            return fn(parser[section][key])
        except (ValueError, TypeError) as exc:
            raise ConfigError(path, _line_of(text, section, key), f"bad value for '{key}': {exc}") from None

    sys_kwargs = {}
    nu = None
    if parser.has_section("system"):
        for key in parser["system"]:
            if key == "normalized_doppler":
                nu = convert("system", key, float)
            else:
                caster = int if SYSTEM_KEYS[key] in (int, "int") else float
                sys_kwargs[key] = convert("system", key, caster)
    try:
        system = SystemConfig(**sys_kwargs)
        if nu is not None:
            system = system.with_normalized_doppler(nu)
    except InfeasibleError:
        raise
    except ParameterError as exc:
        raise ConfigError(path, _line_of(text, "system"), str(exc)) from None

    exp_kwargs = {}
    if parser.has_section("experiment"):
        sec = "experiment"
        casters = {
            "sweep_variable": str.strip,
            "sweep_values": lambda v: tuple(float(x) for x in _parse_list(v)),
            "trials": int,
            "methods": lambda v: tuple(_parse_list(v)),
            "pilot_scheme": str.strip,
            "seed": int,
            "smoothing": _parse_bool,
            "exact_bem": _parse_bool,
            "pilot_iterations": int,
            "record_runtime": _parse_bool,
        }
        for key in parser[sec]:
            exp_kwargs[key] = convert(sec, key, casters[key])
        if "sweep_variable" in exp_kwargs and exp_kwargs["sweep_variable"] not in SWEEP_VARIABLES:
            raise ConfigError(
                path, _line_of(text, sec, "sweep_variable"),
                f"invalid value for 'sweep_variable': {exp_kwargs['sweep_variable']!r} (choose from {', '.join(SWEEP_VARIABLES)})",
            )
    try:
        experiment = ExperimentSpec(base_config=system, **exp_kwargs)
    except ParameterError as exc:
        raise ConfigError(path, _line_of(text, "experiment"), str(exc)) from None

    csv_path = manifest_path = None
    if parser.has_section("output"):
        out = parser["output"]
        csv_path = Path(out["csv"]) if "csv" in out else None
        manifest_path = Path(out["manifest"]) if "manifest" in out else None
    return RunConfig(system, experiment, csv_path, manifest_path)


def cmd_design_pilots(args) -> int:
    run = load_run_config(args.config)
    config = run.system
    iterations = args.iterations if args.iterations is not None else run.experiment.pilot_iterations
    seed = args.seed if args.seed is not None else run.experiment.seed
    values = random_sign_sequences(config.n_antennas, config.n_groups, seed)
    if args.scheme == "equidistant":
        positions = equidistant_positions(config.n_subcarriers, config.n_groups, config.bem_order)
        trace = [block_coherence(positions, values, config.channel_length, config.n_subcarriers)]
    elif args.scheme == "bdso":
        result = bdso_optimize(config, values, iterations, seed)
        positions, trace = result.positions, result.mu_trace
    else:
        result = ga_optimize(config, values, iterations, seed)
        positions, trace = result.positions, result.mu_trace
    pattern = PilotPattern(config.n_subcarriers, config.n_groups, config.bem_order, positions, values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pattern(pattern, out)
    with open(out.with_suffix(".mu.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "mu"])
        for it, mu in enumerate(trace):
            w.writerow([it, f"{mu:.12f}"])
    print(f"{args.scheme}: mu(Z_s) {trace[0]:.4f} -> {trace[-1]:.4f}; pattern written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = load_run_config(args.config)
    spec = run.experiment
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if args.scheme is not None:
        spec = dataclasses.replace(spec, pilot_scheme=args.scheme)
    if args.iterations is not None:
        spec = dataclasses.replace(spec, pilot_iterations=args.iterations)
    csv_path = Path(args.out) if args.out else (run.csv_path or Path("results.csv"))
    manifest = run.manifest_path or csv_path.with_suffix(".manifest.txt")
    threads = args.threads or default_threads()
    rows = run_experiment(spec, threads=threads)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(results_to_csv(rows))
    manifest.write_text(manifest_text(spec, {"output": {"csv": csv_path, "manifest": manifest}}))
    print(f"{len(rows)} rows written to {csv_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from bdcs.verify import run_checks

    offset_sign = -1 if args.inject_fault == "offset-sign" else 1
    results = run_checks(seed=args.seed or 0, offset_sign=offset_sign)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.detail})")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"verification failed: {failed[0].name}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdcs", description="BDCS doubly-selective channel estimation toolkit")
    parser.add_argument("--verify", action="store_true", help="run the built-in verification suite and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p, need_config=True):
        if need_config:
            p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--scheme", choices=PILOT_SCHEMES, help="pilot position scheme")
        p.add_argument("--iterations", type=int, help="BDSO iterations or GA generations")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--threads", type=int, help="worker processes (default: all cores)")

    p = sub.add_parser("design-pilots", help="optimize pilot positions and write the pattern")
    common(p)
    p.set_defaults(func=cmd_design_pilots, scheme="bdso")
    p = sub.add_parser("sweep", help="run a Monte-Carlo sweep and write CSV plus manifest")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("verify", help="run the built-in identity and oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=["offset-sign"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verify:
        args = parser.parse_args(["verify"])
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible parameters: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
