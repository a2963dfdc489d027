"""Command-line harness: ``synth``, ``ingest``, ``cluster``, ``solve`` and ``sweep``.

Settings come from built-in defaults, then an optional JSON config file
(top-level keys, or a section named after the subcommand), then flags.
Every artifact is written atomically. Failures print one line to stderr,
``error: code=<n> kind=<kind> message=<json string>``, and exit with

    2  missing input file or bad usage
    3  malformed input (schema or data violation)
    4  solver failure or non-convergence
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from importlib import resources
from pathlib import Path

from .clustering import (
    ClusteringConfig,
    build_scenario_set,
    elbow_scan,
    kmeans_sdtw,
    load_scenario_set,
    normalize,
    save_scenario_set,
)
from .dispatch import load_instance
from .dro import SolverConfig, SolverError, solve_rkl_muc, solve_suc
from .evaluation import DEFAULT_RHOS, rho_sweep
from .market_data import (
    DataError,
    SyntheticRegime,
    _atomic_write,
    apply_surcharge,
    load_profiles,
    split_dataset,
    synthetic_records,
    write_profiles,
    write_records,
)

EXIT_MISSING, EXIT_SCHEMA, EXIT_SOLVER = 2, 3, 4

SHIFTED_REGIME = SyntheticRegime(evening_load=2.1, spike_prob=0.45, spike_mwh=140.0, cloud_prob=0.6)

# every setting a subcommand reads, with its built-in default
DEFAULTS = {
    "common": {"seed": 0, "out_dir": ".", "threads": 1, "fixture": False},
    "synth": {"start": "2023-01-01", "days": 90, "horizon": 24, "regime": "base", "output": "synthetic.csv"},
    "ingest": {"data": None, "surcharge": None, "split_date": None, "horizon": 24,
               "allow_negative_prices": False},
    "cluster": {"train": None, "horizon": 24, "s": None, "s_range": None, "gamma": 1.0,
                "elbow_threshold": 0.01, "max_iter": 30, "output": "scenarios.json"},
    "solve": {"rho": 0.0, "tol": 1e-5, "kmax": 50.0, "max_iter": 500, "scenarios": None, "instance": None,
              "benchmark_suc": False, "dump_lp": None, "output": None},
    "sweep": {"rho": list(DEFAULT_RHOS), "tol": 1e-5, "kmax": 50.0, "max_iter": 500, "scenarios": None,
              "instance": None, "test": None, "horizon": None, "csv": "sweep.csv", "svg": "sweep.svg"},
}

FIXTURE_FILES = {
    "data": "fixture_records.csv",
    "train": "fixture_train.csv",
    "test": "fixture_test.csv",
    "scenarios": "fixture_scenarios.json",
    "instance": "fixture_instance.json",
}
FIXTURE_SETTINGS = {"surcharge": 100.0, "split_date": "2023-03-02"}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def fixture_path(key: str) -> Path:
    """Location of a bundled fixture file."""
    return Path(str(resources.files("drmuc") / "data" / FIXTURE_FILES[key]))


def _s_range(text: str) -> list[int]:
    """Parse ``a..b`` or a comma list into cluster counts."""
    text = str(text)
    if ".." in text:
        a, b = text.split("..", 1)
        values = list(range(int(a), int(b) + 1))
    else:
        values = [int(t) for t in text.split(",") if t.strip()]
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"bad S range {text!r}")
    return values


def _rho_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        values = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rho list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty rho list")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file; flags override it")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for all randomness (default 0)")
    g.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs (default .)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (default 1)")
    g.add_argument("--fixture", action="store_true", default=argparse.SUPPRESS,
                   help="take unspecified inputs from the bundled synthetic fixture")

    parser = argparse.ArgumentParser(
        prog="drmuc", parents=[common],
        description="Distributionally robust microgrid unit commitment under KL ambiguity.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sp = {}

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic hourly dataset")
    p.add_argument("--start", default=None, help="first day, YYYY-MM-DD (default 2023-01-01)")
    p.add_argument("--days", type=int, default=None, help="number of days (default 90)")
    p.add_argument("--horizon", type=int, default=None, help="periods per day (default 24)")
    p.add_argument("--regime", choices=("base", "shifted"), default=None,
                   help="generator regime; 'shifted' has more price spikes and evening load")
    p.add_argument("--output", default=None, help="file name inside --out-dir (default synthetic.csv)")
    sp["synth"] = p

    p = sub.add_parser("ingest", parents=[common], help="build daily profiles, add surcharge, split train/test")
    p.add_argument("--data", default=None, help="hourly CSV (date,hour,load_kw,pv_kw,price_mwh)")
    p.add_argument("--surcharge", type=float, default=None, help="retail surcharge in $/MWh (required)")
    p.add_argument("--split-date", default=None, help="first test day, YYYY-MM-DD (required)")
    p.add_argument("--horizon", type=int, default=None, help="periods per day (default 24)")
    p.add_argument("--allow-negative-prices", action="store_true", default=None,
                   help="accept negative prices (only sound with a finite purchase limit)")
    sp["ingest"] = p

    p = sub.add_parser("cluster", parents=[common], help="soft-DTW k-means scenarios and elbow table")
    p.add_argument("--train", default=None, help="training profiles CSV (default <out-dir>/train.csv)")
    p.add_argument("--horizon", type=int, default=None, help="periods per day (default 24)")
    p.add_argument("--s", type=int, default=None, help="number of scenarios; overrides the elbow choice")
    p.add_argument("--s-range", type=_s_range, default=None, help="elbow scan range, e.g. 1..12")
    p.add_argument("--gamma", type=float, default=None, help="soft-DTW smoothing (default 1.0)")
    p.add_argument("--elbow-threshold", type=float, default=None,
                   help="stop when the variance gain drops below this (default 0.01)")
    p.add_argument("--max-iter", type=int, default=None, help="k-means iterations (default 30)")
    p.add_argument("--output", default=None, help="scenario file name (default scenarios.json)")
    sp["cluster"] = p

    p = sub.add_parser("solve", parents=[common], help="solve the robust (or stochastic) commitment")
    p.add_argument("--rho", type=float, default=None, help="KL radius (default 0)")
    p.add_argument("--tol", type=float, default=None, help="Benders gap tolerance (default 1e-5)")
    p.add_argument("--kmax", type=float, default=None, help="exponent safeguard bound (default 50)")
    p.add_argument("--max-iter", type=int, default=None, help="Benders iteration cap (default 500)")
    p.add_argument("--scenarios", default=None, help="scenario JSON from 'cluster'")
    p.add_argument("--instance", default=None, help="microgrid instance JSON")
    p.add_argument("--benchmark-suc", action="store_true", default=None,
                   help="solve the nominal stochastic benchmark instead")
    p.add_argument("--dump-lp", default=None, help="write every master problem to this text file")
    p.add_argument("--output", default=None, help="solution file name (default solution.json)")
    sp["solve"] = p

    p = sub.add_parser("sweep", parents=[common], help="rho sweep with out-of-sample costs, CSV and SVG")
    p.add_argument("--rho", type=_rho_list, default=None, help="comma list (default 0,0.2,0.4,0.6,0.8,1.0)")
    p.add_argument("--tol", type=float, default=None, help="Benders gap tolerance (default 1e-5)")
    p.add_argument("--kmax", type=float, default=None, help="exponent safeguard bound (default 50)")
    p.add_argument("--max-iter", type=int, default=None, help="Benders iteration cap (default 500)")
    p.add_argument("--scenarios", default=None, help="scenario JSON from 'cluster'")
    p.add_argument("--instance", default=None, help="microgrid instance JSON")
    p.add_argument("--test", default=None, help="test profiles CSV (default <out-dir>/test.csv)")
    p.add_argument("--horizon", type=int, default=None, help="periods per day (default: the instance's)")
    p.add_argument("--csv", default=None, help="CSV file name (default sweep.csv)")
    p.add_argument("--svg", default=None, help="chart file name (default sweep.svg)")
    sp["sweep"] = p

    lines = ["global flags: --config --seed --out-dir --threads --fixture", "", "subcommand flags:"]
    for name, p in sp.items():
        flags = [s for a in p._actions for s in a.option_strings
                 if s.startswith("--") and s not in ("--help", "--config", "--seed", "--out-dir", "--threads", "--fixture")]
        lines.append(f"  {name:8s} " + " ".join(flags))
    lines += ["", "exit codes: 0 ok, 2 missing file or usage, 3 malformed input, 4 solver failure"]
    parser.epilog = "\n".join(lines)
    return parser


def _load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_MISSING, "missing-file", f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_SCHEMA, "schema", f"config {p}: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_SCHEMA, "schema", f"config {p}: top level must be an object")
    return doc


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) for ``args.command``."""
    cmd = args.command
    known = {**DEFAULTS["common"], **DEFAULTS[cmd]}
    settings = dict(known)
    cfg = _load_config(args.config) if getattr(args, "config", None) else {}
    sections = set(DEFAULTS) - {"common"}
    everything = set().union(*DEFAULTS.values())
    # top-level keys first (those meant for other subcommands are skipped), then this command's section
    for key, value in cfg.items():
        if key in sections:
            if not isinstance(value, dict):
                raise CliError(EXIT_SCHEMA, "schema", f"config section {key!r} must be an object")
            continue
        key = key.replace("-", "_")
        if key not in everything or key == "config":
            raise CliError(EXIT_SCHEMA, "schema", f"unknown config key {key!r}")
        if key in known:
            settings[key] = value
    for key, value in cfg.get(cmd, {}).items():
        key = key.replace("-", "_")
        if key not in known:
            raise CliError(EXIT_SCHEMA, "schema", f"unknown config key {cmd}.{key}")
        settings[key] = value
    for key in known:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings.get("fixture"):
        for key, value in FIXTURE_SETTINGS.items():
            if key in known and settings[key] is None:
                settings[key] = value
    if cmd == "sweep":
        settings["rho"] = _rho_list(settings["rho"])
    if cmd == "cluster" and settings["s_range"] is not None and not isinstance(settings["s_range"], list):
        settings["s_range"] = _s_range(settings["s_range"])
    for key in ("tol", "kmax"):
        if key in settings and not float(settings[key]) > 0:
            raise CliError(EXIT_SCHEMA, "schema", f"{key} must be positive")
    return settings


def _input(settings, key, default_name=None) -> Path:
    """Resolve an input path: explicit, then fixture, then ``out_dir/default_name``."""
    value = settings.get(key)
    if value is None and settings.get("fixture") and key in FIXTURE_FILES:
        path = fixture_path(key)
    elif value is None and default_name is not None:
        path = Path(settings["out_dir"]) / default_name
    elif value is None:
        raise CliError(EXIT_MISSING, "missing-file", f"no --{key.replace('_', '-')} given")
    else:
        path = Path(value)
    if not path.is_file():
        raise CliError(EXIT_MISSING, "missing-file", f"{key} file not found: {path}")
    return path


def _date(text, what) -> dt.date:
    try:
        return dt.date.fromisoformat(str(text))
    except ValueError:
        raise CliError(EXIT_SCHEMA, "schema", f"bad {what} {text!r}, expected YYYY-MM-DD") from None


def _write_json(path: Path, doc) -> None:
    _atomic_write(path, lambda fh: fh.write(json.dumps(doc, indent=2) + "\n"))


def cmd_synth(s) -> int:
    start = _date(s["start"], "start date")
    end = start + dt.timedelta(days=int(s["days"]) - 1)
    regime = SHIFTED_REGIME if s["regime"] == "shifted" else SyntheticRegime()
    records = synthetic_records(start, end, int(s["seed"]), int(s["horizon"]), regime)
    out = Path(s["out_dir"]) / s["output"]
    write_records(records, out)
    print(f"wrote {len(records)} hourly records to {out}")
    return 0


def cmd_ingest(s) -> int:
    data = _input(s, "data")
    if s["surcharge"] is None:
        raise CliError(EXIT_SCHEMA, "schema", "--surcharge is required (no default)")
    if s["split_date"] is None:
        raise CliError(EXIT_SCHEMA, "schema", "--split-date is required")
    boundary = _date(s["split_date"], "split date")
    dataset = load_profiles(data, horizon=int(s["horizon"]), allow_negative_prices=bool(s["allow_negative_prices"]))
    dataset = apply_surcharge(dataset, float(s["surcharge"]))
    train, test = split_dataset(dataset, boundary)
    out = Path(s["out_dir"])
    write_profiles(train, out / "train.csv")
    write_profiles(test, out / "test.csv")
    print(f"wrote {len(train)} training and {len(test)} test days to {out}")
    return 0


def cmd_cluster(s) -> int:
    train = load_profiles(_input(s, "train", "train.csv"), horizon=int(s["horizon"]))
    points, stats = normalize(train)
    cfg = ClusteringConfig(gamma=float(s["gamma"]), seed=int(s["seed"]), max_iter=int(s["max_iter"]),
                           threads=int(s["threads"]))
    out = Path(s["out_dir"])
    if s["s_range"]:
        if max(s["s_range"]) > len(points):
            raise CliError(EXIT_SCHEMA, "schema", f"S range exceeds the {len(points)} training days")
        report = elbow_scan(points, s["s_range"], cfg, float(s["elbow_threshold"]))
        _atomic_write(out / "elbow.csv", lambda fh: fh.write(report.to_csv()))
        S = int(s["s"]) if s["s"] is not None else report.chosen_S
        fit = report.clusterings.get(S) or kmeans_sdtw(points, S, cfg)
        print(f"elbow table with {len(report.rows)} rows written; using S={S}")
    else:
        S = int(s["s"]) if s["s"] is not None else 8
        if S > len(points):
            raise CliError(EXIT_SCHEMA, "schema", f"S={S} exceeds the {len(points)} training days")
        fit = kmeans_sdtw(points, S, cfg)
    scenarios = build_scenario_set(train, fit, stats)
    save_scenario_set(scenarios, out / s["output"])
    print(f"wrote {len(scenarios)} scenarios to {out / s['output']}")
    return 0


def _solver_config(s, dump=None) -> SolverConfig:
    return SolverConfig(tol=float(s["tol"]), max_iter=int(s["max_iter"]), k_max=float(s["kmax"]),
                        threads=int(s["threads"]), dump_lp=dump)


def _load_problem(s):
    instance = load_instance(_input(s, "instance"))
    scenarios = load_scenario_set(_input(s, "scenarios", "scenarios.json"))
    if scenarios.horizon != instance.horizon:
        raise CliError(EXIT_SCHEMA, "schema",
                       f"scenario horizon {scenarios.horizon} != instance horizon {instance.horizon}")
    return instance, scenarios


def cmd_solve(s) -> int:
    instance, scenarios = _load_problem(s)
    dumps = []
    config = _solver_config(s, dumps.append if s["dump_lp"] else None)
    if s["benchmark_suc"]:
        sol, _ = solve_suc(instance, scenarios, config)
    else:
        sol, _ = solve_rkl_muc(instance, scenarios, float(s["rho"]), config)
    out = Path(s["out_dir"]) / (s["output"] or "solution.json")
    _write_json(out, sol.to_dict())
    if s["dump_lp"]:
        text = "".join(f"# master problem {i + 1}\n{d}\n" for i, d in enumerate(dumps))
        _atomic_write(Path(s["dump_lp"]), lambda fh: fh.write(text))
    if not sol.converged:
        raise CliError(EXIT_SOLVER, "solver", f"no convergence: status {sol.status} after {sol.iterations} "
                                              f"iterations, gap {sol.ub - sol.lb:.3g}")
    print(f"{sol.method} rho={sol.rho:g} objective={sol.objective!r} iterations={sol.iterations} -> {out}")
    return 0


def cmd_sweep(s) -> int:
    instance, scenarios = _load_problem(s)
    horizon = int(s["horizon"]) if s["horizon"] is not None else instance.horizon
    test = load_profiles(_input(s, "test", "test.csv"), horizon=horizon)
    report = rho_sweep(instance, scenarios, s["rho"], test, _solver_config(s))
    out = Path(s["out_dir"])
    report.write_csv(out / s["csv"])
    report.write_svg(out / s["svg"])
    print(f"wrote {len(report.all_rows)} rows to {out / s['csv']} and chart to {out / s['svg']}")
    if report.failures:
        raise CliError(EXIT_SOLVER, "solver", "; ".join(f"{r.label} rho={r.rho:g}: {r.error}" for r in report.failures))
    return 0


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "cluster": cmd_cluster, "solve": cmd_solve, "sweep": cmd_sweep}


def _fail(code: int, kind: str, message: str) -> int:
    print(f"error: code={code} kind={kind} message={json.dumps(message)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return _fail(EXIT_MISSING, "usage", "no subcommand given")
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing-file", str(exc))
    except SolverError as exc:
        return _fail(EXIT_SOLVER, "solver", str(exc))
    except (DataError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        return _fail(EXIT_SCHEMA, "schema", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
