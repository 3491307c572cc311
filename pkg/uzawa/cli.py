"""
Command-line runner of the experiments: `uzawa toy`, `uzawa lqg`, `uzawa tcl`.

Exit codes: 0 on success, 1 on a solver failure (or a failed toy check),
2 on a configuration error.
"""

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Any, Sequence

import narwhals as nw
import numpy as np
import scipy

from . import __version__
from .core import StepSchedule, StreamPurpose, derive_seed
from .coordination import coordination_experiment, write_coordination
from .data import load_desk_uc
from .dual_ascent import estimate_dual_value, stochastic_uzawa
from .exceptions import ConfigError, UzawaError
from .lqg import LQGAgentParams, LQGFamily, bias_variance_experiment
from .tcl import TCLGrid, TCLParams, tcl_population
from .toy import make_toy_problem, toy_dual_value, toy_saddle_point
from .unit_commitment import NadirLinearization
from ._utils import (
    RunManifest,
    _atomic_write_text,
    _ci_label,
    _load_config,
    _sha256_bytes,
    _write_json,
)

logger = logging.getLogger(__name__)


def _parse_schedule(text: str) -> dict[str, float]:
    values = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in ("a", "b"):
            raise argparse.ArgumentTypeError(
                f"`--schedule` must look like a=1,b=10, not {text!r}"
            )
        try:
            values[key] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"`{key}` must be a number, not {value!r}")
    return values


def _parse_sigma(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"`--sigma` must be a list like 0,1,2, not {text!r}")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"`--seed` must be a 64-bit unsigned integer, not {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uzawa",
        description="Stochastic price decomposition experiments.",
    )
    parser.add_argument("--version", action="version", version=f"uzawa {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration; the desk one by default")
    common.add_argument("--seed", type=_seed, help="master seed")
    common.add_argument("--iterations", type=int, help="number of dual iterations K")
    common.add_argument("--workers", type=int, help="maximum number of concurrent solves")
    common.add_argument("--out", help="output directory")
    common.add_argument(
        "--schedule", type=_parse_schedule, help="step sizes a/(b+k+1), e.g. a=1,b=10"
    )
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )

    subparsers.add_parser(
        "toy", parents=[common], help="one-agent quadratic problem with a known saddle point"
    )
    subparsers.add_parser(
        "lqg", parents=[common], help="bias and variance of stochastic prices on LQG agents"
    )
    tcl = subparsers.add_parser(
        "tcl", parents=[common], help="TCL fleet coordinated with the unit commitment"
    )
    tcl.add_argument(
        "--sigma", type=_parse_sigma, help="volatility scenarios in degC/sqrt(h), e.g. 0,1,2"
    )
    return parser


def _apply_overrides(config: dict[str, dict[str, Any]], args: argparse.Namespace):
    if args.seed is not None:
        config["seed"]["master"] = args.seed
    if args.schedule is not None:
        config["schedule"].update(args.schedule)
    if args.iterations is not None:
        if args.iterations < 0:
            raise ConfigError("`--iterations` must be nonnegative", key="iterations")
        config["algorithm"]["iterations"] = args.iterations
        if "lqg" in config:
            checkpoints = config["lqg"]["checkpoints"]
            config["lqg"]["checkpoints"] = [k for k in checkpoints if k < args.iterations] + [
                args.iterations
            ]
    if args.workers is not None:
        config["algorithm"]["workers"] = args.workers
    if args.out is not None:
        config["output"]["directory"] = args.out
    if getattr(args, "sigma", None) is not None:
        config["population"]["sigma"] = args.sigma
    if config["algorithm"]["workers"] < 1:
        raise ConfigError("`workers` must be at least 1", section="algorithm", key="workers")


def _schedule(config: dict) -> StepSchedule:
    try:
        return StepSchedule(config["schedule"]["a"], config["schedule"]["b"])
    except ValueError as exc:
        raise ConfigError(str(exc), section="schedule") from exc


def _versions() -> dict[str, str]:
    return {
        "uzawa": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "narwhals": nw.__version__,
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _snapshot(config: dict, text: str, directory: str) -> tuple[str, list[str]]:
    """Write the configuration next to the outputs and return its hash."""
    resolved = json.dumps(config, indent=2, sort_keys=True) + "\n"
    paths = [
        _atomic_write_text(os.path.join(directory, "config.toml"), text),
        _atomic_write_text(os.path.join(directory, "config.json"), resolved),
    ]
    return _sha256_bytes(resolved.encode()), paths


def cmd_toy(config: dict, out: str) -> tuple[int, list[str]]:
    """Run the quadratic toy problem and check its saddle point."""
    toy = config["toy"]
    seed = config["seed"]["master"]
    K = config["algorithm"]["iterations"]
    problem = make_toy_problem(toy["n"], toy["noise"], toy["target"], toy["slots"])
    trace = stochastic_uzawa(
        problem,
        _schedule(config),
        K,
        seed,
        workers=config["algorithm"]["workers"],
    )
    final = trace.final
    estimate = estimate_dual_value(
        problem,
        final,
        toy["dual_samples"],
        seed=derive_seed(seed, StreamPurpose.EVALUATION),
    )
    lam = float(final.values.mean())
    expected_lam = toy_saddle_point(toy["target"])
    expected_value = toy["slots"] * toy_dual_value(expected_lam, toy["target"], toy["noise"])
    print(f"lambda[{K}] = {lam:.6f} (saddle point {expected_lam:.6f})")
    print(
        f"W(lambda[{K}]) = {estimate.value:.6f} +/- {estimate.half_width:.6f} "
        f"[{_ci_label(estimate.confidence)}] (optimum {expected_value:.6f})"
    )
    trace_path = trace.to_csv(os.path.join(out, "trace.csv"))
    paths = [trace_path, f"{trace_path}.json"]
    summary = {
        "lambda": final.values.tolist(),
        "dual_value": estimate.value,
        "dual_half_width": estimate.half_width,
        "saddle_point": expected_lam,
        "optimum": expected_value,
    }
    paths.append(_write_json(os.path.join(out, "summary.json"), summary))

    ok = np.all(np.abs(final.values - expected_lam) < toy["tolerance"]) and (
        abs(estimate.value - expected_value) < toy["value_tolerance"] + estimate.half_width
    )
    if not ok:
        print("toy check failed: the prices did not reach the saddle point", file=sys.stderr)
        return 1, paths
    return 0, paths


def cmd_lqg(config: dict, out: str) -> tuple[int, list[str]]:
    """Bias/variance experiment of stochastic prices on the LQG family."""
    lqg = config["lqg"]
    algorithm = config["algorithm"]
    try:
        agent = LQGAgentParams(
            A=lqg["A"],
            B=lqg["B"],
            C=lqg["C"],
            state_cost=lqg["state_cost"],
            control_cost=lqg["control_cost"],
            terminal_cost=lqg["terminal_cost"],
            x0=lqg["x0"],
        )
        family = LQGFamily(
            horizon=lqg["horizon"],
            params=agent,
            nu=lqg["nu"],
            heterogeneity=lqg["heterogeneity"],
            seed=lqg["family_seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), section="lqg") from exc
    sample_size = algorithm["sample_size"] or None
    report = bias_variance_experiment(
        family,
        n_values=lqg["n_values"],
        checkpoints=lqg["checkpoints"],
        J=lqg["replicates"],
        schedule=_schedule(config),
        seed=config["seed"]["master"],
        reference_iterations=lqg["reference_iterations"],
        sample_size=sample_size,
    )
    paths = report.to_csv(out)
    slopes = report.slopes()
    summary = {
        "slopes": {
            curve: {str(k): v for k, v in values.items()} for curve, values in slopes.items()
        },
        "metadata": report.metadata,
    }
    paths.append(_write_json(os.path.join(out, "summary.json"), summary))
    table = report.to_frames()["slopes"]
    print(table.to_string(index=False, float_format="{:.3f}".format))
    return 0, paths


def cmd_tcl(config: dict, out: str) -> tuple[int, list[str]]:
    """Coordinate a TCL fleet with the unit commitment, one run per volatility."""
    pop = config["population"]
    grid_cfg = config["grid"]
    uc_cfg = config["uc"]
    algorithm = config["algorithm"]
    try:
        grid = TCLGrid(
            dt=grid_cfg["dt"],
            dT=grid_cfg["dT"],
            margin=grid_cfg["margin"],
            horizon=grid_cfg["horizon"],
            n_slots=grid_cfg["slots"],
            max_substeps=grid_cfg["max_substeps"],
            control_levels=grid_cfg["control_levels"],
        )
        base = TCLParams(
            **{
                key: pop[key]
                for key in (
                    "gamma",
                    "x_off",
                    "zeta",
                    "p_on",
                    "alpha",
                    "beta",
                    "x_target",
                    "x_min",
                    "x_max",
                    "terminal_weight",
                )
            },
        )
        population = tcl_population(
            n=pop["n"],
            grid=grid,
            n_types=pop["types"],
            heterogeneity=pop["heterogeneity"],
            seed=pop["seed"],
            base=base,
        )
        nadir = None
        if uc_cfg["nadir"]:
            nadir = NadirLinearization(
                uc_cfg["q_bar"], uc_cfg["nadir_inertia"], uc_cfg["nadir_reserve"]
            )
        overrides = {
            key: value
            for key, value in uc_cfg.items()
            if key not in ("fr_enabled", "nadir", "q_bar", "nadir_inertia", "nadir_reserve")
            and value is not None
        }
        overrides.setdefault("slot_hours", grid.slot_length / 3600.0)
        uc = load_desk_uc(pop["n"], uc_cfg["fr_enabled"], nadir, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if uc.n_slots != grid.n_slots:
        raise ConfigError(
            f"the unit commitment has {uc.n_slots} slots, the grid {grid.n_slots}",
            section="grid",
            key="slots",
        )

    results = []
    for sigma in pop["sigma"]:
        results.append(
            coordination_experiment(
                population,
                uc,
                _schedule(config),
                m=algorithm["sample_size"] or population.n_agents,
                K=algorithm["iterations"],
                seed=config["seed"]["master"],
                sigma=sigma,
                workers=algorithm["workers"],
            )
        )
    paths = write_coordination(results, out)
    paths += [f"{p}.json" for p in paths if os.path.basename(p).startswith("trace_")]
    print("sigma  bau_cost  fs_cost  saving  corr(p, U)")
    for result in results:
        print(
            f"{result.sigma:g}  {result.bau_cost:.6g}  {result.fs_cost:.6g}  "
            f"{result.saving:.4%}  {result.correlation:.3f}"
        )
    return 0, paths


_COMMANDS = {"toy": cmd_toy, "lqg": cmd_lqg, "tcl": cmd_tcl}


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the `uzawa` command."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    started = _now()
    try:
        config, text, path = _load_config(args.config, args.command)
        _apply_overrides(config, args)
        out = config["output"]["directory"]
        os.makedirs(out, exist_ok=True)
        config_hash, snapshot = _snapshot(config, text, out)
        logger.info("Running `%s` with %s", args.command, path)
        status, paths = _COMMANDS[args.command](config, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except UzawaError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1

    manifest = RunManifest(
        command=args.command,
        argv=list(sys.argv[1:] if argv is None else argv),
        config_hash=config_hash,
        seed=config["seed"]["master"],
        versions=_versions(),
        started=started,
        finished=_now(),
    )
    for output in snapshot + paths:
        manifest.add_output(output, out)
    manifest.write(os.path.join(out, "manifest.json"))
    return status
