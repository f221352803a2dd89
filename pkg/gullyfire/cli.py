"""Command line: ``gullyfire <command> --scenario PATH [--out DIR] ...``.

Exit status: 0 when every check passes, 1 when a check fails, 2 for usage
and configuration errors, 3 for numerical failures.
"""

import argparse
import logging
import pathlib
import sys
import time
from collections.abc import Callable

import numpy as np
from pydantic import BaseModel, Field

from gullyfire import config
from gullyfire.config import ConfigurationError
from gullyfire.geometry import GeometryError
from gullyfire.model import Scenario
from gullyfire.outputs import OutputError, RunDirectory
from gullyfire.reduction import convergence_study
from gullyfire.scenario import ScenarioError, load_scenario, scenario_digest
from gullyfire.solver import SolverError, gronwall_report, run_full, run_reduced
from gullyfire.suites import ALL_SUITES, SUITES, CheckResult, convergence_checks, run_suite

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

VERIFY_COMMANDS = {
    "verify-geometry": "geometry",
    "verify-kernel": "kernel",
    "verify-reflection": "reflection",
    "verify-gronwall": "gronwall",
    "norms": "norms",
    "asymptotics": "asymptotics",
    "verify-all": ALL_SUITES,
}


class RunReport(BaseModel):
    command: str
    scenario: str
    scenario_digest: str
    elapsed_seconds: float
    settings: dict = Field(default_factory=dict, description="Numerics and analysis values in force, defaults included.")
    outputs: list[str]
    checks: list[CheckResult]
    passed: bool
    exit_status: int


def _settings(scenario: Scenario) -> dict:
    return {
        "numerics": scenario.numerics.model_dump(mode="json"),
        "analysis": scenario.analysis.model_dump(mode="json", by_alias=True),
    }


def _finish(
    command: str,
    scenario_path: pathlib.Path,
    scenario: Scenario,
    run_dir: RunDirectory,
    checks: list[CheckResult],
    started: float,
) -> RunReport:
    passed = all(check.passed for check in checks)
    report = RunReport(
        command=command,
        scenario=str(scenario_path),
        scenario_digest=scenario_digest(scenario),
        elapsed_seconds=round(time.perf_counter() - started, 3),
        settings=_settings(scenario),
        outputs=[*run_dir.emitted, "run.json"],
        checks=checks,
        passed=passed,
        exit_status=EXIT_PASS if passed else EXIT_CHECK_FAILED,
    )
    run_dir.write_report("run.json", report)
    logger.info(f"{command}: {'pass' if passed else 'FAIL'}, {len(report.outputs)} files in {run_dir.root}")
    return report


def _run_directory(out: pathlib.Path | None, command: str, scenario_path: pathlib.Path) -> RunDirectory:
    return RunDirectory(out or config.output_root() / f"{command}-{scenario_path.stem}")


def _gronwall_checks(label: str, trajectory, scenario: Scenario) -> list[CheckResult]:
    report = gronwall_report(trajectory, scenario.kernel.C_L, scenario.boundary)
    stalled = sum(not snapshot.picard_converged for snapshot in trajectory)
    return [
        CheckResult(name=f"{label} sup bound", passed=report.passed, measured=report.max_ratio, threshold=1 + 1e-6),
        CheckResult(name=f"{label} Picard converged", passed=stalled == 0, measured=float(stalled)),
    ]


def cmd_simulate(
    scenario_path: pathlib.Path, epsilon_index: int, out: pathlib.Path | None = None, *, seed: int | None = None
) -> RunReport:
    """Run the full problem for one ε and write one CSV per output time."""
    started = time.perf_counter()
    scenario = load_scenario(scenario_path, seed)
    epsilons = scenario.epsilon_list
    if not 0 <= epsilon_index < len(epsilons):
        raise ScenarioError(f"--epsilon-index {epsilon_index} outside 0..{len(epsilons) - 1}")
    epsilon = epsilons[epsilon_index]
    trajectory = run_full(scenario, epsilon)

    run_dir = _run_directory(out, "simulate", scenario_path)
    theta = scenario.boundary.theta
    grid = trajectory[0].grid
    sigma = np.repeat(grid.sigma, grid.n_s)
    s = np.tile(grid.s, grid.n_sigma)
    for k, snapshot in enumerate(trajectory):
        values = snapshot.unshifted(theta).ravel()
        run_dir.write_snapshot(f"snapshots/t{k:05d}.csv", ("sigma", "s", "u"), zip(sigma, s, values))
    times = [{"index": k, "t": snapshot.t} for k, snapshot in enumerate(trajectory)]
    run_dir.write_report("snapshots/times.json", {"epsilon": epsilon, "times": times})
    return _finish("simulate", scenario_path, scenario, run_dir, _gronwall_checks(f"eps={epsilon}", trajectory, scenario), started)


def cmd_reduce(scenario_path: pathlib.Path, out: pathlib.Path | None = None, *, seed: int | None = None) -> RunReport:
    """Run the reduced axis problem and write one CSV per output time."""
    started = time.perf_counter()
    scenario = load_scenario(scenario_path, seed)
    trajectory = run_reduced(scenario)

    run_dir = _run_directory(out, "reduce", scenario_path)
    theta = scenario.boundary.theta
    sigma = trajectory[0].grid.sigma
    for k, snapshot in enumerate(trajectory):
        run_dir.write_snapshot(f"reduced/t{k:05d}.csv", ("sigma", "u"), zip(sigma, snapshot.unshifted(theta)))
    times = [{"index": k, "t": snapshot.t} for k, snapshot in enumerate(trajectory)]
    run_dir.write_report("reduced/times.json", {"times": times})
    return _finish("reduce", scenario_path, scenario, run_dir, _gronwall_checks("reduced", trajectory, scenario), started)


def cmd_converge(
    scenario_path: pathlib.Path, out: pathlib.Path | None = None, *, threads: int = 1, seed: int | None = None
) -> RunReport:
    """Run the ε-sweep and write the convergence report."""
    started = time.perf_counter()
    scenario = load_scenario(scenario_path, seed)
    study = convergence_study(scenario, threads=threads)

    run_dir = _run_directory(out, "converge", scenario_path)
    run_dir.write_report("convergence.json", study)
    return _finish("converge", scenario_path, scenario, run_dir, convergence_checks(study), started)


def cmd_verify(
    scenario_path: pathlib.Path,
    suite: str,
    out: pathlib.Path | None = None,
    *,
    threads: int = 1,
    seed: int | None = None,
) -> RunReport:
    """Run one property suite and write its report."""
    if suite not in (*SUITES, ALL_SUITES):
        raise ConfigurationError(f"Unknown suite '{suite}'; choose from {', '.join((*SUITES, ALL_SUITES))}")
    started = time.perf_counter()
    scenario = load_scenario(scenario_path, seed)
    report = run_suite(suite, scenario, threads=threads)

    run_dir = _run_directory(out, f"verify-{suite}", scenario_path)
    run_dir.write_report(f"verify-{suite}.json", report)
    return _finish(f"verify-{suite}", scenario_path, scenario, run_dir, report.checks, started)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gullyfire", description="Nonlocal bushfire in a thin gully: runs and checks.")
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--scenario", type=pathlib.Path, required=True, help="Scenario YAML file")
        sub.add_argument("--out", type=pathlib.Path, default=None, help="Run directory (default under GULLYFIRE_OUTPUT_ROOT)")
        sub.add_argument("--seed", type=int, default=None, help="Override analysis.seed")
        sub.add_argument("--threads", type=int, default=None, help="Worker threads for the epsilon sweep")
        sub.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
        return sub

    add("simulate", "Full problem for one epsilon").add_argument("--epsilon-index", type=int, default=0)
    add("reduce", "Reduced axis problem")
    add("converge", "Epsilon sweep against the refined reduced run")
    for name, suite in VERIFY_COMMANDS.items():
        add(name, f"Run the {suite} suite")
    return parser


def _configure_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else config.log_level()
    if level not in logging.getLevelNamesMapping():
        level = "INFO"
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        threads = args.threads if args.threads is not None else config.worker_threads()
        commands: dict[str, Callable[[], RunReport]] = {
            "simulate": lambda: cmd_simulate(args.scenario, args.epsilon_index, args.out, seed=args.seed),
            "reduce": lambda: cmd_reduce(args.scenario, args.out, seed=args.seed),
            "converge": lambda: cmd_converge(args.scenario, args.out, threads=threads, seed=args.seed),
        }
        for name, suite in VERIFY_COMMANDS.items():
            commands[name] = lambda suite=suite: cmd_verify(args.scenario, suite, args.out, threads=threads, seed=args.seed)
        report = commands[args.command]()
    except (ConfigurationError, OutputError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"gullyfire {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, GeometryError) as e:
        logger.error(f"{args.command}: numerical failure: {e}")
        print(f"gullyfire {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return report.exit_status


if __name__ == "__main__":
    sys.exit(main())
