"""Property suites behind the verify commands.

Each suite takes a Scenario and returns a SuiteReport of named checks with
the measured value and the threshold it was held to.
"""

import logging
import math
from collections.abc import Callable

import numpy as np
from pydantic import BaseModel, computed_field

from gullyfire.analysis import (
    NormRequest,
    PairSet,
    SampleCloud,
    fold,
    holder_seminorm_estimate,
    reflect_extend,
    reflection_distance_check,
    reflection_params,
    regularity_probe,
)
from gullyfire.geometry import (
    fermi_forward,
    fermi_inverse,
    jacobian_factor,
    offset_mean_curvature,
    offset_normal_check,
)
from gullyfire.model import Scenario, time_holder_quotient, verify_kernel_assumptions
from gullyfire.reduction import (
    ENFORCED_MONOTONE,
    ConvergenceReport,
    InteriorWindow,
    avg_gap_report,
    convergence_study,
    lb_gap_report,
)
from gullyfire.solver import (
    FieldSnapshot,
    SolverConfig,
    gronwall_report,
    picard_dt_bound,
    run_full,
    run_reduced,
)

logger = logging.getLogger(__name__)

SUITES = ("geometry", "kernel", "reflection", "gronwall", "norms", "asymptotics")
ALL_SUITES = "all"


class CheckResult(BaseModel):
    name: str
    passed: bool
    measured: float | None = None
    threshold: float | None = None
    note: str | None = None


class SuiteReport(BaseModel):
    suite: str
    checks: list[CheckResult]

    @computed_field
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def _at_most(name: str, measured: float, threshold: float, note: str | None = None) -> CheckResult:
    return CheckResult(name=name, passed=bool(measured <= threshold), measured=measured, threshold=threshold, note=note)


def _relative(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return 0.0
    return abs(a - b) / max(abs(b), 1e-300)


def _runs(scenario: Scenario) -> dict[float, list[FieldSnapshot]]:
    config = SolverConfig.from_scenario(scenario, strict_gronwall=False)
    return {eps: run_full(scenario, eps, config) for eps in scenario.epsilon_list}


# -- geometry --------------------------------------------------------------------


def geometry_suite(scenario: Scenario) -> SuiteReport:
    axis = scenario.axis
    length = axis.length
    rng = np.random.default_rng(scenario.analysis.seed)
    checks = []

    dense = np.linspace(0.0, length, 100_001)
    kappa_max = float(np.max(np.abs(axis.curvature(dense))))
    oracle = math.inf if kappa_max <= 1e-14 else 1.0 / kappa_max
    checks.append(_at_most("L0 against dense sampling", _relative(axis.min_curvature_radius, oracle), 1e-6))

    for eps in scenario.epsilon_list:
        chart = scenario.chart(eps)
        grid = scenario.grid(eps)
        area = float(grid.weights.sum())
        checks.append(_at_most(f"area eps={eps}", _relative(area, 2 * eps * length), 1e-8, "band area is 2·ε·length"))

        bend = eps / chart.L0
        low, high = float(grid.jacobian.min()), float(grid.jacobian.max())
        inside = low > 0 and low >= 1 - bend - 1e-12 and high <= 1 + bend + 1e-12
        checks.append(CheckResult(name=f"jacobian bounds eps={eps}", passed=inside, measured=low, threshold=1 - bend))

        sigma = rng.uniform(0.0, length, 1000)
        s = rng.uniform(-eps, eps, 1000)
        points = fermi_forward(chart, sigma, s)
        drift = 0.0
        for point in points:
            back = fermi_inverse(chart, point)
            drift = max(drift, float(np.linalg.norm(fermi_forward(chart, back.sigma, back.s) - point)))
        checks.append(_at_most(f"round trip eps={eps}", drift, 1e-9 * length))

        deviation = max(offset_normal_check(chart, a, b) for a, b in zip(sigma[:200], s[:200]))
        checks.append(_at_most(f"Gauss lemma eps={eps}", float(deviation), 1e-6))

        identity = np.abs(offset_mean_curvature(chart, sigma, s) * jacobian_factor(chart, sigma, s) - axis.curvature(sigma))
        checks.append(_at_most(f"offset curvature identity eps={eps}", float(identity.max()), 1e-12))
    return SuiteReport(suite="geometry", checks=checks)


# -- kernel ----------------------------------------------------------------------


def kernel_suite(scenario: Scenario) -> SuiteReport:
    checks = []
    masses = []
    for eps in scenario.epsilon_list:
        report = verify_kernel_assumptions(
            scenario.kernel, scenario.chart(eps), eps, seed=scenario.analysis.seed, alpha=scenario.analysis.alpha
        )
        masses.append(report.sup_mass)
        checks.append(_at_most(f"sup mass eps={eps}", report.sup_mass, scenario.kernel.C_L))
        checks.append(_at_most(f"Hölder quotient eps={eps}", report.holder_quotient, scenario.kernel.C_L))

    L0 = scenario.axis.min_curvature_radius
    bend = max(scenario.epsilon_list) / L0
    limit = (1 + bend) / (1 - bend)
    ratio = 1.0 if max(masses) == 0.0 else max(masses) / min(masses)
    checks.append(_at_most("cross-epsilon mass ratio", ratio, limit))
    return SuiteReport(suite="kernel", checks=checks)


# -- reflection ------------------------------------------------------------------


def _probe_field(grid) -> np.ndarray:
    x = grid.sigma[:, None] / grid.chart.total_length
    t = grid.s[None, :] / grid.epsilon
    return np.sin(math.pi * x) + 0.5 * t + 0.25 * t**2


def reflection_suite(scenario: Scenario) -> SuiteReport:
    checks = []
    hand = reflection_params(0.1, 1.0)
    checks.append(CheckResult(name="K and tau at eps=0.1, L=1", passed=hand.frak_K == 2 and math.isclose(hand.tau, 0.5), measured=hand.tau, threshold=0.5))

    L = scenario.domain.L
    for eps in scenario.epsilon_list:
        setup = reflection_params(eps, L)
        ratio = setup.tau / L
        checks.append(CheckResult(name=f"tau/L in (1/3, 1] eps={eps}", passed=1 / 3 < ratio <= 1 + 1e-12, measured=ratio))

        s = np.linspace(-3 * eps, 3 * eps, 241)
        period = float(np.max(np.abs(fold(s + 4 * eps, eps) - fold(s, eps))))
        checks.append(_at_most(f"fold period eps={eps}", period, 1e-12 * eps))
        branches = abs(fold(0.5 * eps, eps) - 0.5 * eps) + abs(fold(1.5 * eps, eps) - 0.5 * eps)
        checks.append(_at_most(f"fold branches eps={eps}", branches, 1e-12 * eps))

        grid = scenario.grid(eps)
        field = FieldSnapshot(grid, 0.0, _probe_field(grid))
        extended = reflect_extend(field, setup)
        values = extended.values
        step = grid.n_s - 1
        evenness = 0.0
        for c in range(step, 2 * setup.frak_K * step + 1, step):
            for h in range(1, step + 1):
                evenness = max(evenness, float(np.max(np.abs(values[:, c + h] - values[:, c - h]))))
        checks.append(_at_most(f"evenness across V_m interfaces eps={eps}", evenness, 0.0))
        preserved = values.max() == field.values.max() and values.min() == field.values.min()
        checks.append(CheckResult(name=f"sup and min preserved eps={eps}", passed=bool(preserved)))

        request = NormRequest(a=0.5, b=0.0, pair_budget=scenario.analysis.pair_budget, seed=scenario.analysis.seed)
        thin = SampleCloud.from_samples(grid.points.reshape(-1, 2), field.values.ravel())
        wide = SampleCloud.from_samples(extended.grid.points.reshape(-1, 2), values.ravel())
        pairs = PairSet.build(thin, request.pair_budget, request.seed)
        shift = setup.frak_K * step

        def to_wide(k: np.ndarray) -> np.ndarray:
            return (k // grid.n_s) * values.shape[1] + k % grid.n_s + shift

        matched = PairSet(to_wide(pairs.first), to_wide(pairs.second))
        inner = holder_seminorm_estimate(thin, None, 0.5, request, pairs=pairs)
        outer = holder_seminorm_estimate(wide, None, 0.5, request, pairs=matched.union(PairSet.build(wide, request.pair_budget, request.seed)))
        checks.append(_at_most(f"restriction bound eps={eps}", inner, outer * (1 + 1e-9)))

        distance = reflection_distance_check(setup, grid)
        checks.append(CheckResult(name=f"reflected distances eps={eps}", passed=distance.passed, measured=distance.min_ratio, threshold=distance.margin))
    return SuiteReport(suite="reflection", checks=checks)


# -- gronwall --------------------------------------------------------------------


def gronwall_suite(scenario: Scenario, runs: dict[float, list[FieldSnapshot]] | None = None) -> SuiteReport:
    runs = runs or _runs(scenario)
    boundary, C_L = scenario.boundary, scenario.kernel.C_L
    checks = []
    nonnegative = (
        np.all(boundary.initial_values(np.linspace(0.0, scenario.axis.length, 257), scenario.axis.length) >= 0)
        and all(min(boundary.dirichlet(t)) >= 0 for t in np.linspace(0.0, scenario.domain.T, 65))
    )
    for eps, trajectory in runs.items():
        report = gronwall_report(trajectory, C_L, boundary)
        checks.append(_at_most(f"sup bound eps={eps}", report.max_ratio, 1 + 1e-6))
        if nonnegative:
            lowest = min(float(snapshot.values.min()) for snapshot in trajectory)
            checks.append(CheckResult(name=f"comparison eps={eps}", passed=lowest >= -1e-12, measured=lowest, threshold=-1e-12))
        grid = trajectory[0].grid
        limit = picard_dt_bound(C_L, scenario.reaction.c_psi, min(grid.h_sigma, grid.h_s))
        if scenario.numerics.dt <= limit:
            contracting = all(
                all(a > b for a, b in zip(snapshot.picard_changes[1:], snapshot.picard_changes[2:]))
                for snapshot in trajectory
            )
            checks.append(CheckResult(name=f"Picard contraction eps={eps}", passed=contracting))
        stalled = sum(not snapshot.picard_converged for snapshot in trajectory)
        checks.append(CheckResult(name=f"Picard converged eps={eps}", passed=stalled == 0, measured=float(stalled)))

    reduced = run_reduced(scenario, SolverConfig.from_scenario(scenario, strict_gronwall=False))
    checks.append(_at_most("sup bound reduced", gronwall_report(reduced, C_L, boundary).max_ratio, 1 + 1e-6))

    lam = scenario.analysis.lambda_
    for name, profile in (("inlet", boundary.inlet), ("outlet", boundary.outlet)):
        quotient = time_holder_quotient(profile, scenario.domain.T, lam)
        checks.append(CheckResult(name=f"{name} Hölder-{lam} in time", passed=math.isfinite(quotient), measured=quotient))
    return SuiteReport(suite="gronwall", checks=checks)


# -- norms -----------------------------------------------------------------------


def norms_suite(scenario: Scenario, runs: dict[float, list[FieldSnapshot]] | None = None) -> SuiteReport:
    runs = runs or _runs(scenario)
    analysis = scenario.analysis
    request = NormRequest(
        a=2 + analysis.alpha,
        b=-analysis.lambda_,
        delta_levels=analysis.delta_levels,
        pair_budget=analysis.pair_budget,
        seed=analysis.seed,
    )
    probe = regularity_probe(runs, analysis.lambda_, analysis.alpha, request)
    checks = [
        CheckResult(
            name="regularity probe max/min ratio",
            passed=probe.passed,
            measured=probe.max_min_ratio,
            threshold=probe.threshold,
            note=probe.threshold_source,
        )
    ]
    gap_request = NormRequest(a=analysis.lambda_, b=0.0, pair_budget=analysis.pair_budget, seed=analysis.seed)
    for eps, trajectory in runs.items():
        chart = trajectory[0].grid.chart
        reports = [avg_gap_report(snapshot, chart, 1 + analysis.lambda_, gap_request) for snapshot in trajectory]
        worst = max(reports, key=lambda r: r.max_gap - r.bound)
        checks.append(
            CheckResult(
                name=f"transverse gap eps={eps}",
                passed=all(r.passed for r in reports),
                measured=worst.max_gap,
                threshold=worst.bound * 1.05,
            )
        )
    return SuiteReport(suite="norms", checks=checks)


# -- asymptotics -----------------------------------------------------------------


def convergence_checks(study: ConvergenceReport) -> list[CheckResult]:
    """One check per ε run, plus one per metric that must decrease along the widths."""
    checks = [
        CheckResult(name=f"full run eps={entry.epsilon}", passed=entry.error is None, note=entry.error)
        for entry in study.entries
    ]
    for name in ENFORCED_MONOTONE:
        if name in study.monotone:
            checks.append(CheckResult(name=f"{name} decreasing in epsilon", passed=study.monotone[name]))
    return checks


def asymptotics_suite(scenario: Scenario, *, threads: int = 1) -> SuiteReport:
    checks = []
    axis = scenario.axis
    window = InteriorWindow.for_scenario(scenario)
    dense = np.linspace(0.0, axis.length, 4001)
    kappa = axis.curvature(dense)
    slope_kappa = float(np.max(np.abs(np.gradient(kappa, dense))))
    config = SolverConfig.from_scenario(scenario, strict_gronwall=False)
    for eps in scenario.epsilon_list:
        trajectory = run_full(scenario, eps, config, output_every=max(scenario.steps, 1))
        final = trajectory[-1]
        bend = eps / axis.min_curvature_radius
        constant = 2 * (2 * float(np.max(np.abs(kappa))) + slope_kappa) / (1 - bend) ** 3
        report = lb_gap_report(final, final.grid.chart, final.grid, window.sigma_min)
        checks.append(
            CheckResult(
                name=f"Laplace-Beltrami gap slope eps={eps}",
                passed=report.slope_ratio <= constant + 1e-12,
                measured=report.slope_ratio,
                threshold=constant,
            )
        )

    checks += convergence_checks(convergence_study(scenario, threads=threads))
    return SuiteReport(suite="asymptotics", checks=checks)


def all_suites(scenario: Scenario, *, threads: int = 1) -> SuiteReport:
    """Every suite in SUITES order; the gronwall and norms suites share one set of full runs."""
    runs = _runs(scenario)
    reports = [
        geometry_suite(scenario),
        kernel_suite(scenario),
        reflection_suite(scenario),
        gronwall_suite(scenario, runs),
        norms_suite(scenario, runs),
        asymptotics_suite(scenario, threads=threads),
    ]
    checks = [
        check.model_copy(update={"name": f"{report.suite}: {check.name}"}) for report in reports for check in report.checks
    ]
    return SuiteReport(suite="all", checks=checks)


def run_suite(name: str, scenario: Scenario, *, threads: int = 1) -> SuiteReport:
    """Run one suite by name, or ``"all"`` of them into a single report."""
    suites: dict[str, Callable[[Scenario], SuiteReport]] = {
        "geometry": geometry_suite,
        "kernel": kernel_suite,
        "reflection": reflection_suite,
        "gronwall": gronwall_suite,
        "norms": norms_suite,
        "asymptotics": lambda s: asymptotics_suite(s, threads=threads),
        ALL_SUITES: lambda s: all_suites(s, threads=threads),
    }
    if name not in suites:
        raise KeyError(name)
    logger.info(f"Running {name} suite")
    report = suites[name](scenario)
    failed = [check.name for check in report.checks if not check.passed]
    if failed:
        logger.warning(f"{name} suite: {len(failed)} failing checks: {', '.join(failed)}")
    return report
