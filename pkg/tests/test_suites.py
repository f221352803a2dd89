import pytest

from gullyfire.reduction import ENFORCED_MONOTONE, ConvergenceEntry, ConvergenceReport, InteriorWindow
from gullyfire.scenario import load_scenario
from gullyfire.suites import SUITES, convergence_checks, run_suite


@pytest.mark.parametrize("name", ["geometry", "kernel", "reflection"])
def test_static_suites_pass_on_a_bend(circle, name):
    report = run_suite(name, circle)
    assert report.suite == name
    assert report.checks
    assert report.passed, [check.name for check in report.checks if not check.passed]


def test_suite_report_serializes_its_verdict(circle):
    report = run_suite("reflection", circle)
    dumped = report.model_dump(mode="json")
    assert dumped["passed"] is True
    names = [check["name"] for check in dumped["checks"]]
    assert "K and tau at eps=0.1, L=1" in names


def test_unknown_suite():
    assert "asymptotics" in SUITES
    with pytest.raises(KeyError):
        run_suite("thermodynamics", None)


def test_convergence_checks_cover_every_enforced_metric():
    study = ConvergenceReport(
        epsilon_list=[0.2, 0.1, 0.05],
        entries=[
            ConvergenceEntry(epsilon=0.2, sup_error=3.0, grad_error=1.0),
            ConvergenceEntry(epsilon=0.1, sup_error=2.0, grad_error=2.0),
            ConvergenceEntry(epsilon=0.05, error="Linear solve residual too large"),
        ],
        reference="reduced run",
        window=InteriorWindow(sigma_min=0.1, sigma_max=0.9, t0=0.0),
        monotone={"sup_error": False, "grad_error": False, "matched_sup_error": True},
        passed=False,
    )
    checks = {check.name: check for check in convergence_checks(study)}
    assert not checks["full run eps=0.05"].passed
    assert checks["full run eps=0.05"].note == "Linear solve residual too large"
    assert checks["full run eps=0.2"].passed
    assert not checks["sup_error decreasing in epsilon"].passed
    assert not checks["grad_error decreasing in epsilon"].passed
    assert "matched_sup_error decreasing in epsilon" not in checks
    assert set(ENFORCED_MONOTONE) >= {"sup_error", "grad_error", "hess_error", "dt_error", "residual_max"}


@pytest.fixture
def straight_yaml(scenarios_dir):
    return load_scenario(scenarios_dir / "straight.yaml")


def test_gronwall_suite_on_the_straight_gully(straight_yaml):
    report = run_suite("gronwall", straight_yaml)
    checks = {check.name: check for check in report.checks}
    for eps in straight_yaml.epsilon_list:
        assert checks[f"sup bound eps={eps}"].measured <= 1 + 1e-6
        # inlet 0.3, bump and zero outlet are all nonnegative
        assert checks[f"comparison eps={eps}"].passed
        assert checks[f"Picard converged eps={eps}"].passed
    assert checks["sup bound reduced"].passed
    assert report.passed, [check.name for check in report.checks if not check.passed]


def test_norms_suite_on_the_straight_gully(straight_yaml):
    report = run_suite("norms", straight_yaml)
    checks = {check.name: check for check in report.checks}
    ratio = checks["regularity probe max/min ratio"]
    assert ratio.threshold == 10.0
    assert ratio.measured <= ratio.threshold
    for eps in straight_yaml.epsilon_list:
        # s-independent runs have no transverse gap
        assert checks[f"transverse gap eps={eps}"].measured <= 1e-8
    assert report.passed, [check.name for check in report.checks if not check.passed]


def test_asymptotics_suite_on_the_straight_gully(straight_yaml):
    report = run_suite("asymptotics", straight_yaml)
    names = [check.name for check in report.checks]
    for eps in straight_yaml.epsilon_list:
        assert f"Laplace-Beltrami gap slope eps={eps}" in names
        assert f"full run eps={eps}" in names
    for metric in ENFORCED_MONOTONE:
        assert f"{metric} decreasing in epsilon" in names
    assert report.passed, [check.name for check in report.checks if not check.passed]


@pytest.mark.timeout(300)
def test_all_suites_in_one_report(straight_yaml):
    report = run_suite("all", straight_yaml)
    assert report.suite == "all"
    prefixes = {check.name.split(": ", 1)[0] for check in report.checks}
    assert prefixes == set(SUITES)
    assert "gronwall: sup bound reduced" in {check.name for check in report.checks}
    assert report.passed, [check.name for check in report.checks if not check.passed]
