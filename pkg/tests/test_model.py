import math

import numpy as np
import pydantic
import pytest

from gullyfire.grid import build_grid
from gullyfire.model import (
    BoundaryData,
    InitialProfile,
    KernelSpec,
    ModelError,
    ReactionSpec,
    TimeProfile,
    kernel_full,
    kernel_profile,
    kernel_reduced,
    nonlocal_term,
    nonlocal_term_reduced,
    psi_eval,
    time_holder_quotient,
    verify_kernel_assumptions,
)
from gullyfire.scenario import ScenarioError, parse_scenario
from gullyfire.solver import run_full

GAUSSIAN = KernelSpec(shape="gaussian", A=1.0, r=0.2, C_L=2.0)


def test_kernel_profiles():
    assert kernel_profile(GAUSSIAN, 0.0) == pytest.approx(1.0)
    assert kernel_profile(GAUSSIAN, 0.2) == pytest.approx(math.exp(-0.5))
    tophat = KernelSpec(shape="tophat", A=0.5, r=0.1, C_L=1.0)
    np.testing.assert_array_equal(kernel_profile(tophat, [-0.05, 0.1, 0.11]), [0.5, 0.5, 0.0])
    assert kernel_reduced(GAUSSIAN, 0.3, 0.1) == kernel_reduced(GAUSSIAN, 0.1, 0.3)


def test_full_kernel_depends_on_foot_points_only(circle):
    chart = circle.chart(0.04)
    x = chart.curve.frame(0.3).point
    y_near = chart.curve.frame(0.5).point + 0.03 * chart.curve.frame(0.5).normal
    y_far = chart.curve.frame(0.5).point - 0.03 * chart.curve.frame(0.5).normal
    expected = math.exp(-(0.2**2) / (2 * 0.2**2)) / 0.08
    assert kernel_full(circle.kernel, chart, x, y_near) == pytest.approx(expected, rel=1e-9)
    assert kernel_full(circle.kernel, chart, x, y_far) == pytest.approx(expected, rel=1e-9)


def test_psi_saturates():
    spec = ReactionSpec(c_psi=0.5, M=2.0)
    grad = np.array([[3.0, 4.0], [0.6, 0.8], [0.0, 0.0]])
    np.testing.assert_allclose(psi_eval(spec, grad), [1.0, 0.5, 0.0])


def test_nonlocal_term_matches_the_double_sum(circle):
    chart = circle.chart(0.04)
    grid = build_grid(chart, 11, 3)
    values = np.sin(5 * grid.sigma)[:, None] + grid.s[None, :] / 0.04
    points = grid.points.reshape(-1, 2)
    burning = (grid.weights * np.maximum(values, 0.0)).ravel()
    brute = np.array([
        sum(kernel_full(circle.kernel, chart, x, y) * mass for y, mass in zip(points, burning))
        for x in points
    ]).reshape(grid.shape)
    np.testing.assert_allclose(nonlocal_term(grid, circle.kernel, values), brute, rtol=1e-8)


def test_nonlocal_term_of_a_constant_field(straight):
    grid = straight.grid(0.1)
    term = nonlocal_term(grid, straight.kernel, np.full(grid.shape, 2.0))
    np.testing.assert_allclose(term, np.repeat(term[:, :1], grid.n_s, axis=1))
    reduced = straight.reduced_grid()
    np.testing.assert_allclose(nonlocal_term_reduced(reduced, straight.kernel, np.full(grid.n_sigma, 2.0)), term[:, 0], rtol=1e-12)


def test_nonlocal_term_is_lipschitz_with_the_declared_constant(circle):
    grid = circle.grid(0.04)
    reduced = circle.reduced_grid()
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = rng.normal(size=grid.shape)
        v = u + rng.normal(scale=0.5, size=grid.shape)
        gap = np.max(np.abs(nonlocal_term(grid, circle.kernel, u) - nonlocal_term(grid, circle.kernel, v)))
        assert gap <= circle.kernel.C_L * np.max(np.abs(u - v))
        a, b = u[:, 0], v[:, 0]
        gap = np.max(np.abs(nonlocal_term_reduced(reduced, circle.kernel, a) - nonlocal_term_reduced(reduced, circle.kernel, b)))
        assert gap <= circle.kernel.C_L * np.max(np.abs(a - b))


def test_psi_is_lipschitz_in_the_gradient():
    spec = ReactionSpec(c_psi=0.7, M=2.0)
    rng = np.random.default_rng(5)
    p = rng.uniform(-6.0, 6.0, size=(2000, 2))
    q = p + rng.normal(scale=rng.uniform(0.01, 3.0, size=(2000, 1)), size=(2000, 2))
    gap = np.abs(psi_eval(spec, p) - psi_eval(spec, q))
    assert np.all(gap <= spec.c_psi * np.linalg.norm(p - q, axis=1) + 1e-15)
    assert np.all(psi_eval(spec, p) <= spec.c_psi * spec.M)


def test_threshold_shift_leaves_the_shifted_run_unchanged(make_scenario):
    def shifted(c: float):
        return make_scenario(
            boundary={
                "theta": c,
                "inlet": {"kind": "constant", "value": 0.2 + c},
                "outlet": {"kind": "constant", "value": c},
                "initial": {"kind": "linear", "start": 0.2 + c, "end": c},
            }
        )

    base = run_full(shifted(0.0), 0.1)
    for c in (0.5, -0.3):
        other = run_full(shifted(c), 0.1)
        for a, b in zip(base, other):
            np.testing.assert_allclose(b.values, a.values, atol=1e-12)
            np.testing.assert_allclose(b.unshifted(c) - a.unshifted(0.0), c, atol=1e-12)


def test_nonlocal_term_sees_only_the_burning_part(straight):
    grid = straight.grid(0.1)
    cold = -np.ones(grid.shape)
    assert np.all(nonlocal_term(grid, straight.kernel, cold) == 0.0)

    rng = np.random.default_rng(0)
    u = rng.normal(size=grid.shape)
    v = u + rng.uniform(0, 1, size=grid.shape)
    assert np.all(nonlocal_term(grid, straight.kernel, u) <= nonlocal_term(grid, straight.kernel, v) + 1e-15)


def test_verify_kernel_assumptions(circle):
    report = verify_kernel_assumptions(circle.kernel, circle.chart(0.04), 0.04, alpha=0.3)
    assert report.passed
    # a Gaussian of height A and width r carries mass A·r·√(2π) on the whole line
    assert report.sup_mass <= circle.kernel.A * 0.2 * math.sqrt(2 * math.pi) * (1 + 1e-3)

    heavy = circle.kernel.model_copy(update={"A": 10.0})
    assert not verify_kernel_assumptions(heavy, circle.chart(0.04), 0.04, alpha=0.3).passed


def test_time_profiles():
    ramp = TimeProfile(kind="ramp", value=1.0, rate=2.0)
    assert ramp(0.5) == pytest.approx(2.0)
    wave = TimeProfile(kind="sinusoid", value=0.0, amplitude=1.0, frequency=0.25)
    assert wave(1.0) == pytest.approx(1.0)
    with pytest.raises(pydantic.ValidationError, match="needs 'rate'"):
        TimeProfile(kind="ramp", value=1.0)
    with pytest.raises(pydantic.ValidationError, match="does not take 'rate'"):
        TimeProfile(kind="constant", value=1.0, rate=1.0)
    # a ramp is Lipschitz, so its λ-quotient on [0, 1] is the rate at the full span
    assert time_holder_quotient(ramp, 1.0, 0.2) == pytest.approx(2.0, rel=1e-12)


def test_initial_profiles_and_threshold_shift():
    boundary = BoundaryData(
        theta=0.5,
        inlet=TimeProfile(kind="constant", value=1.0),
        outlet=TimeProfile(kind="constant", value=0.0),
        initial=InitialProfile(kind="sine", amplitude=2.0, mode=1),
    )
    assert boundary.dirichlet(0.3) == (0.5, -0.5)
    values = boundary.initial_values(np.array([0.0, 1.0, 2.0]), 2.0)
    np.testing.assert_allclose(values, [-0.5, 1.5, -0.5], atol=1e-15)
    linear = InitialProfile(kind="linear", start=1.0, end=3.0)
    np.testing.assert_allclose(linear(np.array([0.0, 0.5]), 1.0), [1.0, 2.0])


def test_scenario_accessors(circle):
    assert circle.epsilon_list == [0.08, 0.04, 0.02]
    assert circle.steps == 10
    assert circle.epsilon_index(0.04) == 1
    assert circle.n_s_for(0.02) == 5
    with pytest.raises(ModelError):
        circle.epsilon_index(0.05)
    assert circle.with_seed(9).analysis.seed == 9
    assert circle.grid(0.04).shape == (21, 5)


@pytest.mark.parametrize(
    "sections, match",
    [
        ({"domain": {"epsilon_list": [0.1, 0.2]}}, "strictly decreasing"),
        ({"domain": {"L": 0.05}}, r"domain\.epsilon_list\.0"),
        ({"numerics": {"n_s": 4}}, r"numerics\.n_s\.0"),
        ({"numerics": {"n_s": [5, 5]}}, "one entry per epsilon"),
        ({"numerics": {"dt": 3e-3}}, "must divide"),
        ({"numerics": {"dt": 1e-3, "theta_scheme": 0.5}}, "positivity limit"),
        ({"analysis": {"lambda": 1.5}}, "analysis.lambda"),
        ({"kernel": {"shape": "cosine"}}, "kernel.shape"),
    ],
)
def test_invalid_scenarios_name_the_key(make_document, sections, match):
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(make_document(**sections), "bad.yaml")


def test_tube_must_fit_inside_the_bend(make_document, quarter_circle):
    with pytest.raises(ScenarioError, match="domain.L: 1.5 must be below the minimum curvature radius"):
        parse_scenario(make_document(curve=quarter_circle, domain={"L": 1.5, "epsilon_list": [0.1]}))


def test_unknown_keys_rejected(make_document):
    doc = make_document()
    doc["numerics"]["solver"] = "cg"
    with pytest.raises(ScenarioError, match="numerics.solver"):
        parse_scenario(doc)
