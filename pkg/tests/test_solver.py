import math

import numpy as np
import pytest

from gullyfire.geometry import CurveSpec, FermiChart
from gullyfire.grid import build_grid
from gullyfire.model import ModelError
from gullyfire.scenario import load_scenario
from gullyfire.solver import (
    FullStepper,
    SolverConfig,
    assemble_axis_diffusion,
    assemble_diffusion,
    euclidean_gradient,
    gronwall_report,
    initial_full_state,
    initial_reduced_state,
    picard_dt_bound,
    run_full,
    run_reduced,
    step_full,
    step_reduced,
    uniqueness_gap,
)

HEAT = {
    "domain": {"epsilon_list": [0.1], "T": 0.1},
    "kernel": {"A": 0.0, "C_L": 1.0},
    "reaction": {"c_psi": 0.0},
    "boundary": {"initial": {"kind": "sine", "amplitude": 1.0, "mode": 1}},
}


def annulus_grid(n_sigma: int, n_s: int):
    chart = FermiChart.build(CurveSpec(kind="circular_arc", params={"radius": 2.0, "span": math.pi / 2}), 0.5)
    return build_grid(chart, n_sigma, n_s)


def annulus_error(n_sigma: int, n_s: int) -> float:
    grid = annulus_grid(n_sigma, n_s)
    x, y = grid.points[..., 0], grid.points[..., 1]
    f = np.exp(x) * np.cos(2 * y)
    laplacian = assemble_diffusion(grid).apply(f)
    inner = (slice(1, -1), slice(1, -1))
    return float(np.max(np.abs(laplacian[inner] + 3 * f[inner])))


def test_laplacian_is_second_order_on_an_annulus():
    errors = [annulus_error(41, 11), annulus_error(81, 21), annulus_error(161, 41)]
    assert errors[0] < 1.0
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert min(orders) >= 1.8, orders


@pytest.mark.parametrize("n_sigma, n_s", [(41, 11), (81, 21), (161, 41)])
def test_laplacian_of_r_squared_on_an_annulus(n_sigma, n_s):
    grid = annulus_grid(n_sigma, n_s)
    # the inward normal points at the centre, a radius away from every axis node
    center = grid.points[0, grid.n_s // 2] + 2.0 * grid.normal[0]
    r_squared = np.sum((grid.points - center) ** 2, axis=-1)
    np.testing.assert_allclose(np.sqrt(r_squared), np.broadcast_to(2.0 - grid.s, grid.shape), atol=1e-10)
    laplacian = assemble_diffusion(grid).apply(r_squared)
    # the flux form is exact on r², so every refinement sits at roundoff
    np.testing.assert_allclose(laplacian[1:-1, 1:-1], 4.0, atol=1e-8)


def test_laplacian_of_a_quadratic_on_a_straight_band(straight):
    grid = straight.grid(0.1)
    values = grid.sigma[:, None] ** 2 + grid.s[None, :] ** 2
    laplacian = assemble_diffusion(grid).apply(values)
    np.testing.assert_allclose(laplacian[1:-1, 1:-1], 4.0, rtol=1e-9)


def test_dirichlet_rows(straight):
    grid = straight.grid(0.1)
    operator = assemble_diffusion(grid)
    flat = grid.dirichlet_mask.ravel()
    assert operator.laplacian[np.flatnonzero(flat)].nnz == 0
    matrix = operator.matrix.toarray()
    np.testing.assert_array_equal(matrix[flat][:, flat], np.eye(flat.sum()))
    # constants lie in the kernel of the interior rows
    np.testing.assert_allclose(operator.apply(np.ones(grid.shape)), 0.0, atol=1e-9)

    reduced = straight.reduced_grid()
    axis = assemble_axis_diffusion(reduced)
    assert axis.laplacian[[0, reduced.n_sigma - 1]].nnz == 0
    np.testing.assert_allclose(axis.apply(reduced.sigma**2)[1:-1], 2.0, rtol=1e-9)


def test_gradient_of_a_linear_field_on_a_circle(circle):
    grid = circle.grid(0.04)
    values = 3.0 * grid.points[..., 0] - grid.points[..., 1]
    gradient = euclidean_gradient(grid, values)
    # the hillside rows carry the mirror condition, so compare inside
    np.testing.assert_allclose(gradient[:, 1:-1, 0], 3.0, atol=2e-2)
    np.testing.assert_allclose(gradient[:, 1:-1, 1], -1.0, atol=2e-2)


@pytest.mark.timeout(60)
def test_heat_oracle_full_and_reduced(scenarios_dir):
    scenario = load_scenario(scenarios_dir / "heat.yaml")
    trajectory = run_full(scenario, 0.1)
    assert len(trajectory) == 11
    final = trajectory[-1]
    assert final.t == pytest.approx(0.1)
    exact = math.exp(-math.pi**2 * 0.1) * np.sin(math.pi * final.grid.sigma)
    assert np.max(np.abs(final.values - exact[:, None])) <= 5e-3

    reduced = run_reduced(scenario)[-1]
    assert np.max(np.abs(reduced.values - exact)) <= 5e-3


def test_halving_dt_halves_the_time_error(make_scenario):
    errors = []
    for dt in (1e-3, 5e-4):
        scenario = make_scenario(numerics={"n_sigma": 401, "dt": dt}, **HEAT)
        final = run_reduced(scenario)[-1]
        exact = math.exp(-math.pi**2 * 0.1) * np.sin(math.pi * final.grid.sigma)
        errors.append(float(np.max(np.abs(final.values - exact))))
    assert 1.8 <= errors[0] / errors[1] <= 2.2


def test_insulated_gully_conserves_heat(make_scenario, quarter_circle):
    scenario = make_scenario(
        curve=quarter_circle,
        domain={"L": 0.2, "epsilon_list": [0.1]},
        kernel={"A": 0.0},
        reaction={"c_psi": 0.0},
    )
    grid = scenario.grid(0.1, insulated_terminals=True)
    stepper = FullStepper(scenario, grid, SolverConfig.from_scenario(scenario))
    state = initial_full_state(scenario, grid)
    total = float(np.sum(grid.weights * state.values))
    for _ in range(20):
        state = stepper.step(state)
    assert float(np.sum(grid.weights * state.values)) == pytest.approx(total, rel=1e-11)
    assert state.t == pytest.approx(0.02)


def test_zero_data_stays_zero(scenarios_dir):
    scenario = load_scenario(scenarios_dir / "zero.yaml")
    for snapshot in run_full(scenario, 0.05):
        assert np.all(snapshot.values == 0.0)
    for snapshot in run_reduced(scenario):
        assert np.all(snapshot.values == 0.0)


def test_single_steps_match_the_run(straight):
    config = SolverConfig.from_scenario(straight)
    grid = straight.grid(0.1)
    state = step_full(initial_full_state(straight, grid), straight, config)
    np.testing.assert_allclose(state.values, run_full(straight, 0.1, output_every=1)[1].values, atol=1e-14)
    assert state.picard_converged
    # the documented dt bound makes every Picard change smaller than the last
    assert config.dt <= picard_dt_bound(2.0, 0.5, min(grid.h_sigma, grid.h_s))
    assert all(a > b for a, b in zip(state.picard_changes[1:], state.picard_changes[2:]))

    reduced = step_reduced(initial_reduced_state(straight, straight.reduced_grid()), straight, config)
    assert reduced.t == pytest.approx(1e-3)


def test_terminal_values_track_the_boundary_data(make_scenario):
    scenario = make_scenario(boundary={
        "theta": 0.2,
        "inlet": {"kind": "ramp", "value": 0.5, "rate": 10.0},
        "outlet": {"kind": "constant", "value": 0.1},
    })
    final = run_full(scenario, 0.1)[-1]
    np.testing.assert_allclose(final.values[0], 0.5 + 10.0 * 0.01 - 0.2, atol=1e-14)
    np.testing.assert_allclose(final.values[-1], 0.1 - 0.2, atol=1e-14)
    np.testing.assert_allclose(final.unshifted(0.2)[-1], 0.1, atol=1e-14)


def test_gronwall_and_uniqueness_reports(make_scenario):
    hot = make_scenario(boundary={"inlet": {"kind": "constant", "value": 0.3}})
    warm = make_scenario(boundary={"inlet": {"kind": "constant", "value": 0.31}})
    a, b = run_full(hot, 0.05), run_full(warm, 0.05)
    report = gronwall_report(a, hot.kernel.C_L, hot.boundary)
    assert report.passed and 0 < report.max_ratio <= 1 + 1e-6
    gap = uniqueness_gap(a, b, hot.kernel.C_L, hot.reaction.c_psi, hot.boundary, warm.boundary)
    assert gap.passed
    assert gap.rate == pytest.approx(2.5)


def test_run_refuses_a_kernel_above_its_declared_bound(make_scenario):
    scenario = make_scenario(kernel={"A": 10.0})
    with pytest.raises(ModelError, match="refusing to run"):
        run_full(scenario, 0.1)
    with pytest.raises(ModelError, match="refusing to run"):
        run_reduced(scenario)


def test_unknown_epsilon_rejected(straight):
    with pytest.raises(ModelError, match="not in the scenario list"):
        run_full(straight, 0.07)


def test_config_overrides(straight):
    config = SolverConfig.from_scenario(straight, dt=5e-4, strict_gronwall=False)
    assert config.dt == 5e-4 and config.theta == 1.0 and not config.strict_gronwall
    assert config.picard_tol == straight.numerics.picard_tol


def test_heat_mode_is_second_order_in_space(make_scenario):
    # the sine mode is an eigenvector of the discrete operator, so comparing with
    # the backward Euler decay of the exact eigenvalue isolates the spatial error
    errors = []
    for n_sigma in (11, 21, 41, 81):
        scenario = make_scenario(numerics={"n_sigma": n_sigma, "dt": 1e-3}, **HEAT)
        final = run_reduced(scenario)[-1]
        steps = round(final.t / 1e-3)
        exact = (1 + math.pi**2 * 1e-3) ** -steps * np.sin(math.pi * final.grid.sigma)
        errors.append(float(np.max(np.abs(final.values - exact))))
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert min(orders) >= 1.8, orders
