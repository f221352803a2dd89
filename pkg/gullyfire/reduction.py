"""From the thin gully to its axis: averaging, asymptotic gaps, and the ε-sweep.

The transverse average U_ε(σ) = (1/2ε)∫u(σ, s) ds is taken with the plain
trapezoid rule in s. The gap reports compare the gully field with its
average and the offset-curve diffusion with the axis diffusion. The
convergence study runs the full problem for every ε in the scenario, optionally
refining the lattice as ε shrinks, and measures U_ε against a reduced run
finer than any of them.
"""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gullyfire.analysis import NormRequest, PairSet, SampleCloud, chart_derivatives, holder_seminorm_estimate
from gullyfire.config import ConfigurationError
from gullyfire.geometry import FermiChart
from gullyfire.grid import GullyGrid, interior_set, reduced_grid_for, trapezoid_factors
from gullyfire.model import ModelError, Scenario, nonlocal_term_reduced, psi_from_magnitude
from gullyfire.solver import (
    FieldSnapshot,
    ReducedSnapshot,
    SolverError,
    assemble_axis_diffusion,
    axis_gradient,
    run_full,
    run_reduced,
)

logger = logging.getLogger(__name__)

GAP_SLACK = 0.05
FLAT_TOLERANCE = 1e-8
REFERENCE_FACTOR = 4
# matched_sup_error is reported but not held to monotonicity
ENFORCED_MONOTONE = ("sup_error", "grad_error", "hess_error", "dt_error", "residual_max")


class ReductionError(ConfigurationError):
    """A reduction check was set up on data it cannot use."""


class InteriorWindow(BaseModel):
    """A compact set A×(t₀, T] of the axis space-time, A = [sigma_min, sigma_max]."""

    model_config = ConfigDict(frozen=True)

    sigma_min: float
    sigma_max: float
    t0: float

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "InteriorWindow":
        length = scenario.axis.length
        margin = scenario.analysis.window_margin * length
        return cls(sigma_min=margin, sigma_max=length - margin, t0=scenario.analysis.t0_fraction * scenario.domain.T)

    def sigma_mask(self, sigma: np.ndarray) -> np.ndarray:
        return (sigma >= self.sigma_min) & (sigma <= self.sigma_max)

    def time_mask(self, times: np.ndarray) -> np.ndarray:
        return np.asarray(times) > self.t0


# -- averaging and gaps ----------------------------------------------------------


def transverse_average(chart: FermiChart, grid: GullyGrid, field) -> ReducedSnapshot:
    values = np.asarray(getattr(field, "values", field), dtype=float)
    weights = trapezoid_factors(grid.n_s) * grid.h_s
    average = values @ weights / (2 * chart.epsilon)
    return ReducedSnapshot(reduced_grid_for(grid), getattr(field, "t", 0.0), average)


class AvgGapReport(BaseModel):
    max_gap: float
    bound: float
    seminorm: float
    exponent: float
    passed: bool


def _column_pairs(grid: GullyGrid) -> PairSet:
    index = np.arange(grid.size).reshape(grid.shape)
    j1, j2 = np.triu_indices(grid.n_s, k=1)
    return PairSet(index[:, j1].ravel(), index[:, j2].ravel())


def avg_gap_report(field: FieldSnapshot, chart: FermiChart, a: float, request: NormRequest | None = None) -> AvgGapReport:
    """max|u − U_ε| against 2ε^a times a sampled seminorm.

    For a in (0, 1) the seminorm is [u]_a; for a in (1, 2) it is
    [∂_s u]_{a−1}, with ∂_s u = 0 on the hillsides. Same-column pairs are
    always included.
    """
    grid = field.grid
    if not (0 < a < 1 or 1 < a < 2):
        raise ReductionError(f"Gap exponent must lie in (0, 1) or (1, 2), got {a}")
    request = request or NormRequest(a=a % 1, b=0.0)
    average = transverse_average(chart, grid, field).values
    max_gap = float(np.max(np.abs(field.values - average[:, None])))

    if a < 1:
        sampled, exponent = field.values, a
    else:
        sampled = np.gradient(field.values, grid.h_s, axis=1, edge_order=2)
        sampled[:, [0, -1]] = 0.0
        exponent = a - 1
    cloud = SampleCloud.from_samples(grid.points.reshape(-1, 2), sampled.ravel())
    pairs = PairSet.build(cloud, request.pair_budget, request.seed).union(_column_pairs(grid))
    seminorm = holder_seminorm_estimate(cloud, None, exponent, request, pairs=pairs)

    bound = 2 * chart.epsilon**a * seminorm
    passed = max_gap <= bound * (1 + GAP_SLACK) or max_gap <= 1e-14
    if not passed:
        logger.warning(f"Transverse gap {max_gap:.6g} exceeds 2ε^a·seminorm = {bound:.6g} at t={field.t:.6g}")
    return AvgGapReport(max_gap=max_gap, bound=bound, seminorm=seminorm, exponent=a, passed=passed)


class LevelGap(BaseModel):
    s: float
    gap: float


class LBGapReport(BaseModel):
    max_gap: float
    linear_fit_slope_in_s: float
    intercept: float
    derivative_sup: float
    slope_ratio: float = Field(description="Fitted slope over sup(|∇u| + |D²u|) on the window.")
    levels: list[LevelGap]


def _axis_stencil(values: np.ndarray, h: float, face: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """(1/J)·∂_σ(face·∂_σ u) on interior σ nodes; ``face`` lives on half nodes."""
    flux = face * (values[1:] - values[:-1]) / h
    return (flux[1:] - flux[:-1]) / (h * jac[1:-1])


def lb_gap_report(field, chart: FermiChart, grid: GullyGrid, delta_window: float) -> LBGapReport:
    """Offset-curve Laplace–Beltrami at each level s against the axis ∂_σ² of the same slice."""
    values = np.asarray(getattr(field, "values", field), dtype=float)
    window = interior_set(grid, delta_window)
    window[[0, -1], :] = False
    if not np.any(window):
        raise ReductionError(f"No interior node lies farther than {delta_window} from the terminals")

    half = 0.5 * (grid.sigma[:-1] + grid.sigma[1:])
    kappa_half = chart.curve.curvature(half)
    ones_face, ones_jac = np.ones(grid.n_sigma - 1), np.ones(grid.n_sigma)

    levels = []
    gaps = np.zeros(grid.shape)
    for j, s in enumerate(grid.s):
        offset = _axis_stencil(values[:, j], grid.h_sigma, 1.0 / (1.0 - s * kappa_half), grid.jacobian[:, j])
        axis = _axis_stencil(values[:, j], grid.h_sigma, ones_face, ones_jac)
        gaps[1:-1, j] = np.abs(offset - axis)
        column = window[:, j]
        if np.any(column):
            levels.append(LevelGap(s=float(s), gap=float(np.max(gaps[column, j]))))

    magnitudes = np.array([abs(level.s) for level in levels])
    level_gaps = np.array([level.gap for level in levels])
    if len(np.unique(magnitudes)) >= 2:
        slope, intercept = np.polyfit(magnitudes, level_gaps, 1)
    else:
        slope, intercept = 0.0, float(level_gaps.max())

    gradient, hessian = chart_derivatives(grid, values)
    size = np.linalg.norm(gradient, axis=-1) + np.linalg.norm(hessian.reshape(*grid.shape, 4), axis=-1)
    derivative_sup = float(np.max(size[window]))
    ratio = float(slope) / derivative_sup if derivative_sup > 0 else 0.0
    return LBGapReport(
        max_gap=float(np.max(gaps[window])),
        linear_fit_slope_in_s=float(slope),
        intercept=float(intercept),
        derivative_sup=derivative_sup,
        slope_ratio=ratio,
        levels=levels,
    )


# -- limit equation --------------------------------------------------------------


class LimitResidualReport(BaseModel):
    times: list[float]
    residuals: list[float]
    max_residual: float


def _as_axis_trajectory(trajectory) -> list[ReducedSnapshot]:
    converted = []
    for snapshot in trajectory:
        if isinstance(snapshot, FieldSnapshot):
            snapshot = transverse_average(snapshot.grid.chart, snapshot.grid, snapshot)
        converted.append(snapshot)
    return converted


def _stack(trajectory: Sequence) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([snapshot.values for snapshot in trajectory]), np.array([snapshot.t for snapshot in trajectory])


def _time_rate(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Centered differences at interior output times."""
    return (values[2:] - values[:-2]) / (times[2:] - times[:-2])[:, None]


def limit_residual(
    trajectory: Sequence,
    scenario: Scenario,
    window: InteriorWindow | None = None,
) -> LimitResidualReport:
    """Max residual of the reduced equation evaluated on the averaged gully run.

    At every interior output time t_k the residual is
    (U(t_{k+1}) − U(t_{k−1}))/(t_{k+1} − t_{k−1}) − Δ_S U(t_k) − f*(U(t_k)),
    with f* the reduced kernel term plus ψ of ∂_σU. The centred difference
    is only as fine as the output spacing, so hand it every step when the
    residual should track the solver's dt.
    """
    snapshots = _as_axis_trajectory(trajectory)
    if len(snapshots) < 3:
        raise ReductionError(f"limit_residual needs at least 3 output times, got {len(snapshots)}")
    window = window or InteriorWindow.for_scenario(scenario)

    grid = snapshots[0].grid
    laplacian = assemble_axis_diffusion(grid)
    columns = window.sigma_mask(grid.sigma) & ~grid.dirichlet_mask

    def forcing(values: np.ndarray) -> np.ndarray:
        f = nonlocal_term_reduced(grid, scenario.kernel, values)
        if scenario.reaction.c_psi > 0:
            f = f + psi_from_magnitude(scenario.reaction, np.abs(axis_gradient(grid, values)))
        return f

    values, stamps = _stack(snapshots)
    rates = _time_rate(values, stamps)
    times, residuals = [], []
    for rate, current, t in zip(rates, values[1:-1], stamps[1:-1]):
        if not window.time_mask(t):
            continue
        residual = rate - laplacian.apply(current) - forcing(current)
        times.append(float(t))
        residuals.append(float(np.max(np.abs(residual[columns]))) if np.any(columns) else 0.0)
    if not residuals:
        raise ReductionError(f"No interior output time falls after t0 = {window.t0}")
    return LimitResidualReport(times=times, residuals=residuals, max_residual=max(residuals))


# -- convergence study -----------------------------------------------------------


class ConvergenceEntry(BaseModel):
    epsilon: float
    n_sigma: int | None = Field(default=None, description="Axis nodes of the full run at this epsilon.")
    dt: float | None = None
    sup_error: float | None = None
    grad_error: float | None = None
    hess_error: float | None = None
    dt_error: float | None = None
    matched_sup_error: float | None = None
    residual_max: float | None = None
    error: str | None = None


class ConvergenceReport(BaseModel):
    epsilon_list: list[float]
    entries: list[ConvergenceEntry]
    reference: str
    window: InteriorWindow
    monotone: dict[str, bool]
    passed: bool


_METRICS = ("sup_error", "grad_error", "hess_error", "dt_error", "matched_sup_error", "residual_max")


def _derivatives(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    first = np.gradient(values, h, axis=-1, edge_order=2)
    return first, np.gradient(first, h, axis=-1, edge_order=2)


def _cadence(count: int, stride: int) -> list[int]:
    """Positions of the output snapshots inside an every-step trajectory of ``count`` states."""
    last = count - 1
    picks = list(range(0, last + 1, stride))
    if picks[-1] != last:
        picks.append(last)
    return picks


def refinement_factors(scenario: Scenario) -> list[int]:
    """Lattice and time-step divisor of the full run at each epsilon."""
    count = len(scenario.epsilon_list)
    if scenario.numerics.refine_with_epsilon:
        return [2**k for k in range(count)]
    return [1] * count


def monotone_flag(values: Sequence[float | None]) -> bool:
    """Strictly decreasing, or flat within FLAT_TOLERANCE."""
    if not values or any(v is None for v in values):
        return False
    if max(values) - min(values) <= FLAT_TOLERANCE:
        return True
    return all(a > b for a, b in zip(values, values[1:]))


def convergence_study(scenario: Scenario, *, threads: int = 1) -> ConvergenceReport:
    """Run every ε, average across the gully, and measure U_ε against a refined reduced run.

    Errors are compared on the scenario's own σ lattice at its output times.
    With ``numerics.refine_with_epsilon`` the k-th width is run with h_sigma
    and dt divided by 2^k, so discretization error shrinks along with the
    width gap; the reference is always REFERENCE_FACTOR times finer than the
    finest full run.

    Args:
        scenario: Problem with at least three widths in ``epsilon_list``.
        threads: Worker threads for the independent ε runs.

    Returns:
        ConvergenceReport with one entry per width, the monotonicity of every
        metric, and ``passed`` set when every run finished and all metrics in
        ENFORCED_MONOTONE decrease.

    Raises:
        ReductionError: Fewer than three widths.
        SolverError: The reference run failed; failures of single widths are
            recorded in their entries instead.
    """
    if len(scenario.epsilon_list) < 3:
        raise ReductionError(f"A convergence study needs at least 3 epsilon values, got {len(scenario.epsilon_list)}")
    window = InteriorWindow.for_scenario(scenario)
    factors = refinement_factors(scenario)
    top = REFERENCE_FACTOR * max(factors)
    finest = scenario.refined(top)
    reference = run_reduced(finest)
    fine_values, ref_times = _stack(reference)
    fine_first, fine_second = _derivatives(fine_values, reference[0].grid.h_sigma)
    ref_values, ref_first, ref_second = (a[:, ::top] for a in (fine_values, fine_first, fine_second))
    description = f"reduced run, n_sigma={finest.numerics.n_sigma}, dt={finest.numerics.dt:g}"
    logger.info(f"Convergence reference: {description}")

    def measure(epsilon: float, factor: int) -> ConvergenceEntry:
        level = scenario.refined(factor)
        entry = ConvergenceEntry(epsilon=epsilon, n_sigma=level.numerics.n_sigma, dt=level.numerics.dt)
        try:
            steps = _as_axis_trajectory(run_full(level, epsilon, output_every=1))
            matched, _ = _stack(run_reduced(level))
        except (SolverError, ModelError) as e:
            logger.error(f"Full run at epsilon={epsilon} failed: {e}")
            entry.error = str(e)
            return entry
        sampled = [steps[k] for k in _cadence(len(steps), level.numerics.output_every)]
        values, times = _stack(sampled)
        first, second = _derivatives(values, sampled[0].grid.h_sigma)
        values, first, second, matched = (a[:, ::factor] for a in (values, first, second, matched))
        if values.shape != ref_values.shape or not np.allclose(times, ref_times, rtol=0, atol=1e-12):
            entry.error = "output times or lattice differ from the reference"
            return entry

        columns = window.sigma_mask(sampled[0].grid.sigma[::factor])
        rows = window.time_mask(times)
        entry.sup_error = float(np.max(np.abs(values - ref_values)))
        entry.matched_sup_error = float(np.max(np.abs(values - matched)))
        if np.any(rows) and np.any(columns):
            region = np.ix_(rows, columns)
            entry.grad_error = float(np.max(np.abs(first - ref_first)[region]))
            entry.hess_error = float(np.max(np.abs(second - ref_second)[region]))
        if len(times) >= 3:
            inner = rows[1:-1]
            if np.any(inner) and np.any(columns):
                gap = np.abs(_time_rate(values, times) - _time_rate(ref_values, ref_times))
                entry.dt_error = float(np.max(gap[np.ix_(inner, columns)]))
        try:
            entry.residual_max = limit_residual(steps, level, window).max_residual
        except ReductionError as e:
            logger.warning(f"No limit residual at epsilon={epsilon}: {e}")
        logger.info(f"epsilon={epsilon}: sup error {entry.sup_error:.6g}, residual {entry.residual_max}")
        return entry

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        entries = list(pool.map(measure, scenario.epsilon_list, factors))

    monotone = {
        name: monotone_flag([getattr(entry, name) for entry in entries])
        for name in _METRICS
        if any(getattr(entry, name) is not None for entry in entries)
    }
    finished = all(entry.error is None for entry in entries)
    return ConvergenceReport(
        epsilon_list=list(scenario.epsilon_list),
        entries=entries,
        reference=description,
        window=window,
        monotone=monotone,
        passed=finished and all(monotone.get(name, False) for name in ENFORCED_MONOTONE),
    )
