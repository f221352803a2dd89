"""Time integration of the full gully problem and of the reduced axis problem.

Each step treats diffusion θ-implicitly and the forcing (nonlocal heating
plus the gradient reaction) by Picard iteration to the step's fixed point:

    (I − θ·dt·Δ_h) u^{k+1} = u^n + dt·[(1 − θ)·Δ_h u^n + f(u^k)]

The system matrix is factorized once per run. Dirichlet rows are identity
rows whose right-hand side is the terminal data at the new time, and the
insulating hillsides enter through mirror ghost nodes. After every step the
sup norm is checked against e^{C_L t}·max|g| over the parabolic boundary.

The full Laplacian is the conservative Fermi-chart form

    Δu = J⁻¹ ∂_σ(J⁻¹ ∂_σ u) + J⁻¹ ∂_s(J ∂_s u),    J = 1 − sκ(σ),

which expands to ∂_s² + Δ_{S(s)} − H_s ∂_s with H_s = κ/(1 − sκ).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse.linalg import splu

from gullyfire.grid import GullyGrid, ReducedGrid
from gullyfire.model import (
    BoundaryData,
    ModelError,
    Scenario,
    kernel_matrix,
    nonlocal_term,
    nonlocal_term_reduced,
    psi_eval,
    psi_from_magnitude,
    verify_kernel_assumptions,
)

logger = logging.getLogger(__name__)

RESIDUAL_TARGET = 1e-12
RESIDUAL_LIMIT = 1e-10
GRONWALL_SLACK = 1e-9
REPORT_SLACK = 1e-6


class SolverError(Exception):
    """The time integration failed numerically."""


class GronwallViolation(SolverError):
    """A step left the e^{C_L t} sup-norm envelope."""


@dataclass(frozen=True, eq=False)
class FieldSnapshot:
    """Temperature above the ignition threshold on a gully grid at time t."""

    grid: GullyGrid
    t: float
    values: np.ndarray
    picard_iterations: int = 0
    picard_converged: bool = True
    picard_changes: tuple[float, ...] = ()

    def unshifted(self, theta: float) -> np.ndarray:
        return self.values + theta


@dataclass(frozen=True, eq=False)
class ReducedSnapshot:
    """Temperature above the ignition threshold on the axis at time t."""

    grid: ReducedGrid
    t: float
    values: np.ndarray
    picard_iterations: int = 0
    picard_converged: bool = True
    picard_changes: tuple[float, ...] = ()

    def unshifted(self, theta: float) -> np.ndarray:
        return self.values + theta


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    dt: float = Field(gt=0)
    picard_tol: float = Field(default=1e-10, gt=0)
    picard_max: int = Field(default=50, ge=1)
    theta: float = Field(default=1.0, ge=0.5, le=1.0, description="Implicitness weight; 1 is backward Euler.")
    strict_gronwall: bool = Field(default=True, description="Raise instead of warn when the sup bound breaks.")

    @classmethod
    def from_scenario(cls, scenario: Scenario, **overrides) -> "SolverConfig":
        numerics = scenario.numerics
        values = {
            "dt": numerics.dt,
            "picard_tol": numerics.picard_tol,
            "picard_max": numerics.picard_max,
            "theta": numerics.theta_scheme,
        }
        values.update(overrides)
        return cls(**values)


class GronwallReport(BaseModel):
    max_ratio: float
    rate: float
    passed: bool


def picard_dt_bound(C_L: float, c_psi: float, h: float) -> float:
    """Largest dt for which the per-step Picard map is documented to contract."""
    return 1.0 / (2.0 * (C_L + c_psi / h))


# -- diffusion operator ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    """Discrete Laplacian on a node array; rows of Dirichlet nodes are empty."""

    laplacian: sp.csr_matrix
    dirichlet: np.ndarray
    shape: tuple[int, ...]

    @property
    def matrix(self) -> sp.csr_matrix:
        """The operator with identity rows at Dirichlet nodes."""
        return (self.laplacian + sp.diags(self.dirichlet.astype(float))).tocsr()

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (self.laplacian @ np.asarray(values, dtype=float).ravel()).reshape(self.shape)

    def system(self, dt: float, theta: float) -> sp.csc_matrix:
        """I − θ·dt·Δ_h, with identity rows at Dirichlet nodes."""
        n = self.laplacian.shape[0]
        return (sp.identity(n, format="csr") - (theta * dt) * self.laplacian).tocsc()


def _finish_operator(rows, cols, vals, dirichlet: np.ndarray, shape: tuple[int, ...]) -> DiffusionOperator:
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    n = int(np.prod(shape))
    diagonal = -np.bincount(rows, weights=vals, minlength=n)
    everything = np.arange(n)
    matrix = sp.coo_matrix(
        (np.concatenate([vals, diagonal]), (np.concatenate([rows, everything]), np.concatenate([cols, everything]))),
        shape=(n, n),
    ).tocsr()
    flat_dirichlet = dirichlet.ravel()
    matrix = sp.diags((~flat_dirichlet).astype(float)) @ matrix
    matrix.eliminate_zeros()
    return DiffusionOperator(laplacian=matrix.tocsr(), dirichlet=flat_dirichlet, shape=shape)


def assemble_diffusion(grid: GullyGrid) -> DiffusionOperator:
    """Five-point Fermi-chart Laplacian with metric coefficients on half nodes."""
    n_sigma, n_s = grid.shape
    index = np.arange(grid.size).reshape(grid.shape)
    jac = grid.jacobian

    half_sigma = 0.5 * (grid.sigma[:-1] + grid.sigma[1:])
    kappa_half = grid.chart.curve.curvature(half_sigma)
    along = 1.0 / (1.0 - grid.s[None, :] * kappa_half[:, None]) / grid.h_sigma**2
    half_s = 0.5 * (grid.s[:-1] + grid.s[1:])
    across = (1.0 - grid.curvature[:, None] * half_s[None, :]) / grid.h_s**2

    rows, cols, vals = [], [], []

    def couple(row_nodes, col_nodes, coefficient):
        rows.append(row_nodes.ravel())
        cols.append(col_nodes.ravel())
        vals.append(coefficient.ravel())

    couple(index[:-1, :], index[1:, :], along / jac[:-1, :])
    couple(index[1:, :], index[:-1, :], along / jac[1:, :])
    couple(index[:, :-1], index[:, 1:], across / jac[:, :-1])
    couple(index[:, 1:], index[:, :-1], across / jac[:, 1:])

    # mirror ghosts double the single inward face
    couple(index[:, 0], index[:, 1], across[:, 0] / jac[:, 0])
    couple(index[:, -1], index[:, -2], across[:, -1] / jac[:, -1])
    if grid.insulated_terminals:
        couple(index[0, :], index[1, :], along[0, :] / jac[0, :])
        couple(index[-1, :], index[-2, :], along[-1, :] / jac[-1, :])

    return _finish_operator(rows, cols, vals, grid.dirichlet_mask, (n_sigma, n_s))


def assemble_axis_diffusion(grid: ReducedGrid) -> DiffusionOperator:
    """Three-point ∂_σ² on the axis lattice."""
    n = grid.n_sigma
    index = np.arange(n)
    coefficient = np.full(n - 1, 1.0 / grid.h_sigma**2)
    rows = [index[:-1], index[1:]]
    cols = [index[1:], index[:-1]]
    vals = [coefficient, coefficient]
    return _finish_operator(rows, cols, vals, grid.dirichlet_mask, (n,))


# -- gradients -------------------------------------------------------------------


def _axis_derivative(values: np.ndarray, h: float, one_sided_ends: bool) -> np.ndarray:
    d = np.zeros_like(values)
    d[1:-1] = (values[2:] - values[:-2]) / (2 * h)
    if one_sided_ends:
        d[0] = (-3 * values[0] + 4 * values[1] - values[2]) / (2 * h)
        d[-1] = (3 * values[-1] - 4 * values[-2] + values[-3]) / (2 * h)
    return d


def euclidean_gradient(grid: GullyGrid, values: np.ndarray) -> np.ndarray:
    """Cartesian gradient components ``[i, j, 2]`` from chart differences.

    Central differences inside, one-sided second order on Dirichlet
    columns, and the mirror value ∂_s u = 0 on the hillsides.
    """
    d_sigma = _axis_derivative(values, grid.h_sigma, one_sided_ends=not grid.insulated_terminals)
    d_s = np.zeros_like(values)
    d_s[:, 1:-1] = (values[:, 2:] - values[:, :-2]) / (2 * grid.h_s)
    along = d_sigma / grid.jacobian
    return along[..., None] * grid.tangent[:, None, :] + d_s[..., None] * grid.normal[:, None, :]


def axis_gradient(grid: ReducedGrid, values: np.ndarray) -> np.ndarray:
    return _axis_derivative(values, grid.h_sigma, one_sided_ends=True)


# -- steppers --------------------------------------------------------------------


class _Stepper:
    """Shared θ-scheme/Picard machinery; subclasses supply forcing and data."""

    def __init__(self, scenario: Scenario, operator: DiffusionOperator, config: SolverConfig, logger=None):
        self.scenario = scenario
        self.operator = operator
        self.config = config
        self.logger = logger or logging.getLogger(__name__)
        self._system = operator.system(config.dt, config.theta)
        try:
            self._lu = splu(self._system)
        except RuntimeError as e:
            msg = f"Factorization of the step matrix failed: {e}"
            self.logger.error(msg)
            raise SolverError(msg) from e
        self._forcing_active = scenario.kernel.A > 0 or scenario.reaction.c_psi > 0

    def forcing(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def impose(self, values: np.ndarray, t: float) -> None:
        raise NotImplementedError

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            msg = "Linear solve produced non-finite values"
            self.logger.error(msg)
            raise SolverError(msg)
        scale = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
        defect = rhs - self._system @ x
        if np.linalg.norm(defect) > RESIDUAL_TARGET * scale:
            x = x + self._lu.solve(defect)
            defect = rhs - self._system @ x
        residual = float(np.linalg.norm(defect)) / scale
        if residual > RESIDUAL_LIMIT:
            msg = f"Linear solve residual {residual:.3e} exceeds {RESIDUAL_LIMIT:.0e}"
            self.logger.error(msg)
            raise SolverError(msg)
        return x

    def advance(self, values: np.ndarray, t_next: float) -> tuple[np.ndarray, int, bool, tuple[float, ...]]:
        dt, theta = self.config.dt, self.config.theta
        base = values.copy()
        if theta < 1.0:
            base += dt * (1.0 - theta) * self.operator.apply(values)

        current = values
        changes: list[float] = []
        converged = False
        for iteration in range(1, self.config.picard_max + 1):
            rhs = base + dt * self.forcing(current) if self._forcing_active else base.copy()
            self.impose(rhs, t_next)
            update = self.solve(rhs.ravel()).reshape(values.shape)
            changes.append(float(np.max(np.abs(update - current))))
            current = update
            if not self._forcing_active or changes[-1] <= self.config.picard_tol:
                converged = True
                break
        if not converged:
            self.logger.warning(
                f"Picard iteration stalled at t={t_next:.6g}: last change {changes[-1]:.3e} "
                f"after {iteration} iterations; dt may be too large"
            )
        self.impose(current, t_next)
        return current, iteration, converged, tuple(changes)


class FullStepper(_Stepper):
    def __init__(self, scenario: Scenario, grid: GullyGrid, config: SolverConfig, logger=None):
        super().__init__(scenario, assemble_diffusion(grid), config, logger)
        self.grid = grid
        self._kernel = kernel_matrix(scenario.kernel, grid.sigma)

    def forcing(self, values: np.ndarray) -> np.ndarray:
        f = nonlocal_term(self.grid, self.scenario.kernel, values, self._kernel)
        if self.scenario.reaction.c_psi > 0:
            f = f + psi_eval(self.scenario.reaction, euclidean_gradient(self.grid, values))
        return f

    def impose(self, values: np.ndarray, t: float) -> None:
        if self.grid.insulated_terminals:
            return
        values[0, :], values[-1, :] = self.scenario.boundary.dirichlet(t)

    def step(self, state: FieldSnapshot, t_next: float | None = None) -> FieldSnapshot:
        t_next = state.t + self.config.dt if t_next is None else t_next
        values, iterations, converged, changes = self.advance(state.values, t_next)
        return FieldSnapshot(self.grid, t_next, values, iterations, converged, changes)


class ReducedStepper(_Stepper):
    def __init__(self, scenario: Scenario, grid: ReducedGrid, config: SolverConfig, logger=None):
        super().__init__(scenario, assemble_axis_diffusion(grid), config, logger)
        self.grid = grid
        self._kernel = kernel_matrix(scenario.kernel, grid.sigma)

    def forcing(self, values: np.ndarray) -> np.ndarray:
        f = nonlocal_term_reduced(self.grid, self.scenario.kernel, values, self._kernel)
        if self.scenario.reaction.c_psi > 0:
            f = f + psi_from_magnitude(self.scenario.reaction, np.abs(axis_gradient(self.grid, values)))
        return f

    def impose(self, values: np.ndarray, t: float) -> None:
        values[0], values[-1] = self.scenario.boundary.dirichlet(t)

    def step(self, state: ReducedSnapshot, t_next: float | None = None) -> ReducedSnapshot:
        t_next = state.t + self.config.dt if t_next is None else t_next
        values, iterations, converged, changes = self.advance(state.values, t_next)
        return ReducedSnapshot(self.grid, t_next, values, iterations, converged, changes)


def step_full(state: FieldSnapshot, scenario: Scenario, config: SolverConfig) -> FieldSnapshot:
    """Advance a gully field by one step of ``config.dt``."""
    return FullStepper(scenario, state.grid, config).step(state)


def step_reduced(state: ReducedSnapshot, scenario: Scenario, config: SolverConfig) -> ReducedSnapshot:
    """Advance an axis field by one step of ``config.dt``."""
    return ReducedStepper(scenario, state.grid, config).step(state)


# -- runs ------------------------------------------------------------------------


def initial_full_state(scenario: Scenario, grid: GullyGrid) -> FieldSnapshot:
    profile = scenario.boundary.initial_values(grid.sigma, grid.chart.total_length)
    values = np.repeat(profile[:, None], grid.n_s, axis=1)
    if not grid.insulated_terminals:
        values[0, :], values[-1, :] = scenario.boundary.dirichlet(0.0)
    return FieldSnapshot(grid, 0.0, values)


def initial_reduced_state(scenario: Scenario, grid: ReducedGrid) -> ReducedSnapshot:
    values = scenario.boundary.initial_values(grid.sigma, grid.chart.total_length).astype(float)
    values[0], values[-1] = scenario.boundary.dirichlet(0.0)
    return ReducedSnapshot(grid, 0.0, values)


def _require_kernel_assumptions(scenario: Scenario, epsilon: float) -> None:
    report = verify_kernel_assumptions(
        scenario.kernel,
        scenario.chart(epsilon),
        epsilon,
        sample_count=128,
        seed=scenario.analysis.seed,
        alpha=scenario.analysis.alpha,
    )
    if not report.passed:
        msg = (
            f"Kernel violates the declared C_L={scenario.kernel.C_L} at epsilon={epsilon} "
            f"(mass {report.sup_mass:.6g}, Hölder quotient {report.holder_quotient:.6g}); refusing to run"
        )
        logger.error(msg)
        raise ModelError(msg)


class _GronwallGuard:
    """Tracks max|g| over the parabolic boundary and checks each step against it."""

    def __init__(self, scenario: Scenario, initial_values: np.ndarray, strict: bool, label: str):
        self.boundary = scenario.boundary
        self.rate = scenario.kernel.C_L
        self.strict = strict
        self.label = label
        self.g_max = float(np.max(np.abs(initial_values)))

    def check(self, values: np.ndarray, t: float) -> None:
        self.g_max = max(self.g_max, *(abs(v) for v in self.boundary.dirichlet(t)))
        peak = float(np.max(np.abs(values)))
        bound = math.exp(self.rate * t) * self.g_max + GRONWALL_SLACK
        if peak > bound:
            msg = f"{self.label}: sup norm {peak:.12g} exceeds Gronwall bound {bound:.12g} at t={t:.6g}"
            if self.strict:
                logger.error(msg)
                raise GronwallViolation(msg)
            logger.warning(msg)


def _steps_for(scenario: Scenario, config: SolverConfig) -> int:
    if scenario.domain.T <= 0:
        return 0
    steps = scenario.domain.T / config.dt
    if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
        raise ModelError(f"dt={config.dt} does not divide T={scenario.domain.T}")
    return int(round(steps))


def run_full(
    scenario: Scenario,
    epsilon: float,
    config: SolverConfig | None = None,
    *,
    output_every: int | None = None,
    grid: GullyGrid | None = None,
) -> list[FieldSnapshot]:
    """Integrate the gully problem for one ε from t = 0 to T.

    Args:
        scenario: The validated problem; ``epsilon`` must be in its list.
        epsilon: Gully half-width to run.
        config: Time-stepping settings; defaults to the scenario's numerics.
        output_every: Keep every n-th step; defaults to ``numerics.output_every``.
            The final step is always kept.
        grid: Lattice to run on, e.g. an insulated-terminal variant; defaults
            to ``scenario.grid(epsilon)``.

    Returns:
        Snapshots of the shifted field u − ϑ, starting with the initial state.

    Raises:
        ModelError: ``epsilon`` is not in the scenario, or the kernel fails
            its assumptions on this chart.
        SolverError: A linear solve missed its residual target.
        GronwallViolation: The sup bound was exceeded under ``strict_gronwall``.
    """
    scenario.epsilon_index(epsilon)
    config = config or SolverConfig.from_scenario(scenario)
    grid = grid or scenario.grid(epsilon)
    stride = output_every or scenario.numerics.output_every
    _require_kernel_assumptions(scenario, epsilon)

    h = min(grid.h_sigma, grid.h_s)
    limit = picard_dt_bound(scenario.kernel.C_L, scenario.reaction.c_psi, h)
    if config.dt > limit:
        logger.warning(f"dt={config.dt} exceeds the Picard contraction limit {limit:.3e} at epsilon={epsilon}")

    stepper = FullStepper(scenario, grid, config)
    state = initial_full_state(scenario, grid)
    guard = _GronwallGuard(scenario, state.values, config.strict_gronwall, f"full run epsilon={epsilon}")
    steps = _steps_for(scenario, config)
    logger.info(f"Full run epsilon={epsilon}: {grid.n_sigma}x{grid.n_s} nodes, {steps} steps")

    trajectory = [state]
    for n in range(1, steps + 1):
        state = stepper.step(state, n * config.dt)
        guard.check(state.values, state.t)
        if n % stride == 0 or n == steps:
            trajectory.append(state)
    return trajectory


def run_reduced(
    scenario: Scenario,
    config: SolverConfig | None = None,
    *,
    n_sigma: int | None = None,
    output_every: int | None = None,
) -> list[ReducedSnapshot]:
    """Integrate the reduced axis problem from t = 0 to T."""
    config = config or SolverConfig.from_scenario(scenario)
    grid = scenario.reduced_grid(n_sigma)
    stride = output_every or scenario.numerics.output_every
    _require_kernel_assumptions(scenario, scenario.epsilon_list[-1])

    stepper = ReducedStepper(scenario, grid, config)
    state = initial_reduced_state(scenario, grid)
    guard = _GronwallGuard(scenario, state.values, config.strict_gronwall, "reduced run")
    steps = _steps_for(scenario, config)
    logger.info(f"Reduced run: {grid.n_sigma} axis nodes, {steps} steps")

    trajectory = [state]
    for n in range(1, steps + 1):
        state = stepper.step(state, n * config.dt)
        guard.check(state.values, state.t)
        if n % stride == 0 or n == steps:
            trajectory.append(state)
    return trajectory


# -- reports ---------------------------------------------------------------------


def gronwall_report(trajectory, C_L: float, boundary: BoundaryData) -> GronwallReport:
    """Worst ratio max|u(t)| / (e^{C_L t}·max|g| over the parabolic boundary up to t)."""
    if not trajectory:
        raise SolverError("gronwall_report needs a nonempty trajectory")
    g_max = float(np.max(np.abs(trajectory[0].values)))
    worst = 0.0
    for snapshot in trajectory:
        g_max = max(g_max, *(abs(v) for v in boundary.dirichlet(snapshot.t)))
        peak = float(np.max(np.abs(snapshot.values)))
        if peak == 0.0:
            continue
        ratio = math.inf if g_max == 0.0 else peak / (math.exp(C_L * snapshot.t) * g_max)
        worst = max(worst, ratio)
    return GronwallReport(max_ratio=worst, rate=C_L, passed=worst <= 1.0 + REPORT_SLACK)


def uniqueness_gap(
    trajectory_a,
    trajectory_b,
    C_L: float,
    C_psi: float,
    boundary_a: BoundaryData,
    boundary_b: BoundaryData,
) -> GronwallReport:
    """Compare two runs on the same grid: max|u_a − u_b|(t) ≤ e^{(C_L + C_ψ)t}·max|g_a − g_b|."""
    if len(trajectory_a) != len(trajectory_b):
        raise SolverError("uniqueness_gap needs trajectories with matching output times")
    rate = C_L + C_psi
    g_max = float(np.max(np.abs(trajectory_a[0].values - trajectory_b[0].values)))
    worst = 0.0
    for a, b in zip(trajectory_a, trajectory_b):
        if not math.isclose(a.t, b.t, rel_tol=1e-12, abs_tol=1e-15):
            raise SolverError(f"Output times differ: {a.t} vs {b.t}")
        ga, gb = boundary_a.dirichlet(a.t), boundary_b.dirichlet(b.t)
        g_max = max(g_max, abs(ga[0] - gb[0]), abs(ga[1] - gb[1]))
        gap = float(np.max(np.abs(a.values - b.values)))
        if gap == 0.0:
            continue
        ratio = math.inf if g_max == 0.0 else gap / (math.exp(rate * a.t) * g_max)
        worst = max(worst, ratio)
    return GronwallReport(max_ratio=worst, rate=rate, passed=worst <= 1.0 + REPORT_SLACK)
