"""Problem data: the kernel family, the reaction term, boundary data and the scenario.

The full kernel is the projected family K_ε(X, Y) = κ0(σ_X, σ_Y)/(2ε), where
σ_X is the foot point of X on the axis and κ0 is a Gaussian or top-hat
profile in arclength distance. Its cross-sectional average is κ0 itself, so
the reduced kernel K* needs no limit to be taken numerically. The reaction
term is ψ(p) = c_psi·min(|p|, M), a saturated gradient enhancement that
vanishes on flat fields.

All temperatures inside the solver are measured above the ignition
threshold ϑ: boundary and initial data are shifted by −ϑ when evaluated
and emission adds ϑ back.
"""

import functools
import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gullyfire.config import ConfigurationError
from gullyfire.geometry import AxisCurve, CurveSpec, FermiChart, GeometryError, fermi_forward, fermi_inverse
from gullyfire.grid import GullyGrid, ReducedGrid, build_grid, build_reduced_grid

logger = logging.getLogger(__name__)


class ModelError(ConfigurationError):
    """Problem data that violates the model's standing assumptions."""


# -- kernel and reaction ---------------------------------------------------------


class KernelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    shape: Literal["gaussian", "tophat"]
    A: float = Field(ge=0, description="Peak interaction strength of κ0.")
    r: float = Field(gt=0, description="Arclength range of κ0.")
    C_L: float = Field(gt=0, description="Declared bound on kernel mass and Hölder quotient.")


class ReactionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    c_psi: float = Field(ge=0, description="Lipschitz constant of ψ in the gradient.")
    M: float = Field(gt=0, description="Gradient magnitude at which ψ saturates.")


class KernelReport(BaseModel):
    epsilon: float
    sup_mass: float
    holder_quotient: float
    C_L: float
    alpha: float
    passed: bool


def kernel_profile(spec: KernelSpec, distance) -> np.ndarray:
    """κ0 as a function of arclength distance."""
    d = np.abs(np.asarray(distance, dtype=float))
    if spec.shape == "gaussian":
        return spec.A * np.exp(-(d**2) / (2 * spec.r**2))
    return spec.A * (d <= spec.r).astype(float)


def kernel_reduced(spec: KernelSpec, sigma, sigma2) -> np.ndarray:
    """K*(σ, σ') = κ0(σ, σ')."""
    return kernel_profile(spec, np.asarray(sigma, dtype=float) - np.asarray(sigma2, dtype=float))


def kernel_matrix(spec: KernelSpec, sigma: np.ndarray) -> np.ndarray:
    return kernel_profile(spec, sigma[:, None] - sigma[None, :])


def kernel_full(spec: KernelSpec, chart: FermiChart, X, Y) -> float:
    """K_ε(X, Y) = κ0(σ_X, σ_Y)/(2ε) for two points of the tube."""
    sigma_x = fermi_inverse(chart, X).sigma
    sigma_y = fermi_inverse(chart, Y).sigma
    return float(kernel_reduced(spec, sigma_x, sigma_y)) / (2 * chart.epsilon)


def psi_eval(spec: ReactionSpec, grad) -> np.ndarray:
    """ψ = c_psi·min(|grad|, M); ``grad`` has its two components last."""
    grad = np.asarray(grad, dtype=float)
    return psi_from_magnitude(spec, np.hypot(grad[..., 0], grad[..., 1]))


def psi_from_magnitude(spec: ReactionSpec, magnitude) -> np.ndarray:
    return spec.c_psi * np.minimum(np.asarray(magnitude, dtype=float), spec.M)


def nonlocal_term(grid: GullyGrid, spec: KernelSpec, field, kernel: np.ndarray | None = None) -> np.ndarray:
    """Σ_y w_y K_ε(x, y) u⁺(y) at every node of the gully grid.

    The kernel depends on the foot points only, so the double sum factors
    into column masses followed by an axis-by-axis product.
    """
    values = np.asarray(getattr(field, "values", field), dtype=float)
    column_mass = np.sum(grid.weights * np.maximum(values, 0.0), axis=1)
    matrix = kernel_matrix(spec, grid.sigma) if kernel is None else kernel
    per_sigma = matrix @ column_mass / (2 * grid.epsilon)
    return np.repeat(per_sigma[:, None], grid.n_s, axis=1)


def nonlocal_term_reduced(grid: ReducedGrid, spec: KernelSpec, field, kernel: np.ndarray | None = None) -> np.ndarray:
    """Σ_σ' w_σ' K*(σ, σ') U⁺(σ') on the axis lattice."""
    values = np.asarray(getattr(field, "values", field), dtype=float)
    matrix = kernel_matrix(spec, grid.sigma) if kernel is None else kernel
    return matrix @ (grid.weights * np.maximum(values, 0.0))


def verify_kernel_assumptions(
    spec: KernelSpec,
    chart: FermiChart,
    epsilon: float,
    sample_count: int = 256,
    seed: int = 0,
    *,
    alpha: float,
    n_sigma: int = 201,
) -> KernelReport:
    """Sampled check of sup_x ∫K_ε(x,·) ≤ C_L and the α-Hölder quotient in x."""
    chart = chart if chart.epsilon == epsilon else chart.with_epsilon(epsilon)
    grid = build_grid(chart, n_sigma, 5)
    column = grid.weights.sum(axis=1) / (2 * epsilon)
    length = chart.total_length
    rng = np.random.default_rng(seed)

    x_sigma = np.concatenate([rng.uniform(0.0, length, sample_count), grid.sigma])
    mass = kernel_profile(spec, x_sigma[:, None] - grid.sigma[None, :]) @ column
    sup_mass = float(mass.max())

    a_sigma = rng.uniform(0.0, length, 2 * sample_count)
    a_s = rng.uniform(-epsilon, epsilon, 2 * sample_count)
    b_sigma = np.concatenate([
        rng.uniform(0.0, length, sample_count),
        np.clip(a_sigma[sample_count:] + rng.normal(0.0, spec.r, sample_count), 0.0, length),
    ])
    b_s = rng.uniform(-epsilon, epsilon, 2 * sample_count)
    separation = np.linalg.norm(fermi_forward(chart, a_sigma, a_s) - fermi_forward(chart, b_sigma, b_s), axis=1)
    keep = separation > 1e-12
    gap = np.abs(
        kernel_profile(spec, a_sigma[keep, None] - grid.sigma[None, :])
        - kernel_profile(spec, b_sigma[keep, None] - grid.sigma[None, :])
    ) @ column
    holder = float(np.max(gap / separation[keep] ** alpha)) if np.any(keep) else 0.0

    passed = sup_mass <= spec.C_L and holder <= spec.C_L
    if not passed:
        logger.warning(
            f"Kernel exceeds C_L={spec.C_L} at epsilon={epsilon}: "
            f"mass {sup_mass:.6g}, Hölder quotient {holder:.6g}"
        )
    return KernelReport(
        epsilon=epsilon, sup_mass=sup_mass, holder_quotient=holder, C_L=spec.C_L, alpha=alpha, passed=passed
    )


# -- boundary data ---------------------------------------------------------------


class TimeProfile(BaseModel):
    """Terminal temperature g(t): constant, ramp or sinusoid."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["constant", "ramp", "sinusoid"]
    value: float
    rate: float | None = None
    amplitude: float | None = None
    frequency: float | None = None

    @model_validator(mode="after")
    def _check_kind(self) -> "TimeProfile":
        needed = {"constant": (), "ramp": ("rate",), "sinusoid": ("amplitude", "frequency")}[self.kind]
        for name in ("rate", "amplitude", "frequency"):
            given = getattr(self, name) is not None
            if given != (name in needed):
                verb = "needs" if name in needed else "does not take"
                raise ValueError(f"{self.kind} profile {verb} '{name}'")
        return self

    def __call__(self, t) -> np.ndarray | float:
        t = np.asarray(t, dtype=float)
        if self.kind == "ramp":
            result = self.value + self.rate * t
        elif self.kind == "sinusoid":
            result = self.value + self.amplitude * np.sin(2 * math.pi * self.frequency * t)
        else:
            result = np.full_like(t, self.value)
        return float(result) if result.ndim == 0 else result


class InitialProfile(BaseModel):
    """Initial temperature along the axis, the same on every cross-section."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["constant", "sine", "bump", "linear"]
    value: float | None = None
    amplitude: float | None = None
    mode: int | None = Field(default=None, ge=1)
    center: float | None = Field(default=None, ge=0, le=1)
    width: float | None = Field(default=None, gt=0)
    start: float | None = None
    end: float | None = None

    @model_validator(mode="after")
    def _check_kind(self) -> "InitialProfile":
        needed = {
            "constant": ("value",),
            "sine": ("amplitude", "mode"),
            "bump": ("amplitude", "center", "width"),
            "linear": ("start", "end"),
        }[self.kind]
        for name in ("value", "amplitude", "mode", "center", "width", "start", "end"):
            given = getattr(self, name) is not None
            if given != (name in needed):
                verb = "needs" if name in needed else "does not take"
                raise ValueError(f"{self.kind} profile {verb} '{name}'")
        return self

    def __call__(self, sigma, length: float) -> np.ndarray:
        x = np.asarray(sigma, dtype=float) / length
        if self.kind == "sine":
            return self.amplitude * np.sin(self.mode * math.pi * x)
        if self.kind == "bump":
            return self.amplitude * np.exp(-0.5 * ((x - self.center) / self.width) ** 2)
        if self.kind == "linear":
            return self.start + (self.end - self.start) * x
        return np.full_like(x, self.value)


class BoundaryData(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    theta: float = Field(description="Ignition threshold ϑ.")
    inlet: TimeProfile
    outlet: TimeProfile
    initial: InitialProfile

    def dirichlet(self, t: float) -> tuple[float, float]:
        """Shifted terminal values (inlet, outlet) at time t."""
        return float(self.inlet(t)) - self.theta, float(self.outlet(t)) - self.theta

    def initial_values(self, sigma, length: float) -> np.ndarray:
        """Shifted initial profile at arclengths σ."""
        return self.initial(sigma, length) - self.theta


def time_holder_quotient(profile: TimeProfile, T: float, exponent: float, samples: int = 257) -> float:
    """Sampled max |g(t) − g(t')| / |t − t'|^exponent on [0, T]."""
    if T <= 0:
        return 0.0
    t = np.linspace(0.0, T, samples)
    g = np.asarray(profile(t), dtype=float)
    i, j = np.triu_indices(samples, k=1)
    return float(np.max(np.abs(g[i] - g[j]) / np.abs(t[i] - t[j]) ** exponent))


# -- scenario --------------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _axis_from_json(curve_json: str) -> AxisCurve:
    return AxisCurve(CurveSpec.model_validate_json(curve_json))


def axis_for(curve: CurveSpec) -> AxisCurve:
    """Shared AxisCurve for a spec; building one samples the curvature densely."""
    return _axis_from_json(curve.model_dump_json(by_alias=True))


class DomainSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    L: float = Field(gt=0, description="Half-width of the reference tube.")
    epsilon_list: list[float] = Field(min_length=1, description="Decreasing tube half-widths.")
    T: float = Field(ge=0, description="Final time.")

    @field_validator("epsilon_list")
    @classmethod
    def _decreasing(cls, value: list[float]) -> list[float]:
        if any(eps <= 0 for eps in value):
            raise ValueError("every epsilon must be positive")
        if any(a <= b for a, b in zip(value, value[1:])):
            raise ValueError("epsilon_list must be strictly decreasing")
        return value


class NumericsSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_sigma: int = Field(ge=3)
    n_s: int | list[int]
    dt: float = Field(gt=0)
    picard_tol: float = Field(default=1e-10, gt=0)
    picard_max: int = Field(default=50, ge=1)
    theta_scheme: float = Field(default=1.0, ge=0.5, le=1.0)
    output_every: int = Field(default=1, ge=1)
    refine_with_epsilon: bool = Field(
        default=False,
        description="In convergence studies, halve h_sigma and dt at each successive epsilon.",
    )


class AnalysisSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lambda_: float = Field(alias="lambda", gt=0, lt=1)
    alpha: float = Field(gt=0, lt=1)
    pair_budget: int = Field(default=4000, ge=1000)
    seed: int = 0
    delta_levels: int = Field(default=13, ge=1)
    window_margin: float = Field(default=0.1, ge=0, lt=0.5)
    t0_fraction: float = Field(default=0.1, ge=0, lt=1)


class Scenario(BaseModel):
    """A full problem instance. Consistency with the axis geometry is checked at construction."""

    model_config = ConfigDict(extra="forbid")

    curve: CurveSpec
    domain: DomainSpec
    kernel: KernelSpec
    reaction: ReactionSpec
    boundary: BoundaryData
    numerics: NumericsSpec
    analysis: AnalysisSpec

    @model_validator(mode="after")
    def _check_consistency(self) -> "Scenario":
        try:
            axis = axis_for(self.curve)
        except GeometryError as e:
            raise ValueError(f"curve: {e}") from e
        L0 = axis.min_curvature_radius
        domain, numerics = self.domain, self.numerics
        if not domain.L < L0:
            raise ValueError(f"domain.L: {domain.L} must be below the minimum curvature radius {L0:.12g}")
        for k, eps in enumerate(domain.epsilon_list):
            if not eps < domain.L:
                raise ValueError(f"domain.epsilon_list.{k}: {eps} must be below L = {domain.L}")

        n_s_list = numerics.n_s if isinstance(numerics.n_s, list) else [numerics.n_s] * len(domain.epsilon_list)
        if len(n_s_list) != len(domain.epsilon_list):
            raise ValueError("numerics.n_s: needs one entry per epsilon")
        for k, n_s in enumerate(n_s_list):
            if n_s < 3 or n_s % 2 == 0:
                raise ValueError(f"numerics.n_s.{k}: must be an odd integer >= 3, got {n_s}")

        if domain.T > 0:
            if numerics.dt > domain.T:
                raise ValueError(f"numerics.dt: {numerics.dt} exceeds the final time {domain.T}")
            steps = domain.T / numerics.dt
            if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
                raise ValueError(f"numerics.dt: {numerics.dt} must divide domain.T = {domain.T}")

        if numerics.theta_scheme < 1.0:
            h_sigma = axis.length / (numerics.n_sigma - 1)
            for eps, n_s in zip(domain.epsilon_list, n_s_list):
                h_s = 2 * eps / (n_s - 1)
                bend = eps / L0
                rate = 2 / ((1.0 - bend) ** 2 * h_sigma**2) + 2 * (1.0 + bend) / ((1.0 - bend) * h_s**2)
                if numerics.dt * (1.0 - numerics.theta_scheme) * rate > 1.0:
                    raise ValueError(
                        f"numerics.dt: {numerics.dt} breaks the positivity limit of the "
                        f"theta={numerics.theta_scheme} scheme at epsilon {eps}"
                    )
        return self

    @property
    def axis(self) -> AxisCurve:
        return axis_for(self.curve)

    @property
    def epsilon_list(self) -> list[float]:
        return self.domain.epsilon_list

    @property
    def steps(self) -> int:
        return int(round(self.domain.T / self.numerics.dt)) if self.domain.T > 0 else 0

    def epsilon_index(self, epsilon: float) -> int:
        for k, eps in enumerate(self.domain.epsilon_list):
            if math.isclose(eps, epsilon, rel_tol=1e-12, abs_tol=0.0):
                return k
        raise ModelError(f"epsilon {epsilon} is not in the scenario list {self.domain.epsilon_list}")

    def n_s_for(self, epsilon: float) -> int:
        n_s = self.numerics.n_s
        return n_s[self.epsilon_index(epsilon)] if isinstance(n_s, list) else n_s

    def chart(self, epsilon: float) -> FermiChart:
        return FermiChart(self.axis, float(epsilon))

    def grid(self, epsilon: float, *, insulated_terminals: bool = False) -> GullyGrid:
        return build_grid(
            self.chart(epsilon), self.numerics.n_sigma, self.n_s_for(epsilon), insulated_terminals=insulated_terminals
        )

    def reduced_grid(self, n_sigma: int | None = None) -> ReducedGrid:
        # The reduced problem lives on the axis; any admissible chart carries it.
        return build_reduced_grid(self.chart(self.domain.epsilon_list[-1]), n_sigma or self.numerics.n_sigma)

    def with_seed(self, seed: int) -> "Scenario":
        return self.model_copy(update={"analysis": self.analysis.model_copy(update={"seed": seed})})

    def refined(self, factor: int) -> "Scenario":
        """The same problem with h_sigma and dt divided by ``factor``; output times are kept."""
        if factor == 1:
            return self
        numerics = self.numerics
        finer = numerics.model_copy(
            update={
                "n_sigma": factor * (numerics.n_sigma - 1) + 1,
                "dt": numerics.dt / factor,
                "output_every": numerics.output_every * factor,
            }
        )
        return self.model_copy(update={"numerics": finer})
