"""Sampled Hölder norms, the reflection/rescaling extension and the regularity probe.

Every seminorm here is a maximum of difference quotients over a finite pair
set, so it bounds the true supremum from below. A pair set is built once per
sample cloud (seeded random pairs, all lattice-adjacent pairs, and every pair
of extremal samples) and then restricted to subsets, which keeps estimates
monotone under set inclusion.

Norm families, with ⟨·⟩ the time seminorm of exponent (1 + a)/2:

    |u|_a     = |u|_0 + [u]_a                                       0 < a < 1
    |u|_{1+a} = |u|_0 + ⟨u⟩_a + |∇u|_0 + [∇u]_a
    |u|_{2+a} = |u|_0 + |u_t|_0 + [u_t]_a + |∇u|_0 + ⟨∇u⟩_a + |D²u|_0 + [D²u]_a

The weighted norm is sup over δ of δ^{a+b} times the norm on the δ-interior.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.interpolate import CubicSpline

from gullyfire.config import ConfigurationError
from gullyfire.grid import GullyGrid, build_grid
from gullyfire.solver import FieldSnapshot

logger = logging.getLogger(__name__)

EMPIRICAL_RATIO_LIMIT = 10.0


class AnalysisError(ConfigurationError):
    """An estimator was asked for something the samples cannot provide."""


def parabolic_distance(dx, dt) -> np.ndarray | float:
    """(|dx|² + |dt|)^{1/2}; ``dx`` has its spatial components last."""
    dx = np.asarray(dx, dtype=float)
    result = np.sqrt(np.sum(dx**2, axis=-1) + np.abs(np.asarray(dt, dtype=float)))
    return float(result) if np.ndim(result) == 0 else result


class NormRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    a: float = Field(ge=0, lt=3, description="Regularity exponent.")
    b: float = Field(description="Boundary weight exponent, at least −a.")
    delta_grid: tuple[float, ...] | None = Field(default=None, description="Explicit decreasing δ values.")
    delta_levels: int = Field(default=13, ge=1, description="Geometric levels diam·2^{-j} when no grid is given.")
    pair_budget: int = Field(default=4000, ge=1000)
    seed: int = 0
    max_snapshots: int = Field(default=41, ge=2, description="Output times kept from a trajectory.")

    @model_validator(mode="after")
    def _check(self) -> "NormRequest":
        if self.b < -self.a:
            raise ValueError(f"b = {self.b} must be at least -a = {-self.a}")
        if self.delta_grid is not None:
            grid = self.delta_grid
            if not grid or any(d <= 0 for d in grid) or any(x <= y for x, y in zip(grid, grid[1:])):
                raise ValueError("delta_grid must be positive and strictly decreasing")
        return self

    def deltas(self, diameter: float) -> np.ndarray:
        if self.delta_grid is not None:
            return np.asarray(self.delta_grid, dtype=float)
        return diameter * 2.0 ** -np.arange(self.delta_levels)


# -- samples and pairs -----------------------------------------------------------


def _magnitude(diff: np.ndarray) -> np.ndarray:
    return np.abs(diff) if diff.ndim == 1 else np.linalg.norm(diff, axis=-1)


@dataclass(frozen=True, eq=False)
class SampleCloud:
    """Points (optionally timed) with one or more sampled fields.

    Lattice clouds are laid out time-major, sample ``k·n_sites + node``.
    """

    points: np.ndarray
    fields: dict[str, np.ndarray]
    boundary_distance: np.ndarray
    adjacent: np.ndarray
    extremal: np.ndarray
    times: np.ndarray | None = None
    n_sites: int = 0
    n_times: int = 1

    @classmethod
    def from_samples(cls, points, values, *, times=None, boundary_distance=None) -> "SampleCloud":
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = np.stack([points, np.zeros_like(points)], axis=1)
        values = np.asarray(values, dtype=float)
        n = len(points)
        if n < 2:
            raise AnalysisError(f"Need at least 2 samples, got {n}")
        if len(values) != n:
            raise AnalysisError(f"{len(values)} values for {n} points")
        extremal = [np.argmin(points[:, 0]), np.argmax(points[:, 0]), np.argmin(points[:, 1]), np.argmax(points[:, 1])]
        if times is not None:
            times = np.asarray(times, dtype=float)
            extremal += [np.argmin(times), np.argmax(times)]
        distance = np.full(n, np.inf) if boundary_distance is None else np.asarray(boundary_distance, dtype=float)
        step = np.arange(n - 1)
        return cls(
            points=points,
            fields={"u": values},
            boundary_distance=distance,
            adjacent=np.stack([step, step + 1], axis=1),
            extremal=np.unique(extremal),
            times=times,
            n_sites=n,
            n_times=1,
        )

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def diameter(self) -> float:
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.hypot(*span))

    def interior(self, delta: float) -> np.ndarray:
        """Samples with boundary distance > δ, and t > δ^{1/2} when timed."""
        mask = self.boundary_distance > delta
        if self.times is not None:
            mask &= self.times > math.sqrt(delta)
        return mask

    def require(self, name: str) -> np.ndarray:
        if name not in self.fields:
            raise AnalysisError(f"Sample cloud carries no '{name}' field")
        return self.fields[name]


@dataclass(frozen=True, eq=False)
class PairSet:
    first: np.ndarray
    second: np.ndarray

    def __len__(self) -> int:
        return len(self.first)

    @classmethod
    def empty(cls) -> "PairSet":
        return cls(np.empty(0, dtype=int), np.empty(0, dtype=int))

    @classmethod
    def build(cls, cloud: SampleCloud, budget: int, seed: int) -> "PairSet":
        """Seeded random pairs plus adjacent pairs plus all extremal pairs."""
        rng = np.random.default_rng(seed)
        i = rng.integers(0, cloud.size, budget)
        j = rng.integers(0, cloud.size, budget)
        ci, cj = np.triu_indices(len(cloud.extremal), k=1)
        first = np.concatenate([i, cloud.adjacent[:, 0], cloud.extremal[ci]])
        second = np.concatenate([j, cloud.adjacent[:, 1], cloud.extremal[cj]])
        keep = first != second
        return cls(first[keep], second[keep])

    @classmethod
    def temporal(cls, cloud: SampleCloud, budget: int, seed: int) -> "PairSet":
        """Same-site pairs at different times: random, consecutive, and first-last."""
        if cloud.times is None or cloud.n_times < 2:
            return cls.empty()
        rng = np.random.default_rng((seed, 1))
        sites, steps = cloud.n_sites, cloud.n_times
        node = rng.integers(0, sites, budget)
        k1 = rng.integers(0, steps, budget)
        k2 = rng.integers(0, steps, budget)
        every = np.arange(sites)
        consecutive = np.arange(steps - 1)
        first = np.concatenate([
            k1 * sites + node,
            (consecutive[:, None] * sites + every[None, :]).ravel(),
            every,
        ])
        second = np.concatenate([
            k2 * sites + node,
            ((consecutive[:, None] + 1) * sites + every[None, :]).ravel(),
            (steps - 1) * sites + every,
        ])
        keep = first != second
        return cls(first[keep], second[keep])

    def restricted(self, mask: np.ndarray) -> "PairSet":
        keep = mask[self.first] & mask[self.second]
        return PairSet(self.first[keep], self.second[keep])

    def union(self, other: "PairSet") -> "PairSet":
        return PairSet(np.concatenate([self.first, other.first]), np.concatenate([self.second, other.second]))


def _spatial_quotient(cloud: SampleCloud, values: np.ndarray, pairs: PairSet, exponent: float) -> float:
    if len(pairs) == 0:
        return 0.0
    diff = _magnitude(values[pairs.first] - values[pairs.second])
    dx = cloud.points[pairs.first] - cloud.points[pairs.second]
    if cloud.times is None:
        distance = np.linalg.norm(dx, axis=-1)
    else:
        distance = parabolic_distance(dx, cloud.times[pairs.first] - cloud.times[pairs.second])
    keep = distance > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(diff[keep] / distance[keep] ** exponent))


def _temporal_quotient(cloud: SampleCloud, values: np.ndarray, pairs: PairSet, exponent: float) -> float:
    if len(pairs) == 0:
        return 0.0
    diff = _magnitude(values[pairs.first] - values[pairs.second])
    gap = np.abs(cloud.times[pairs.first] - cloud.times[pairs.second])
    keep = gap > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(diff[keep] / gap[keep] ** ((1.0 + exponent) / 2.0)))


def holder_seminorm_estimate(points, values, a: float, request: NormRequest, *, times=None, pairs=None) -> float:
    """Max of |u(x) − u(y)|/d(x, y)^a over the sampled pairs; d is parabolic when timed.

    A lower bound for the true seminorm. Vector values use the Euclidean norm.
    """
    if not 0 < a < 1:
        raise AnalysisError(f"Hölder exponent must lie in (0, 1), got {a}")
    if isinstance(points, SampleCloud):
        cloud = points
        values = cloud.fields["u"] if values is None else np.asarray(values, dtype=float)
    else:
        cloud = SampleCloud.from_samples(points, values, times=times)
        values = cloud.fields["u"]
    pairs = pairs if pairs is not None else PairSet.build(cloud, request.pair_budget, request.seed)
    return _spatial_quotient(cloud, values, pairs, a)


# -- lattice derivatives ---------------------------------------------------------


def chart_derivatives(grid: GullyGrid, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian gradient ``[..., 2]`` and Hessian ``[..., 2, 2]`` of node values.

    ``values`` is indexed ``[..., i, j]``. Chart differences come from
    second-order ``np.gradient`` and are mapped with the frame:
    ∇u = (u_σ/J)·T + u_s·ν.
    """

    def grad(v: np.ndarray) -> np.ndarray:
        d_sigma = np.gradient(v, grid.h_sigma, axis=-2, edge_order=2)
        d_s = np.gradient(v, grid.h_s, axis=-1, edge_order=2)
        along = d_sigma / grid.jacobian
        return along[..., None] * grid.tangent[:, None, :] + d_s[..., None] * grid.normal[:, None, :]

    gradient = grad(np.asarray(values, dtype=float))
    hessian = np.stack([grad(gradient[..., 0]), grad(gradient[..., 1])], axis=-2)
    return gradient, hessian


def _subsample(count: int, keep: int) -> np.ndarray:
    if count <= keep:
        return np.arange(count)
    return np.unique(np.round(np.linspace(0, count - 1, keep)).astype(int))


def cloud_from_field(target, grid: GullyGrid | None = None, *, max_snapshots: int = 41) -> SampleCloud:
    """Sample cloud of a snapshot, a trajectory, or a bare node array on ``grid``."""
    if isinstance(target, np.ndarray):
        if grid is None:
            raise AnalysisError("A bare value array needs its grid")
        target = FieldSnapshot(grid, 0.0, target)
    snapshots = [target] if isinstance(target, FieldSnapshot) else list(target)
    if not snapshots:
        raise AnalysisError("Empty trajectory")
    grid = snapshots[0].grid
    stack = np.stack([snapshot.values for snapshot in snapshots])
    times = np.array([snapshot.t for snapshot in snapshots])
    gradient, hessian = chart_derivatives(grid, stack)
    timed = len(snapshots) > 1

    pick = _subsample(len(snapshots), max_snapshots)
    n_times, n_nodes = len(pick), grid.size
    fields = {
        "u": stack[pick].reshape(-1),
        "gradient": gradient[pick].reshape(-1, 2),
        "hessian": hessian[pick].reshape(-1, 4),
    }
    if timed:
        fields["rate"] = np.gradient(stack, times, axis=0)[pick].reshape(-1)

    index = np.arange(n_nodes).reshape(grid.shape)
    neighbours = np.concatenate([
        np.stack([index[:-1, :].ravel(), index[1:, :].ravel()], axis=1),
        np.stack([index[:, :-1].ravel(), index[:, 1:].ravel()], axis=1),
    ])
    offsets = np.arange(n_times)[:, None, None] * n_nodes
    adjacent = (neighbours[None, :, :] + offsets).reshape(-1, 2)
    if timed:
        consecutive = np.arange(n_times - 1)[:, None] * n_nodes + np.arange(n_nodes)[None, :]
        adjacent = np.concatenate([adjacent, np.stack([consecutive.ravel(), consecutive.ravel() + n_nodes], axis=1)])
    corners = index[[0, 0, -1, -1], [0, -1, 0, -1]]
    extremal = np.concatenate([corners, corners + (n_times - 1) * n_nodes])

    return SampleCloud(
        points=np.tile(grid.points.reshape(-1, 2), (n_times, 1)),
        fields=fields,
        boundary_distance=np.tile(grid.dirichlet_distances.ravel(), n_times),
        adjacent=adjacent,
        extremal=np.unique(extremal),
        times=np.repeat(times[pick], n_nodes) if timed else None,
        n_sites=n_nodes,
        n_times=n_times,
    )


# -- norms -----------------------------------------------------------------------


class DeltaRow(BaseModel):
    delta: float
    samples: int
    norm: float | None = None
    weighted: float | None = None
    skipped: bool = False


class NormReport(BaseModel):
    a: float
    b: float
    value: float
    per_delta: list[DeltaRow]


def _norm_on(cloud: SampleCloud, pairs: PairSet, temporal: PairSet, mask: np.ndarray, a: float) -> float:
    whole = int(math.floor(a))
    frac = a - whole
    space = pairs.restricted(mask)
    time = temporal.restricted(mask)

    def sup(name: str) -> float:
        return float(np.max(_magnitude(cloud.require(name)[mask])))

    def semi(name: str) -> float:
        return _spatial_quotient(cloud, cloud.require(name), space, frac) if frac > 0 else 0.0

    def tsemi(name: str) -> float:
        return _temporal_quotient(cloud, cloud.require(name), time, frac) if cloud.times is not None else 0.0

    if whole == 0:
        return sup("u") + semi("u")
    if whole == 1:
        return sup("u") + tsemi("u") + sup("gradient") + semi("gradient")
    total = sup("u") + sup("gradient") + tsemi("gradient") + sup("hessian") + semi("hessian")
    if cloud.times is not None:
        total += sup("rate") + semi("rate")
    return total


def _open_domain(cloud: SampleCloud) -> np.ndarray:
    mask = cloud.boundary_distance > 0
    if cloud.times is not None:
        mask &= cloud.times > 0
    return mask


def _cloud_for(target, grid, request: NormRequest) -> SampleCloud:
    if isinstance(target, SampleCloud):
        return target
    return cloud_from_field(target, grid, max_snapshots=request.max_snapshots)


def norm_estimate(target, grid: GullyGrid | None, request: NormRequest, mask: np.ndarray | None = None) -> float:
    """Unweighted norm of order ``request.a`` on a sampled field.

    Args:
        target: A SampleCloud, a snapshot, a trajectory, or a bare value array.
        grid: Lattice of ``target`` when it is a bare value array.
        request: Norm order, pair budget and seed.
        mask: Samples the norm is taken over; defaults to the open domain.

    Returns:
        sup|u| plus the sampled seminorms of the order's family.

    Raises:
        AnalysisError: ``mask`` selects no sample.
    """
    cloud = _cloud_for(target, grid, request)
    mask = _open_domain(cloud) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if not np.any(mask):
        raise AnalysisError("Norm requested on an empty sample set")
    pairs = PairSet.build(cloud, request.pair_budget, request.seed)
    temporal = PairSet.temporal(cloud, request.pair_budget, request.seed)
    return _norm_on(cloud, pairs, temporal, mask, request.a)


def weighted_norm_estimate(target, grid: GullyGrid | None, request: NormRequest) -> NormReport:
    """sup over δ of δ^{a+b}·|u|_{a; I_δ}, with the per-δ table.

    When a + b = 0 every weight is 1 and the supremum over the nested
    interiors is the norm on their union, the open domain; that level is
    included as δ = 0.
    """
    cloud = _cloud_for(target, grid, request)
    pairs = PairSet.build(cloud, request.pair_budget, request.seed)
    temporal = PairSet.temporal(cloud, request.pair_budget, request.seed)
    power = request.a + request.b

    levels = [(float(delta), cloud.interior(float(delta))) for delta in request.deltas(cloud.diameter)]
    if abs(power) <= 1e-15:
        levels.insert(0, (0.0, _open_domain(cloud)))

    rows = []
    for delta, mask in levels:
        count = int(np.count_nonzero(mask))
        if count == 0:
            logger.debug(f"δ={delta:.3e}: empty interior, skipped")
            rows.append(DeltaRow(delta=delta, samples=0, skipped=True))
            continue
        norm = _norm_on(cloud, pairs, temporal, mask, request.a)
        weight = 1.0 if power == 0 else delta**power
        rows.append(DeltaRow(delta=delta, samples=count, norm=norm, weighted=weight * norm))

    measured = [row.weighted for row in rows if not row.skipped]
    if not measured:
        raise AnalysisError("Every δ-interior is empty; the δ grid is too coarse for this domain")
    return NormReport(a=request.a, b=request.b, value=max(measured), per_delta=rows)


class ProbeEntry(BaseModel):
    epsilon: float
    value: float


class ProbeReport(BaseModel):
    per_epsilon: list[ProbeEntry]
    max_min_ratio: float
    threshold: float = EMPIRICAL_RATIO_LIMIT
    threshold_source: str = "empirical freeze"
    passed: bool


def regularity_probe(
    trajectories: Mapping[float, Sequence[FieldSnapshot]],
    lam: float,
    alpha: float,
    request: NormRequest | None = None,
) -> ProbeReport:
    """Weighted 2+α norms with weight −λ per ε and their max/min ratio."""
    if request is None:
        request = NormRequest(a=2 + alpha, b=-lam)
    else:
        request = request.model_copy(update={"a": 2 + alpha, "b": -lam})
    entries = []
    for epsilon, trajectory in trajectories.items():
        report = weighted_norm_estimate(trajectory, None, request)
        logger.info(f"Regularity probe epsilon={epsilon}: {report.value:.6g}")
        entries.append(ProbeEntry(epsilon=epsilon, value=report.value))

    values = [entry.value for entry in entries]
    if not values or max(values) == 0.0:
        ratio = 1.0
    elif min(values) == 0.0:
        ratio = math.inf
    else:
        ratio = max(values) / min(values)
    return ProbeReport(per_epsilon=entries, max_min_ratio=ratio, passed=ratio <= EMPIRICAL_RATIO_LIMIT)


# -- reflection and rescaling ----------------------------------------------------


def fold(s, epsilon: float):
    """The 4ε-periodic even fold: s on [−ε, ε), 2ε − s on [ε, 3ε)."""
    s = np.asarray(s, dtype=float)
    r = np.mod(s + epsilon, 4 * epsilon) - epsilon
    result = np.where(r < epsilon, r, 2 * epsilon - r)
    return float(result) if result.ndim == 0 else result


class ReflectionSetup(BaseModel):
    model_config = ConfigDict(frozen=True)

    epsilon: float
    L: float
    frak_K: int = Field(description="Smallest k with (1 + 2k)·ε ≥ L/3.")
    tau: float
    intervals: list[tuple[float, float]] = Field(description="V_m = [(2m − 1)ε, (2m + 1)ε] for |m| ≤ frak_K.")


def reflection_params(epsilon: float, L: float) -> ReflectionSetup:
    if not 0 < epsilon < L:
        raise AnalysisError(f"Need 0 < epsilon < L, got epsilon={epsilon}, L={L}")
    k = max(0, math.ceil((L / (3 * epsilon) - 1) / 2 - 1e-12))
    while (1 + 2 * k) * epsilon < L / 3:
        k += 1
    while k > 0 and (1 + 2 * (k - 1)) * epsilon >= L / 3:
        k -= 1
    intervals = [((2 * m - 1) * epsilon, (2 * m + 1) * epsilon) for m in range(-k, k + 1)]
    return ReflectionSetup(epsilon=epsilon, L=L, frak_K=k, tau=(1 + 2 * k) * epsilon, intervals=intervals)


def reflected_grid(grid: GullyGrid, setup: ReflectionSetup) -> GullyGrid:
    """Ω_τ lattice sharing the σ nodes and the s spacing of ``grid``."""
    n_s = (1 + 2 * setup.frak_K) * (grid.n_s - 1) + 1
    return build_grid(grid.chart.with_epsilon(setup.tau), grid.n_sigma, n_s)


def _fold_index(grid: GullyGrid, setup: ReflectionSetup) -> np.ndarray:
    """Source s index for every node of the reflected lattice."""
    last = grid.n_s - 1
    period = 2 * last
    offset = np.arange((1 + 2 * setup.frak_K) * last + 1) - setup.frak_K * last
    r = np.mod(offset, period)
    return np.where(r <= last, r, period - r)


def _check_reflection_target(source: GullyGrid, target: GullyGrid, setup: ReflectionSetup) -> None:
    if not math.isclose(source.epsilon, setup.epsilon, rel_tol=1e-12):
        raise AnalysisError(f"Field half-width {source.epsilon} does not match the setup's {setup.epsilon}")
    if target.n_sigma != source.n_sigma or not np.allclose(target.sigma, source.sigma, rtol=0, atol=1e-12):
        raise AnalysisError("Reflected lattice must share the σ nodes of the source")
    if not math.isclose(target.h_s, source.h_s, rel_tol=1e-9) or target.n_s != (1 + 2 * setup.frak_K) * (
        source.n_s - 1
    ) + 1:
        raise AnalysisError("Reflected lattice must reuse the source s spacing across [-τ, τ]")


def reflect_extend(field: FieldSnapshot, setup: ReflectionSetup, target: GullyGrid | None = None) -> FieldSnapshot:
    """(Ru)(σ, s) = u(σ, ω(s)) on the Ω_τ lattice; reflected s values land on nodes."""
    target = target or reflected_grid(field.grid, setup)
    _check_reflection_target(field.grid, target, setup)
    return FieldSnapshot(target, field.t, field.values[:, _fold_index(field.grid, setup)])


def rescale_extend(field: FieldSnapshot, setup: ReflectionSetup, target: GullyGrid | None = None) -> FieldSnapshot:
    """(Tu)(σ, s) = u(σ, (τ/L)·s) on the Ω_L lattice, cubic in s between nodes."""
    source = field.grid
    target = target or build_grid(source.chart.with_epsilon(setup.L), source.n_sigma, source.n_s)
    if target.n_sigma != source.n_sigma or not np.allclose(target.sigma, source.sigma, rtol=0, atol=1e-12):
        raise AnalysisError("Rescaled lattice must share the σ nodes of the source")
    if not math.isclose(source.epsilon, setup.tau, rel_tol=1e-12):
        raise AnalysisError(f"Field half-width {source.epsilon} is not τ = {setup.tau}")
    if math.isclose(setup.tau, setup.L, rel_tol=1e-15) and target.n_s == source.n_s:
        return FieldSnapshot(target, field.t, field.values.copy())
    pulled = np.clip(setup.tau / setup.L * target.s, -setup.tau, setup.tau)
    spline = CubicSpline(source.s, field.values, axis=1)
    return FieldSnapshot(target, field.t, spline(pulled))


class ReflectionDistanceReport(BaseModel):
    delta: float
    min_ratio: float
    margin: float
    passed: bool


def reflection_distance_check(setup: ReflectionSetup, grid: GullyGrid, delta: float | None = None) -> ReflectionDistanceReport:
    """Reflected nodes stay comparably far from the terminals.

    For Ω_τ nodes at distance > δ, the ratio of the reflected node's distance
    to the original distance is reported against c = (1 − ε/L0)/(1 + τ/L0).
    """
    delta = grid.h_sigma if delta is None else delta
    target = reflected_grid(grid, setup)
    reflected = grid.dirichlet_distances[:, _fold_index(grid, setup)]
    original = target.dirichlet_distances
    mask = original > delta
    if not np.any(mask):
        raise AnalysisError(f"No reflected node lies farther than {delta} from the terminals")
    ratio = float(np.min(reflected[mask] / original[mask]))
    L0 = grid.chart.L0
    margin = (1 - setup.epsilon / L0) / (1 + setup.tau / L0) if math.isfinite(L0) else 1.0
    return ReflectionDistanceReport(delta=delta, min_ratio=ratio, margin=margin, passed=ratio >= margin * (1 - 1e-9))
