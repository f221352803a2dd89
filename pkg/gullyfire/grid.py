"""Tensor-product lattices on the gully and on its axis.

The gully grid is uniform in Fermi coordinates: σ_i = i·h_σ along the axis
and s_j = −ε + j·h_s across it, with an odd number of transverse nodes so
the axis itself is a grid line. Nodes are tagged by the boundary piece they
sit on. The hillsides s = ±ε are insulating (Neumann) and the two terminal
cross-sections carry Dirichlet data. Corners belong to the Dirichlet
terminals. Quadrature weights are 2-D trapezoid weights times the chart's
area element 1 − sκ.
"""

import enum
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from gullyfire.config import ConfigurationError
from gullyfire.geometry import FermiChart

logger = logging.getLogger(__name__)


class GridError(ConfigurationError):
    """The requested lattice cannot discretize the gully."""


class NodeTag(enum.IntEnum):
    INTERIOR = 0
    NEUMANN_TOP = 1
    NEUMANN_BOTTOM = 2
    DIRICHLET_INLET = 3
    DIRICHLET_OUTLET = 4
    CORNER = 5


_TERMINAL_TAGS = (NodeTag.DIRICHLET_INLET, NodeTag.DIRICHLET_OUTLET, NodeTag.CORNER)
_NEUMANN_TAGS = (NodeTag.NEUMANN_TOP, NodeTag.NEUMANN_BOTTOM)


def trapezoid_factors(n: int) -> np.ndarray:
    factors = np.ones(n)
    factors[[0, -1]] = 0.5
    return factors


@dataclass(frozen=True, eq=False)
class GullyGrid:
    """Lattice on Ω_ε. Node arrays are indexed ``[i, j]`` (σ first)."""

    chart: FermiChart
    n_sigma: int
    n_s: int
    h_sigma: float
    h_s: float
    sigma: np.ndarray
    s: np.ndarray
    tags: np.ndarray
    weights: np.ndarray
    jacobian: np.ndarray
    curvature: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    points: np.ndarray
    insulated_terminals: bool = False

    @property
    def epsilon(self) -> float:
        return self.chart.epsilon

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_sigma, self.n_s)

    @property
    def size(self) -> int:
        return self.n_sigma * self.n_s

    @property
    def terminal_mask(self) -> np.ndarray:
        return np.isin(self.tags, _TERMINAL_TAGS)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        if self.insulated_terminals:
            return np.zeros(self.shape, dtype=bool)
        return self.terminal_mask

    @property
    def neumann_mask(self) -> np.ndarray:
        return np.isin(self.tags, _NEUMANN_TAGS)

    def node_index(self, node) -> tuple[int, int]:
        if isinstance(node, (int, np.integer)):
            if not 0 <= node < self.size:
                raise GridError(f"Node {node} outside a grid of {self.size} nodes")
            return divmod(int(node), self.n_s)
        i, j = node
        if not (0 <= i < self.n_sigma and 0 <= j < self.n_s):
            raise GridError(f"Node {node} outside a {self.n_sigma}x{self.n_s} grid")
        return int(i), int(j)

    @cached_property
    def dirichlet_distances(self) -> np.ndarray:
        """Euclidean distance of every node to the two terminal segments."""
        curve, eps = self.chart.curve, self.chart.epsilon
        flat = self.points.reshape(-1, 2)
        distances = []
        for sigma in (0.0, self.chart.total_length):
            frame = curve.frame(sigma)
            start = frame.point - eps * frame.normal
            span = 2 * eps * frame.normal
            along = np.clip(((flat - start) @ span) / float(span @ span), 0.0, 1.0)
            nearest = start + along[:, None] * span
            distances.append(np.linalg.norm(flat - nearest, axis=1))
        result = np.minimum(*distances).reshape(self.shape)
        result[self.terminal_mask] = 0.0
        return result


@dataclass(frozen=True, eq=False)
class ReducedGrid:
    """Axis lattice sharing the σ nodes of a gully grid."""

    chart: FermiChart
    n_sigma: int
    h_sigma: float
    sigma: np.ndarray
    weights: np.ndarray
    tags: np.ndarray

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return np.isin(self.tags, (NodeTag.DIRICHLET_INLET, NodeTag.DIRICHLET_OUTLET))


def _axis_lattice(chart: FermiChart, n_sigma: int) -> tuple[np.ndarray, float]:
    length = chart.total_length
    sigma = np.linspace(0.0, length, n_sigma)
    sigma[-1] = length
    return sigma, length / (n_sigma - 1)


def build_grid(chart: FermiChart, n_sigma: int, n_s: int, *, insulated_terminals: bool = False) -> GullyGrid:
    """Uniform (σ, s) lattice on Ω_ε with tags and Jacobian-weighted trapezoid weights.

    ``insulated_terminals`` replaces the Dirichlet terminals by insulating
    walls; it exists for conservation checks only.
    """
    if n_sigma < 3:
        raise GridError(f"n_sigma must be at least 3, got {n_sigma}")
    if n_s < 3:
        raise GridError(f"n_s must be at least 3, got {n_s}")
    if n_s % 2 == 0:
        raise GridError(f"n_s must be odd so the axis s = 0 is a grid line, got {n_s}")

    eps = chart.epsilon
    sigma, h_sigma = _axis_lattice(chart, n_sigma)
    s = np.linspace(-eps, eps, n_s)
    s[[0, n_s // 2, -1]] = (-eps, 0.0, eps)
    h_s = 2 * eps / (n_s - 1)

    frame = chart.curve.frame(sigma)
    jacobian = 1.0 - s[None, :] * frame.curvature[:, None]
    points = frame.point[:, None, :] + s[None, :, None] * frame.normal[:, None, :]

    tags = np.full((n_sigma, n_s), NodeTag.INTERIOR, dtype=np.int8)
    tags[:, -1] = NodeTag.NEUMANN_TOP
    tags[:, 0] = NodeTag.NEUMANN_BOTTOM
    tags[0, :] = NodeTag.DIRICHLET_INLET
    tags[-1, :] = NodeTag.DIRICHLET_OUTLET
    tags[[0, 0, -1, -1], [0, -1, 0, -1]] = NodeTag.CORNER

    weights = np.outer(trapezoid_factors(n_sigma) * h_sigma, trapezoid_factors(n_s) * h_s) * jacobian
    logger.debug(f"Built {n_sigma}x{n_s} grid on a tube of half-width {eps}")
    return GullyGrid(
        chart=chart,
        n_sigma=n_sigma,
        n_s=n_s,
        h_sigma=h_sigma,
        h_s=h_s,
        sigma=sigma,
        s=s,
        tags=tags,
        weights=weights,
        jacobian=jacobian,
        curvature=np.asarray(frame.curvature, dtype=float),
        tangent=frame.tangent,
        normal=frame.normal,
        points=points,
        insulated_terminals=insulated_terminals,
    )


def build_reduced_grid(chart: FermiChart, n_sigma: int) -> ReducedGrid:
    if n_sigma < 3:
        raise GridError(f"n_sigma must be at least 3, got {n_sigma}")
    sigma, h_sigma = _axis_lattice(chart, n_sigma)
    tags = np.full(n_sigma, NodeTag.INTERIOR, dtype=np.int8)
    tags[0], tags[-1] = NodeTag.DIRICHLET_INLET, NodeTag.DIRICHLET_OUTLET
    return ReducedGrid(
        chart=chart,
        n_sigma=n_sigma,
        h_sigma=h_sigma,
        sigma=sigma,
        weights=trapezoid_factors(n_sigma) * h_sigma,
        tags=tags,
    )


def reduced_grid_for(grid: GullyGrid) -> ReducedGrid:
    return build_reduced_grid(grid.chart, grid.n_sigma)


def dirichlet_distance(grid: GullyGrid, node) -> float:
    """Distance from a node's image to the nearest point of the terminal segments."""
    i, j = grid.node_index(node)
    return float(grid.dirichlet_distances[i, j])


def interior_set(grid: GullyGrid, delta: float) -> np.ndarray:
    """Boolean node mask of the δ-interior, dist(x, terminals) > δ."""
    if delta < 0:
        raise GridError(f"delta must be nonnegative, got {delta}")
    return grid.dirichlet_distances > delta


def space_time_interior(grid: GullyGrid, times, delta: float) -> np.ndarray:
    """Mask ``[t, i, j]`` of space-time nodes with dist > δ and t > δ^(1/2)."""
    times = np.asarray(times, dtype=float)
    return interior_set(grid, delta)[None, :, :] & (times > np.sqrt(delta))[:, None, None]
