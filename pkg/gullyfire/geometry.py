"""Gully axis curves and the Fermi chart on the tube around them.

The axis of a gully is a regular planar curve drawn from a small catalog of
parametric families. It is reparametrized by arclength σ, and every point of
the tube of half-width ε is addressed by Fermi coordinates (σ, s): the foot
point on the axis and the signed distance along the unit normal. The chart
is injective while ε stays below the smallest curvature radius L0 of the
axis, and every curvature, Jacobian and offset-curve quantity the solver
needs is evaluated here in those coordinates.

Sign conventions: the normal is the tangent rotated 90° counterclockwise,
times the curve's orientation flag, and the curvature κ is signed so that
dT/dσ = κ·ν. A point at offset s sees the area element 1 − sκ.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.optimize import minimize_scalar

logger = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12
CURVATURE_SAMPLES = 100_001

CurveKind = Literal["segment", "circular_arc", "sine_perturbed", "cubic_spline"]

_REQUIRED = {
    "segment": ("x0", "y0", "x1", "y1"),
    "circular_arc": ("radius", "span"),
    "sine_perturbed": ("length", "amplitude", "wavenumber"),
    "cubic_spline": ("points",),
}
_OPTIONAL = {
    "circular_arc": ("center_x", "center_y", "start_angle"),
}


class GeometryError(Exception):
    """The axis curve or chart cannot carry Fermi coordinates."""


class DomainError(GeometryError):
    """A coordinate or point lies outside the chart."""

    def __init__(self, message: str, sigma: float | None = None, s: float | None = None):
        super().__init__(message)
        self.sigma = sigma
        self.s = s


class CurveSpec(BaseModel):
    """Declarative description of the gully axis."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    kind: CurveKind
    parameters: dict[str, float | list[list[float]]] = Field(
        alias="params",
        description="Named reals for the analytic kinds, or 'points' for a spline.",
    )
    orientation: Literal[1, -1] = Field(
        default=1, description="+1 keeps the counterclockwise-rotated tangent as the normal."
    )

    @model_validator(mode="after")
    def _check_parameters(self) -> "CurveSpec":
        params = self.parameters
        required = _REQUIRED[self.kind]
        allowed = set(required) | set(_OPTIONAL.get(self.kind, ()))
        missing = [name for name in required if name not in params]
        if missing:
            raise ValueError(f"{self.kind} needs parameters {missing}")
        unknown = sorted(set(params) - allowed)
        if unknown:
            raise ValueError(f"{self.kind} does not take parameters {unknown}")
        for name, value in params.items():
            is_points = name == "points"
            if is_points != isinstance(value, list):
                expected = "a list of [x, y] pairs" if is_points else "a real number"
                raise ValueError(f"parameter '{name}' must be {expected}")

        if self.kind == "circular_arc":
            if params["radius"] <= 0:
                raise ValueError("circular_arc radius must be positive")
            if params["span"] == 0 or abs(params["span"]) >= 2 * math.pi:
                raise ValueError("circular_arc span must be nonzero and below a full turn")
        elif self.kind == "sine_perturbed":
            if params["length"] <= 0:
                raise ValueError("sine_perturbed length must be positive")
        elif self.kind == "segment":
            if (params["x0"], params["y0"]) == (params["x1"], params["y1"]):
                raise ValueError("segment endpoints must differ")
        elif self.kind == "cubic_spline":
            points = params["points"]
            if len(points) < 4:
                raise ValueError("cubic_spline needs at least 4 control points")
            if any(len(p) != 2 for p in points):
                raise ValueError("cubic_spline control points must be [x, y] pairs")
            if len({tuple(p) for p in points}) != len(points):
                raise ValueError("cubic_spline control points must be distinct")
        return self


class Frame(NamedTuple):
    point: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: float | np.ndarray


class FermiPoint(NamedTuple):
    sigma: float
    s: float


class _Parametrization:
    """Raw parametric form r(u) of a catalog curve with two derivatives."""

    def __init__(self, spec: CurveSpec):
        self.kind = spec.kind
        p = spec.parameters
        if spec.kind == "segment":
            self._start = np.array([p["x0"], p["y0"]], dtype=float)
            self._delta = np.array([p["x1"], p["y1"]], dtype=float) - self._start
            self.u_end = 1.0
            self.breaks = np.linspace(0.0, 1.0, 2)
        elif spec.kind == "circular_arc":
            self._center = np.array([p.get("center_x", 0.0), p.get("center_y", 0.0)], dtype=float)
            self._radius = float(p["radius"])
            self._start_angle = float(p.get("start_angle", 0.0))
            self._span = float(p["span"])
            self.u_end = 1.0
            self.breaks = np.linspace(0.0, 1.0, 17)
        elif spec.kind == "sine_perturbed":
            self._amplitude = float(p["amplitude"])
            self._wavenumber = float(p["wavenumber"])
            self.u_end = float(p["length"])
            pieces = max(32, math.ceil(8 * abs(self._wavenumber) * self.u_end / math.pi))
            self.breaks = np.linspace(0.0, self.u_end, pieces + 1)
        else:
            points = np.asarray(p["points"], dtype=float)
            chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
            if np.any(chords == 0.0):
                raise GeometryError("cubic_spline has repeated consecutive control points")
            knots = np.concatenate([[0.0], np.cumsum(chords)])
            self._spline = CubicSpline(knots, points, bc_type="natural", axis=0)
            self.u_end = float(knots[-1])
            refined = [np.linspace(a, b, 5)[:-1] for a, b in zip(knots[:-1], knots[1:])]
            self.breaks = np.concatenate(refined + [knots[-1:]])

    def evaluate(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        if self.kind == "segment":
            r = self._start + u[..., None] * self._delta
            d1 = np.broadcast_to(self._delta, r.shape).copy()
            return r, d1, np.zeros_like(r)
        if self.kind == "circular_arc":
            phi = self._start_angle + u * self._span
            radial = np.stack((np.cos(phi), np.sin(phi)), axis=-1)
            turned = np.stack((-np.sin(phi), np.cos(phi)), axis=-1)
            r = self._center + self._radius * radial
            d1 = self._radius * self._span * turned
            d2 = -self._radius * self._span**2 * radial
            return r, d1, d2
        if self.kind == "sine_perturbed":
            a, k = self._amplitude, self._wavenumber
            zeros, ones = np.zeros_like(u), np.ones_like(u)
            r = np.stack((u, a * np.sin(k * u)), axis=-1)
            d1 = np.stack((ones, a * k * np.cos(k * u)), axis=-1)
            d2 = np.stack((zeros, -a * k**2 * np.sin(k * u)), axis=-1)
            return r, d1, d2
        return self._spline(u), self._spline(u, 1), self._spline(u, 2)


class AxisCurve:
    """Arclength view of a CurveSpec.

    The σ ↔ u table is built by cumulative 64-node Gauss–Legendre quadrature
    of the speed, interpolated monotonically and then polished by Newton
    steps against the exact quadrature so the map holds to ~1e-13 relative.
    """

    def __init__(self, spec: CurveSpec, logger: logging.Logger | None = None):
        self.spec = spec
        self.orientation = spec.orientation
        self.logger = logger or logging.getLogger(__name__)
        self._param = _Parametrization(spec)

        u_table = self._param.breaks
        pieces, min_speed = self._gauss_length(u_table[:-1], u_table[1:])
        scale = max(self._param.u_end, 1.0)
        if not min_speed > 1e-12 * scale:
            msg = f"Degenerate {spec.kind} axis: tangent speed vanishes (min {min_speed:.3e})"
            self.logger.error(msg)
            raise GeometryError(msg)
        self._u_table = u_table
        self._sigma_table = np.concatenate([[0.0], np.cumsum(pieces)])
        self.length = float(self._sigma_table[-1])
        self._sigma_to_u = PchipInterpolator(self._sigma_table, self._u_table)
        self.logger.debug(f"Built {spec.kind} axis of length {self.length:.12g}")

    def _gauss_length(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        half = 0.5 * (b - a)
        nodes = half[:, None] * _GL_NODES[None, :] + 0.5 * (a + b)[:, None]
        _, d1, _ = self._param.evaluate(nodes)
        speed = np.hypot(d1[..., 0], d1[..., 1])
        return half * (speed @ _GL_WEIGHTS), float(speed.min())

    @property
    def arclength_table(self) -> tuple[np.ndarray, np.ndarray]:
        return self._u_table, self._sigma_table

    def parameter(self, sigma) -> np.ndarray:
        """Curve parameter u at arclength σ."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        tol = 1e-12 * max(self.length, 1.0)
        if np.any(sigma < -tol) or np.any(sigma > self.length + tol):
            bad = sigma[(sigma < -tol) | (sigma > self.length + tol)][0]
            raise DomainError(f"sigma {bad} outside [0, {self.length}]", sigma=float(bad))
        sigma = np.clip(sigma, 0.0, self.length)
        if sigma.size > 8192:
            return np.concatenate([self.parameter(chunk) for chunk in np.array_split(sigma, sigma.size // 8192 + 1)])
        u = self._sigma_to_u(sigma)
        piece = np.clip(np.searchsorted(self._sigma_table, sigma, side="right") - 1, 0, len(self._u_table) - 2)
        base_u = self._u_table[piece]
        base_sigma = self._sigma_table[piece]
        for _ in range(4):
            partial, _ = self._gauss_length(base_u, u)
            _, d1, _ = self._param.evaluate(u)
            correction = (base_sigma + partial - sigma) / np.hypot(d1[:, 0], d1[:, 1])
            u = np.clip(u - correction, 0.0, self._param.u_end)
            if np.max(np.abs(correction)) <= 1e-15 * max(self._param.u_end, 1.0):
                break
        return u

    def derivatives(self, sigma) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Raw parametric position, first and second derivatives at σ."""
        return self._param.evaluate(self.parameter(sigma))

    def frame(self, sigma) -> Frame:
        scalar = np.ndim(sigma) == 0
        r, d1, d2 = self.derivatives(sigma)
        speed = np.hypot(d1[:, 0], d1[:, 1])
        tangent = d1 / speed[:, None]
        normal = self.orientation * np.column_stack((-tangent[:, 1], tangent[:, 0]))
        curvature = self.orientation * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
        if scalar:
            return Frame(r[0], tangent[0], normal[0], float(curvature[0]))
        return Frame(r, tangent, normal, curvature)

    def curvature(self, sigma) -> np.ndarray:
        return self.frame(np.atleast_1d(sigma)).curvature

    @cached_property
    def min_curvature_radius(self) -> float:
        sigma = np.linspace(0.0, self.length, CURVATURE_SAMPLES)
        kappa = np.abs(self.curvature(sigma))
        peak = int(np.argmax(kappa))
        if kappa[peak] <= 1e-14:
            return math.inf
        lo = sigma[max(peak - 1, 0)]
        hi = sigma[min(peak + 1, sigma.size - 1)]
        refined = minimize_scalar(
            lambda x: -abs(float(self.curvature(x)[0])),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-13 * max(self.length, 1.0)},
        )
        return 1.0 / max(float(kappa[peak]), -float(refined.fun))


def _as_axis(curve: "CurveSpec | AxisCurve") -> AxisCurve:
    return curve if isinstance(curve, AxisCurve) else AxisCurve(curve)


@dataclass(frozen=True)
class FermiChart:
    """Fermi coordinates (σ, s) on the tube of half-width ``epsilon``."""

    curve: AxisCurve
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise GeometryError(f"Tube half-width must be positive, got {self.epsilon}")
        if not self.epsilon < self.curve.min_curvature_radius:
            msg = (
                f"Tube half-width {self.epsilon} must be below the minimum curvature "
                f"radius {self.curve.min_curvature_radius:.12g}"
            )
            logger.error(msg)
            raise GeometryError(msg)

    @classmethod
    def build(cls, curve: "CurveSpec | AxisCurve", epsilon: float) -> "FermiChart":
        return cls(_as_axis(curve), float(epsilon))

    def with_epsilon(self, epsilon: float) -> "FermiChart":
        return FermiChart(self.curve, float(epsilon))

    @property
    def total_length(self) -> float:
        return self.curve.length

    @property
    def L0(self) -> float:
        return self.curve.min_curvature_radius

    @property
    def arclength_table(self) -> tuple[np.ndarray, np.ndarray]:
        return self.curve.arclength_table

    @cached_property
    def _lattice(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sigma = np.linspace(0.0, self.total_length, 257)
        offsets = np.linspace(-self.epsilon, self.epsilon, 5)
        frame = self.curve.frame(sigma)
        points = frame.point[:, None, :] + offsets[None, :, None] * frame.normal[:, None, :]
        grid_sigma, grid_s = np.meshgrid(sigma, offsets, indexing="ij")
        return grid_sigma.ravel(), grid_s.ravel(), points.reshape(-1, 2)

    def _check_offset(self, s) -> None:
        s = np.asarray(s, dtype=float)
        if np.any(np.abs(s) > self.epsilon * (1 + 1e-12)):
            bad = float(np.atleast_1d(s)[np.argmax(np.abs(np.atleast_1d(s)))])
            raise DomainError(f"offset {bad} outside the tube of half-width {self.epsilon}", s=bad)


# -- axis curve ----------------------------------------------------------------


def curve_frame(curve: "CurveSpec | AxisCurve", sigma) -> Frame:
    """Point, unit tangent, unit normal and signed curvature at arclength σ."""
    return _as_axis(curve).frame(sigma)


def min_curvature_radius(curve: "CurveSpec | AxisCurve") -> float:
    """Smallest radius of curvature of the axis; +inf for a straight axis."""
    return _as_axis(curve).min_curvature_radius


# -- Fermi chart ---------------------------------------------------------------


def _forward(chart: FermiChart, sigma, s) -> np.ndarray:
    frame = chart.curve.frame(sigma)
    s = np.asarray(s, dtype=float)
    return frame.point + s[..., None] * frame.normal if s.ndim else frame.point + float(s) * frame.normal


def fermi_forward(chart: FermiChart, sigma, s) -> np.ndarray:
    """Φ(σ, s) = γ(σ) + s·ν(σ)."""
    chart._check_offset(s)
    return _forward(chart, sigma, s)


def fermi_inverse(chart: FermiChart, point) -> FermiPoint:
    """Fermi coordinates of a point in the closed tube.

    Damped Newton on Φ(σ, s) = X started from the nearest node of a coarse
    lattice. Raises DomainError carrying the best iterate when the point is
    not in the tube.
    """
    target = np.asarray(point, dtype=float)
    lattice_sigma, lattice_s, lattice_points = chart._lattice
    nearest = int(np.argmin(np.sum((lattice_points - target) ** 2, axis=1)))
    sigma, s = float(lattice_sigma[nearest]), float(lattice_s[nearest])
    length = chart.total_length
    tol = NEWTON_TOL * max(1.0, float(np.max(np.abs(target))))

    def residual(sig: float, off: float) -> tuple[np.ndarray, float]:
        r = target - _forward(chart, sig, off)
        return r, float(np.hypot(r[0], r[1]))

    r, res = residual(sigma, s)
    best = (res, sigma, s)
    for _ in range(NEWTON_MAX_ITER):
        if res <= tol:
            break
        frame = chart.curve.frame(sigma)
        jac = 1.0 - s * frame.curvature
        if jac <= 0:
            break
        d_sigma = float(r @ frame.tangent) / jac
        d_s = float(r @ frame.normal)
        step = 1.0
        while True:
            cand_sigma = min(max(sigma + step * d_sigma, 0.0), length)
            cand_s = s + step * d_s
            cand_r, cand_res = residual(cand_sigma, cand_s)
            if cand_res < res or step < 1e-6:
                break
            step *= 0.5
        if cand_res >= res:
            break
        sigma, s, r, res = cand_sigma, cand_s, cand_r, cand_res
        if res < best[0]:
            best = (res, sigma, s)

    res, sigma, s = best
    if res > 1e-10 * max(1.0, length):
        msg = f"Point {target.tolist()} is not in the tube: Newton stalled at residual {res:.3e}"
        logger.debug(msg)
        raise DomainError(msg, sigma=sigma, s=s)
    if abs(s) > chart.epsilon * (1 + 1e-12):
        msg = f"Point {target.tolist()} lies at offset {s:.6g}, outside half-width {chart.epsilon}"
        logger.debug(msg)
        raise DomainError(msg, sigma=sigma, s=s)
    return FermiPoint(sigma, s)


def project_to_axis(chart: FermiChart, point) -> np.ndarray:
    """Foot point γ(σ) of a tube point on the axis."""
    sigma, _ = fermi_inverse(chart, point)
    return chart.curve.frame(sigma).point


def jacobian_factor(chart: FermiChart, sigma, s):
    """Area element 1 − sκ(σ) of the Fermi chart."""
    chart._check_offset(s)
    kappa = chart.curve.frame(sigma).curvature
    return 1.0 - np.asarray(s, dtype=float) * kappa


def metric_tensor(chart: FermiChart, sigma: float, s: float) -> np.ndarray:
    """Metric of the chart in (σ, s): diag((1 − sκ)², 1)."""
    jac = float(jacobian_factor(chart, sigma, s))
    return np.array([[jac * jac, 0.0], [0.0, 1.0]])


def offset_mean_curvature(chart: FermiChart, sigma, s):
    """Curvature κ/(1 − sκ) of the offset curve S(s) at Φ(σ, s)."""
    chart._check_offset(s)
    kappa = chart.curve.frame(sigma).curvature
    return kappa / (1.0 - np.asarray(s, dtype=float) * kappa)


def offset_normal_check(chart: FermiChart, sigma: float, s: float) -> float:
    """Angle between the normal of the offset curve S(s) and ν(σ).

    The offset tangent is formed by the chain rule from raw parametric
    derivatives, never from the Frenet identity, so the check is not
    circular.
    """
    chart._check_offset(s)
    _, d1, d2 = chart.curve.derivatives(sigma)
    d1, d2 = d1[0], d2[0]
    o = chart.curve.orientation
    speed = math.hypot(d1[0], d1[1])
    tangent = d1 / speed
    d_tangent = (d2 * speed**2 - d1 * float(d1 @ d2)) / speed**3
    d_normal = o * np.array([-d_tangent[1], d_tangent[0]])
    offset_tangent = d1 + s * d_normal
    offset_normal = o * np.array([-offset_tangent[1], offset_tangent[0]])
    offset_normal /= math.hypot(offset_normal[0], offset_normal[1])
    normal = o * np.array([-tangent[1], tangent[0]])
    cross = offset_normal[0] * normal[1] - offset_normal[1] * normal[0]
    return math.atan2(abs(cross), float(offset_normal @ normal))
