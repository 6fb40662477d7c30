"""Power weights, weighted ball masses, and singularity-graded 1-D grids.

Two weight families are supported:

* ``axis``   -- w(x) = |x_1|^a with 0 <= a < 1 (singular along the hyperplane
  x_1 = 0; the grid carries the x_1 coordinate, transverse directions are
  handled analytically downstream),
* ``radial`` -- w(x) = |x|^b with 0 <= b < n (point singularity at the
  origin; the grid carries the radius and all angular content is folded
  into the reduced 1-D weight).

Grid functions are nodal values on [0, R]; for the axis case they represent
even functions of x_1 (even extension to [-R, R] is applied wherever the
physical measure is needed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "WeightCase",
    "WeightSpec",
    "Grid",
    "GridFunction",
    "BallEnvelope",
    "BallFit",
    "weight_at",
    "ball_mass",
    "ball_mass_bounds",
    "fit_ball_constants",
    "make_grid",
]


class WeightCase(Enum):
    AXIS_POWER = "axis"
    RADIAL_POWER = "radial"


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def unit_sphere_area(n: int) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n (equals n * omega_n)."""
    return n * unit_ball_volume(n)


@dataclass(frozen=True)
class WeightSpec:
    """A power weight: which family, its exponent, and the ambient dimension."""

    case: WeightCase
    exponent: float
    dimension: int

    def __post_init__(self) -> None:
        if self.dimension < 1 or int(self.dimension) != self.dimension:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension}")
        a = float(self.exponent)
        if not math.isfinite(a) or a < 0.0:
            raise ValueError(f"exponent must be a finite nonnegative real, got {a}")
        if self.case is WeightCase.AXIS_POWER and not a < 1.0:
            raise ValueError(f"axis-power weights require exponent in [0, 1), got {a}")
        if self.case is WeightCase.RADIAL_POWER and not a < self.dimension:
            raise ValueError(
                f"radial-power weights require exponent in [0, n) with n={self.dimension}, got {a}"
            )

    @property
    def alpha(self) -> float:
        """The homogeneity exponent of the weight (a or b)."""
        return float(self.exponent)

    @property
    def mass_exponent(self) -> float:
        """Ball masses centered at 0 scale like r**mass_exponent = r**(n+alpha)."""
        return self.dimension + self.alpha

    # --- reduced 1-D weight on the half-line ------------------------------
    # axis:   m(x) = x^a                       (transverse dims handled elsewhere)
    # radial: m(r) = sigma_{n-1} * r^(n-1+b)   (angular content folded in)

    def reduced_weight(self, x: np.ndarray | float) -> np.ndarray | float:
        x = np.abs(x)
        if self.case is WeightCase.AXIS_POWER:
            return x ** self.exponent
        return unit_sphere_area(self.dimension) * x ** (self.dimension - 1 + self.exponent)

    def reduced_primitive(self, x: np.ndarray | float) -> np.ndarray | float:
        """Exact antiderivative of the reduced weight, vanishing at 0."""
        x = np.asarray(x, dtype=float)
        if self.case is WeightCase.AXIS_POWER:
            q = self.exponent + 1.0
            return x ** q / q
        q = self.dimension + self.exponent
        return unit_sphere_area(self.dimension) * x ** q / q

    @property
    def even_factor(self) -> float:
        """Physical measure per unit of reduced half-line measure.

        The axis grid covers only x_1 >= 0 of an even geometry, so every
        half-line mass counts twice; the radial reduced weight already
        includes the full sphere.
        """
        return 2.0 if self.case is WeightCase.AXIS_POWER else 1.0

    def inverse_reduced_integral(self, lo: float, hi: float) -> float:
        """Integral of 1/(reduced weight) over [lo, hi], 0 <= lo < hi.

        Finite across lo = 0 exactly when the reduced weight's power is
        below 1 (always in the axis case since a < 1); +inf otherwise.
        """
        if self.case is WeightCase.AXIS_POWER:
            power = self.exponent
            scale = 1.0
        else:
            power = self.dimension - 1 + self.exponent
            scale = unit_sphere_area(self.dimension)
        kappa = 1.0 - power
        if lo == 0.0 and kappa <= 0.0:
            return math.inf
        if abs(kappa) < 1e-14:
            return math.log(hi / lo) / scale
        return (hi**kappa - lo**kappa) / (kappa * scale)


def weight_at(spec: WeightSpec, point: Sequence[float]) -> float:
    """Evaluate the weight at a point of R^n."""
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.shape != (spec.dimension,):
        raise ValueError(
            f"point has dimension {p.shape}, expected ({spec.dimension},)"
        )
    if spec.case is WeightCase.AXIS_POWER:
        return float(abs(p[0]) ** spec.exponent)
    return float(np.linalg.norm(p) ** spec.exponent)


def _reduced_center(spec: WeightSpec, center: Sequence[float] | float) -> float:
    """Collapse a center to the coordinate the ball mass actually depends on.

    Axis balls may be translated freely in x_2..x_n, so only |x_1| matters;
    radial balls depend on the distance from the origin.  Scalars are taken
    as the already-reduced coordinate.
    """
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size == 1:
        return float(abs(c[0]))
    if c.shape != (spec.dimension,):
        raise ValueError(f"center has shape {c.shape}, expected ({spec.dimension},) or scalar")
    if spec.case is WeightCase.AXIS_POWER:
        return float(abs(c[0]))
    return float(np.linalg.norm(c))


def _signed_interval_mass(expo: float, lo: float, hi: float) -> float:
    """Integral of |y|^expo over [lo, hi] via the odd primitive."""
    q = expo + 1.0

    def prim(y: float) -> float:
        return math.copysign(abs(y) ** q / q, y)

    return prim(hi) - prim(lo)


def _cap_fraction(c: float, n: int) -> float:
    """Fraction of the unit sphere S^{n-1} with cos(angle) > c."""
    if c >= 1.0:
        return 0.0
    if c <= -1.0:
        return 1.0
    if n == 1:
        # S^0 is two points; the cap holds exactly one of them for |c| < 1.
        return 0.5
    x = max(0.0, min(1.0, 1.0 - c * c))
    half = 0.5 * special.betainc((n - 1) / 2.0, 0.5, x)
    return half if c >= 0.0 else 1.0 - half


def ball_mass(spec: WeightSpec, center: Sequence[float] | float, r: float) -> float:
    """Weighted measure of the Euclidean ball B(center, r).

    Closed form for balls whose reduced center is 0 (both families) and for
    n = 1 at any center; otherwise adaptive quadrature to relative 1e-8.
    """
    if not r > 0.0:
        raise ValueError(f"ball radius must be positive, got {r}")
    n = spec.dimension
    a = spec.exponent
    c = _reduced_center(spec, center)

    if spec.case is WeightCase.AXIS_POWER:
        if n == 1:
            return _signed_interval_mass(a, c - r, c + r)
        if c == 0.0:
            return (
                unit_ball_volume(n - 1)
                * special.beta((a + 1.0) / 2.0, (n + 1.0) / 2.0)
                * r ** (n + a)
            )
        # slab reduction: integrate |y1|^a against the (n-1)-ball cross-section
        wball = unit_ball_volume(n - 1)

        def integrand(y1: float) -> float:
            return abs(y1) ** a * wball * (r * r - (y1 - c) ** 2) ** ((n - 1) / 2.0)

        pts = [p for p in (0.0,) if c - r < p < c + r]
        val, _ = integrate.quad(
            integrand, c - r, c + r, epsrel=1e-8, epsabs=0.0, limit=200, points=pts or None
        )
        return float(val)

    # radial case
    if c == 0.0:
        return unit_sphere_area(n) / (n + a) * r ** (n + a)
    if n == 1:
        return _signed_interval_mass(a, c - r, c + r)

    area = unit_sphere_area(n)

    def integrand(s: float) -> float:
        if s <= 0.0:
            return 0.0
        cosv = (s * s + c * c - r * r) / (2.0 * s * c)
        return s ** (n - 1 + a) * _cap_fraction(cosv, n)

    lo = max(0.0, c - r)
    hi = c + r
    val, _ = integrate.quad(integrand, lo, hi, epsrel=1e-8, epsabs=0.0, limit=200)
    return float(area * val)


@dataclass(frozen=True)
class BallEnvelope:
    lower: float
    upper: float
    branch: str


def ball_mass_bounds(
    spec: WeightSpec,
    center: Sequence[float] | float,
    r: float,
    constants: tuple[float, float] = (1.0, 1.0),
) -> BallEnvelope:
    """Two-sided power envelope for the ball mass.

    Lower envelope C * r^(n+alpha); upper envelope C' * r^n |c|^alpha on the
    branch r <= |c| and C' * r^(n+alpha) on the branch r >= |c|, where |c| is
    the reduced center coordinate.  ``constants`` defaults to unit prefactors.
    """
    if not r > 0.0:
        raise ValueError(f"ball radius must be positive, got {r}")
    low_c, up_c = constants
    n = spec.dimension
    a = spec.exponent
    c = _reduced_center(spec, center)
    coord = "|x1|" if spec.case is WeightCase.AXIS_POWER else "|x|"
    lower = low_c * r ** (n + a)
    if r >= c:
        return BallEnvelope(lower, up_c * r ** (n + a), f"r >= {coord}")
    return BallEnvelope(lower, up_c * r**n * c**a, f"r <= {coord}")


@dataclass(frozen=True)
class BallFit:
    """Tightest envelope prefactors over a randomized (center, radius) sample."""

    lower_coef: float
    upper_coef: float
    sample_count: int


def fit_ball_constants(
    spec: WeightSpec,
    n_samples: int = 100,
    rng: np.random.Generator | None = None,
    center_scale: float = 4.0,
    radius_range: tuple[float, float] = (0.05, 8.0),
) -> BallFit:
    """Fit the tightest (lower, upper) envelope prefactors on random samples.

    The shape of the envelopes is fixed by the two-branch rule; only the
    prefactors are free, so the tight fit is a min/max of mass-to-shape
    ratios and envelope ordering holds on the sample by construction.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = spec.dimension
    a = spec.exponent
    lo_r, hi_r = radius_range
    low = math.inf
    up = 0.0
    for _ in range(n_samples):
        c = float(center_scale * abs(rng.standard_normal()))
        r = float(math.exp(rng.uniform(math.log(lo_r), math.log(hi_r))))
        mass = ball_mass(spec, c, r)
        low = min(low, mass / r ** (n + a))
        shape = r ** (n + a) if r >= c else r**n * c**a
        up = max(up, mass / shape)
    return BallFit(lower_coef=low, upper_coef=up, sample_count=n_samples)


@dataclass(frozen=True)
class Grid:
    """Singularity-graded half-line mesh with exact per-cell reduced masses.

    ``nodes`` are the degrees of freedom in [0, R]; each node owns the cell
    between consecutive ``cell_bounds`` midpoints and ``cell_mass[i]`` is the
    exact integral of the reduced 1-D weight over that cell.
    """

    spec: WeightSpec
    radius: float
    grading: float
    nodes: np.ndarray
    cell_bounds: np.ndarray
    cell_mass: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.diff(self.nodes) > 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        if not np.all(np.diff(self.cell_bounds) > 0.0):
            raise ValueError("grid cell bounds must be strictly increasing")
        if not np.all(self.cell_mass > 0.0):
            raise ValueError("cell masses must be strictly positive")
        total = float(self.spec.reduced_primitive(self.radius))
        err = abs(float(np.sum(self.cell_mass)) - total)
        if err > 1e-12 * total:
            raise ValueError(f"cell masses do not telescope to the domain mass (err={err:g})")

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.size)

    @property
    def measures(self) -> np.ndarray:
        """Per-node physical weighted measure (even extension for axis grids)."""
        return self.spec.even_factor * self.cell_mass

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.measures))

    def function(self, values: np.ndarray | Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        if callable(values):
            values = np.asarray(values(self.nodes), dtype=float)
        return GridFunction(self, np.asarray(values, dtype=float))

    def constant(self, value: float) -> "GridFunction":
        return self.function(np.full(self.n_nodes, float(value)))


def make_grid(spec: WeightSpec, radius: float, cells: int, grading: float = 2.0) -> Grid:
    """Build the graded half-line grid with nodes at R*(k/N)^grading.

    Grading >= 1 concentrates nodes near the singular point 0, which restores
    second-order quadrature accuracy against weights whose derivative blows
    up there.
    """
    if not radius > 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    if cells < 16:
        raise ValueError(f"need at least 16 cells, got {cells}")
    if not grading >= 1.0:
        raise ValueError(f"grading exponent must be >= 1, got {grading}")
    k = np.arange(cells + 1, dtype=float)
    nodes = radius * (k / cells) ** grading
    assert np.all(np.diff(nodes) > 0.0), "node generation must be monotone"
    bounds = np.empty(cells + 2, dtype=float)
    bounds[0] = 0.0
    bounds[-1] = radius
    bounds[1:-1] = 0.5 * (nodes[:-1] + nodes[1:])
    prim = np.asarray(spec.reduced_primitive(bounds))
    cell_mass = np.diff(prim)
    return Grid(
        spec=spec,
        radius=float(radius),
        grading=float(grading),
        nodes=nodes,
        cell_bounds=bounds,
        cell_mass=cell_mass,
    )


@dataclass(frozen=True)
class GridFunction:
    """Nodal values on a grid; piecewise constant on cells for all measures."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes,):
            raise ValueError(f"values shape {v.shape} does not match grid ({self.grid.n_nodes},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "values", v)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def weighted_integral(self) -> float:
        """Integral of the function against the physical weighted measure."""
        return float(np.sum(self.values * self.grid.measures))

    def scaled(self, factor: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(factor))
