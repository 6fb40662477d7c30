"""Weighted Lorentz-space calculus on piecewise-constant functions.

All measure-theoretic operations (distribution function, non-increasing
rearrangement, Lorentz norms) are computed exactly on the step structure of
the function: a function is a finite family of (value, mass) pairs, obtained
either from nodal values on a grid with its physical cell measures or from
an explicit step description.  No quadrature error enters the rearrangement
itself; the only approximation is the piecewise-constant representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .weights import GridFunction, unit_ball_volume

__all__ = [
    "LorentzIndex",
    "StepFunction",
    "RearrangementTable",
    "distribution_fn",
    "rearrangement",
    "spherical_rearrangement",
    "lorentz_norm",
    "weighted_lp_norm",
    "InequalityParams",
    "InequalityCheck",
    "InequalityReport",
    "inequality_suite",
    "NormReconciliationError",
]

INF = math.inf


class NormReconciliationError(AssertionError):
    """The two equivalent Lorentz-norm formulas disagreed beyond tolerance."""


@dataclass(frozen=True)
class LorentzIndex:
    """Primary integrability index r and fine index sigma, both in [1, inf]."""

    r: float
    sigma: float

    def __post_init__(self) -> None:
        if not (1.0 <= self.r):
            raise ValueError(f"Lorentz index r must satisfy 1 <= r <= inf, got {self.r}")
        if not (1.0 <= self.sigma):
            raise ValueError(f"Lorentz index sigma must satisfy 1 <= sigma <= inf, got {self.sigma}")


@dataclass(frozen=True)
class StepFunction:
    """Explicit step function: |f| takes values[i] on a set of mass masses[i]."""

    values: np.ndarray
    masses: np.ndarray
    dimension: int = 1

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        if v.shape != m.shape or v.ndim != 1:
            raise ValueError("values and masses must be 1-D arrays of equal length")
        if not np.all(np.isfinite(v)):
            raise ValueError("step values must be finite")
        if not np.all(m >= 0.0) or not np.all(np.isfinite(m)):
            raise ValueError("step masses must be finite and nonnegative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "masses", m)


def _values_masses_dim(f: GridFunction | StepFunction) -> tuple[np.ndarray, np.ndarray, int]:
    if isinstance(f, GridFunction):
        return np.abs(f.values), f.grid.measures, f.grid.spec.dimension
    if isinstance(f, StepFunction):
        return np.abs(f.values), f.masses, f.dimension
    raise TypeError(f"expected GridFunction or StepFunction, got {type(f)!r}")


@dataclass(frozen=True)
class RearrangementTable:
    """Step description of the distribution function and rearrangement.

    ``levels`` are the distinct positive values of |f| in decreasing order;
    ``cum_mass[k]`` is the measure of {|f| >= levels[k]}, so the distribution
    function is mu(lambda) = cum_mass[k] for levels[k+1] <= lambda < levels[k]
    and the rearrangement is the right-continuous generalized inverse.
    """

    levels: np.ndarray = field(repr=False)
    cum_mass: np.ndarray = field(repr=False)
    total_mass: float
    dimension: int = 1

    def __post_init__(self) -> None:
        lv = np.asarray(self.levels, dtype=float)
        cm = np.asarray(self.cum_mass, dtype=float)
        if lv.shape != cm.shape or lv.ndim != 1:
            raise ValueError("levels and cum_mass must be 1-D arrays of equal length")
        if lv.size and not np.all(np.diff(lv) < 0.0):
            raise ValueError("levels must be strictly decreasing")
        if cm.size and not (np.all(np.diff(cm) >= 0.0) and np.all(cm > 0.0)):
            raise ValueError("cumulative masses must be positive and non-decreasing")
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "cum_mass", cm)

    @classmethod
    def from_function(cls, f: GridFunction | StepFunction) -> "RearrangementTable":
        vals, masses, dim = _values_masses_dim(f)
        total = float(np.sum(masses))
        keep = (vals > 0.0) & (masses > 0.0)
        vals = vals[keep]
        masses = masses[keep]
        if vals.size == 0:
            return cls(np.empty(0), np.empty(0), total, dim)
        order = np.argsort(vals)[::-1]
        vals = vals[order]
        masses = masses[order]
        levels, start = np.unique(vals[::-1], return_index=True)
        levels = levels[::-1]
        # group masses of equal values, then accumulate from the top level down
        grouped = np.add.reduceat(masses[::-1], start)[::-1]
        cum = np.cumsum(grouped)
        return cls(levels, cum, total, dim)

    def distribution(self, lam: float) -> float:
        """Measure of the superlevel set {|f| > lam}."""
        if lam < 0.0:
            raise ValueError("superlevel threshold must be nonnegative")
        if self.levels.size == 0 or lam >= self.levels[0]:
            return 0.0
        # largest k with levels[k] > lam; levels descending
        k = int(np.searchsorted(-self.levels, -lam, side="left")) - 1
        return float(self.cum_mass[k])

    def rearranged(self, s: float) -> float:
        """Right-continuous non-increasing rearrangement f*(s)."""
        if s < 0.0:
            raise ValueError("rearrangement argument must be nonnegative")
        if self.levels.size == 0 or s >= self.cum_mass[-1]:
            return 0.0
        k = int(np.searchsorted(self.cum_mass, s, side="right"))
        return float(self.levels[k])

    def spherical(self, x: float) -> float:
        """Radial transplant f#(x) = f*(c_n |x|^n)."""
        cn = unit_ball_volume(self.dimension)
        return self.rearranged(cn * abs(x) ** self.dimension)


def distribution_fn(f: GridFunction | StepFunction, lam: float) -> float:
    return RearrangementTable.from_function(f).distribution(lam)


def rearrangement(f: GridFunction | StepFunction, s: float) -> float:
    return RearrangementTable.from_function(f).rearranged(s)


def spherical_rearrangement(f: GridFunction | StepFunction, x: float) -> float:
    return RearrangementTable.from_function(f).spherical(x)


def _norm_from_rearrangement(table: RearrangementTable, r: float, sigma: float) -> float:
    """Integral form built on f*: exact sums of power increments of cum_mass."""
    lv, cm = table.levels, table.cum_mass
    if lv.size == 0:
        return 0.0
    if sigma == INF:
        if r == INF:
            return float(lv[0])
        return float(np.max(cm ** (1.0 / r) * lv))
    if r == INF:
        # ds/s diverges at 0 against a nonzero f*
        return INF
    prev = np.concatenate(([0.0], cm[:-1]))
    ratio = sigma / r
    acc = float(np.sum(lv**sigma * (cm**ratio - prev**ratio))) * (r / sigma)
    return acc ** (1.0 / sigma)


def _norm_from_distribution(table: RearrangementTable, r: float, sigma: float) -> float:
    """Equivalent form built on mu_f; used to cross-check the f* form."""
    lv, cm = table.levels, table.cum_mass
    if lv.size == 0:
        return 0.0
    if sigma == INF:
        if r == INF:
            return float(lv[0])
        return float(np.max(lv * cm ** (1.0 / r)))
    if r == INF:
        return INF
    nxt = np.concatenate((lv[1:], [0.0]))
    acc = float(np.sum(cm ** (sigma / r) * (lv**sigma - nxt**sigma))) / sigma
    return (r * acc) ** (1.0 / sigma)


def lorentz_norm(
    f: GridFunction | StepFunction | RearrangementTable,
    idx: LorentzIndex,
    reconcile_tol: float = 1e-8,
) -> float:
    """Weighted Lorentz norm; divergence is signalled as +inf, never raised.

    Both equivalent formulas (rearrangement-side and distribution-side) are
    evaluated and must agree to ``reconcile_tol`` relative, which guards the
    step bookkeeping.
    """
    table = f if isinstance(f, RearrangementTable) else RearrangementTable.from_function(f)
    primal = _norm_from_rearrangement(table, idx.r, idx.sigma)
    dual = _norm_from_distribution(table, idx.r, idx.sigma)
    if math.isinf(primal) or math.isinf(dual):
        if primal != dual:
            raise NormReconciliationError(
                f"norm forms disagree on divergence: {primal} vs {dual}"
            )
        return INF
    scale = max(primal, dual, 1e-300)
    if abs(primal - dual) > reconcile_tol * scale:
        raise NormReconciliationError(
            f"norm forms disagree: {primal!r} vs {dual!r} at idx ({idx.r}, {idx.sigma})"
        )
    return primal


def weighted_lp_norm(f: GridFunction | StepFunction, r: float) -> float:
    """Direct L^r norm against the physical weighted measure."""
    vals, masses, _ = _values_masses_dim(f)
    if r == INF:
        return float(np.max(vals)) if vals.size else 0.0
    if not r >= 1.0:
        raise ValueError(f"Lebesgue exponent must satisfy r >= 1, got {r}")
    return float(np.sum(masses * vals**r) ** (1.0 / r))


@dataclass(frozen=True)
class InequalityParams:
    """Index data for the inequality suite.

    * interpolation: indices (r0, r1, theta) with 1/r = (1-theta)/r0 + theta/r1,
    * pairing: Hoelder-conjugate pair (holder_r1, holder_r2),
    * radial_decay: index sharp_r and an optional prefactor for the
      pointwise bound on the spherical rearrangement (fitted when omitted).
    """

    r0: float = 1.0
    r1: float = INF
    theta: float = 0.5
    holder_r1: float = 2.0
    sharp_r: float = 2.0
    sharp_coef: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError(f"interpolation parameter theta must be in [0, 1], got {self.theta}")
        for name in ("r0", "r1", "holder_r1", "sharp_r"):
            v = getattr(self, name)
            if not v >= 1.0:
                raise ValueError(f"index {name} must satisfy 1 <= {name} <= inf, got {v}")
        if not self.r0 <= self.r1:
            raise ValueError(f"interpolation requires r0 <= r1, got {self.r0} > {self.r1}")

    @property
    def r_interp(self) -> float:
        inv = (1.0 - self.theta) / self.r0 + (self.theta / self.r1 if self.r1 != INF else 0.0)
        return INF if inv == 0.0 else 1.0 / inv

    @property
    def holder_r2(self) -> float:
        if self.holder_r1 == INF:
            return 1.0
        if self.holder_r1 == 1.0:
            return INF
        return self.holder_r1 / (self.holder_r1 - 1.0)


@dataclass(frozen=True)
class InequalityCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def holds(self, rel_slack: float = 1e-8) -> bool:
        return self.margin >= -rel_slack * abs(self.rhs)


@dataclass(frozen=True)
class InequalityReport:
    checks: tuple[InequalityCheck, ...]

    def all_hold(self, rel_slack: float = 1e-8) -> bool:
        return all(c.holds(rel_slack) for c in self.checks)


def inequality_suite(
    f: GridFunction | StepFunction,
    g: GridFunction | StepFunction,
    params: InequalityParams,
) -> InequalityReport:
    """Margins for the radial-decay, interpolation, and pairing inequalities."""
    table_f = RearrangementTable.from_function(f)

    # pointwise bound on the spherical rearrangement: f#(x) <= C |x|^{-n/r}
    n = table_f.dimension
    cn = unit_ball_volume(n)
    r = params.sharp_r
    required = (
        float(np.max(table_f.levels * (table_f.cum_mass / cn) ** (1.0 / r)))
        if table_f.levels.size
        else 0.0
    )
    coef = params.sharp_coef if params.sharp_coef is not None else required
    sharp = InequalityCheck("spherical_decay", lhs=required, rhs=coef)

    # interpolation of weak norms across 1/r = (1-theta)/r0 + theta/r1
    weak = lambda rr: lorentz_norm(table_f, LorentzIndex(rr, INF))
    lhs_i = weak(params.r_interp)
    rhs_i = weak(params.r0) ** (1.0 - params.theta) * weak(params.r1) ** params.theta
    interp = InequalityCheck("weak_interpolation", lhs=lhs_i, rhs=rhs_i)

    # product pairing: ||fg||_1 <= ||f||_{r1,1} ||g||_{r2,inf}
    vf, mf, _ = _values_masses_dim(f)
    vg, mg, _ = _values_masses_dim(g)
    if vf.shape != vg.shape or not np.array_equal(mf, mg):
        raise ValueError("pairing inequality needs f and g on the same measure partition")
    lhs_h = float(np.sum(mf * vf * vg))
    rhs_h = lorentz_norm(f, LorentzIndex(params.holder_r1, 1.0)) * lorentz_norm(
        g, LorentzIndex(params.holder_r2, INF)
    )
    pairing = InequalityCheck("lorentz_pairing", lhs=lhs_h, rhs=rhs_h)

    return InequalityReport(checks=(sharp, interp, pairing))
