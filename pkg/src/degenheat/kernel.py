"""Numerical fundamental solution of  d_t u = w^{-1} div(w grad u).

No closed form exists for these weights, so the kernel is built by evolving
per-cell unit masses with an unconditionally stable implicit scheme in
conservative flux form on the graded mesh:

* axis case: the 1-D operator |x|^{-a} d_x(|x|^a d_x .) on the mirrored mesh
  [-R, R]; the n-D kernel is this table times a classical (n-1)-dimensional
  Gaussian and is never materialized,
* radial case: r^{-(n-1)-b} d_r(r^{n-1+b} d_r .) on [0, R], acting on radial
  profiles.

Fluxes use the exact face value of the weight, so the discrete weighted mass
is conserved to solver tolerance and the unit row/column mass property holds
by construction.  Zero-flux truncation at R; no condition is imposed at the
singular point, where the vanishing face weight encodes the degeneracy.
"""

from __future__ import annotations

import hashlib
import math
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .lorentz import INF, LorentzIndex, StepFunction, lorentz_norm
from .weights import Grid, WeightCase, WeightSpec, ball_mass

__all__ = [
    "SolverMesh",
    "KernelTable",
    "KernelSuite",
    "build_kernel",
    "kernel_bounds",
    "verify_kernel",
    "KernelVerification",
    "EnvelopeFit",
    "SlopeFit",
    "KernelInvariantError",
    "EnvelopeFitError",
]


class KernelInvariantError(AssertionError):
    """A structural kernel invariant (positivity/symmetry/mass) failed."""


class EnvelopeFitError(RuntimeError):
    """No constants bracket the requested share of kernel entries."""


@dataclass(frozen=True)
class SolverMesh:
    """Mesh the stepper works on: mirrored [-R, R] for axis, [0, R] radial."""

    points: np.ndarray
    masses: np.ndarray
    lower: np.ndarray  # subdiagonal coefficients of the generator
    upper: np.ndarray  # superdiagonal coefficients of the generator
    center: int  # index of the node mirroring grid node 0

    @property
    def size(self) -> int:
        return int(self.points.size)

    def extend(self, half_values: np.ndarray) -> np.ndarray:
        """Embed half-grid nodal values into the solver mesh (evenly, if mirrored)."""
        if self.center == 0:
            return np.asarray(half_values, dtype=float).copy()
        return np.concatenate((half_values[:0:-1], half_values))

    def restrict(self, full_values: np.ndarray) -> np.ndarray:
        """Values at the half-grid nodes (right half of a mirrored mesh)."""
        return full_values[self.center :].copy()


def solver_mesh(grid: Grid) -> SolverMesh:
    spec = grid.spec
    nodes = grid.nodes
    bounds = grid.cell_bounds
    if spec.case is WeightCase.AXIS_POWER:
        points = np.concatenate((-nodes[:0:-1], nodes))
        masses = np.concatenate((grid.cell_mass[:0:-1], [2.0 * grid.cell_mass[0]], grid.cell_mass[1:]))
        faces = np.concatenate((-bounds[-2:0:-1], bounds[1:-1]))
        center = nodes.size - 1
    else:
        points = nodes.copy()
        masses = grid.cell_mass.copy()
        faces = bounds[1:-1].copy()
        center = 0
    # face conductance: exact two-point transmissibility (the harmonic mean
    # of the weight between nodes) keeps the singular constant-flux mode
    # exact and restores second-order self-convergence near the degeneracy;
    # where 1/w is non-integrable at r = 0 (radial, n+b >= 2) fall back to
    # the face-value form, which is consistent for the even local modes
    h = np.diff(points)
    cond = np.empty(h.size)
    for i in range(h.size):
        lo, hi = sorted((abs(points[i]), abs(points[i + 1])))
        inv = spec.inverse_reduced_integral(lo, hi)
        if math.isinf(inv):
            cond[i] = float(spec.reduced_weight(abs(faces[i]))) / h[i]
        else:
            cond[i] = 1.0 / inv
    upper = np.zeros(points.size)
    lower = np.zeros(points.size)
    upper[:-1] = cond / masses[:-1]
    lower[1:] = cond / masses[1:]
    return SolverMesh(points=points, masses=masses, lower=lower, upper=upper, center=center)


def _implicit_band(mesh: SolverMesh, dt: float) -> np.ndarray:
    """Banded form of I - dt*A for scipy.linalg.solve_banded."""
    m = mesh.size
    ab = np.zeros((3, m))
    ab[0, 1:] = -dt * mesh.upper[:-1]
    ab[2, :-1] = -dt * mesh.lower[1:]
    ab[1, :] = 1.0 + dt * (mesh.upper + mesh.lower)
    return ab


def propagate(mesh: SolverMesh, values: np.ndarray, t: float, steps: int) -> np.ndarray:
    """Apply the implicit semigroup over time t with the given step count."""
    if t == 0.0 or steps == 0:
        return np.asarray(values, dtype=float).copy()
    if t < 0.0:
        raise ValueError(f"propagation time must be nonnegative, got {t}")
    ab = _implicit_band(mesh, t / steps)
    out = np.asarray(values, dtype=float)
    for _ in range(steps):
        out = solve_banded((1, 1), ab, out, overwrite_ab=False, overwrite_b=False)
    return out


@dataclass(frozen=True)
class KernelTable:
    """Discretized fundamental solution at one time, with quadrature masses."""

    spec: WeightSpec
    grid: Grid
    t: float
    steps: int
    points: np.ndarray = field(repr=False)
    masses: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        k = self.matrix
        neg = float(np.min(k))
        if neg < -1e-10:
            raise KernelInvariantError(f"kernel entries dip to {neg:g} (discretization bug)")
        scale = float(np.max(k))
        asym = float(np.max(np.abs(k - k.T)))
        if asym > 1e-8 * scale:
            raise KernelInvariantError(f"kernel asymmetry {asym:g} exceeds 1e-8 relative")

    @property
    def size(self) -> int:
        return int(self.points.size)

    def row_masses(self) -> np.ndarray:
        return self.matrix @ self.masses

    def k1_max_error(self, interior_only: bool = False) -> float:
        rm = self.row_masses()
        if interior_only:
            rm = rm[self.interior_mask()]
        return float(np.max(np.abs(rm - 1.0)))

    def interior_mask(self, margin_factor: float = 6.0) -> np.ndarray:
        """Rows far enough from the truncation boundary that reflections are tiny."""
        margin = margin_factor * math.sqrt(self.t)
        return np.abs(self.points) <= self.grid.radius - margin

    def apply(self, full_values: np.ndarray) -> np.ndarray:
        return self.matrix @ (np.asarray(full_values, dtype=float) * self.masses)

    def row_step_function(self, i: int) -> StepFunction:
        """Row i as a step function against the mesh quadrature masses."""
        return StepFunction(self.matrix[i], self.masses, self.spec.dimension)


def build_kernel(spec: WeightSpec, grid: Grid, t: float, steps: int) -> KernelTable:
    """Evolve normalized per-cell indicators to time t, one column per cell."""
    if not t > 0.0:
        raise ValueError(f"kernel time must be positive, got {t}")
    if steps < 1:
        raise ValueError(f"step count must be positive, got {steps}")
    if grid.spec != spec:
        raise ValueError("grid was built for a different weight spec")
    mesh = solver_mesh(grid)
    start = np.diag(1.0 / mesh.masses)
    k = propagate(mesh, start, t, steps)
    # solver roundoff may leave harmless negative dust; the constructor
    # rejects anything beyond -1e-10 before we clip
    table = KernelTable(
        spec=spec,
        grid=grid,
        t=float(t),
        steps=int(steps),
        points=mesh.points,
        masses=mesh.masses,
        matrix=k,
    )
    np.clip(table.matrix, 0.0, None, out=table.matrix)
    return table


def _min_branch(spec: WeightSpec, coord: float, t: float) -> float:
    """min(t^{-n/4} |z|^{-alpha/2}, t^{-(n+alpha)/4}) with the 0-center limit."""
    n, a = spec.dimension, spec.alpha
    flat = t ** (-(n + a) / 4.0)
    if coord == 0.0 or a == 0.0:
        return flat
    return min(t ** (-n / 4.0) * coord ** (-a / 2.0), flat)


def kernel_bounds(
    spec: WeightSpec,
    x: np.ndarray | float,
    y: np.ndarray | float,
    t: float,
    constants: tuple[float, float],
) -> tuple[float, float]:
    """Two-sided min-branch envelope for the kernel at points x, y.

    ``constants`` = (lower, upper) prefactors; each also sets its own
    Gaussian time scale, so the lower bound weakens and the upper bound
    strengthens as its constant decreases.
    """
    if not t > 0.0:
        raise ValueError(f"time must be positive, got {t}")
    d, big_d = constants
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    dist2 = float(np.sum((xv - yv) ** 2))
    if spec.case is WeightCase.AXIS_POWER:
        cx, cy = abs(float(xv[0])), abs(float(yv[0]))
    else:
        cx, cy = float(np.linalg.norm(xv)), float(np.linalg.norm(yv))
    lower = d * _min_branch(spec, cx, t) * _min_branch(spec, cy, t) * math.exp(-dist2 / (d * t))
    n, a = spec.dimension, spec.alpha
    upper = big_d * t ** (-(n + a) / 2.0) * math.exp(-dist2 / (big_d * t))
    return lower, upper


# ---------------------------------------------------------------------------
# envelope fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeFit:
    lower: float
    upper: float
    lower_coverage: float
    upper_coverage: float
    entries: int


def _comparison_entries(table: KernelTable, dist_cut: float = 4.0):
    """Indices and distances of the Gaussian-core entries used by the fits.

    For radial tables the entries are angular averages, so the upper envelope
    is evaluated at the closest approach |r - rho| and the lower envelope at
    the farthest point r + rho; for axis tables the literal distance works on
    both sides.  Near-axis/low-t lower-bound quality is grid limited, hence
    coverage is reported instead of asserted at 100%.
    """
    pts = table.points
    inter = np.flatnonzero(table.interior_mask())
    xi = pts[inter]
    diff = np.abs(xi[:, None] - xi[None, :])
    core = diff <= dist_cut * math.sqrt(table.t)
    ii, jj = np.nonzero(core)
    rows = inter[ii]
    cols = inter[jj]
    if table.spec.case is WeightCase.AXIS_POWER:
        d_up = np.abs(pts[rows] - pts[cols])
        d_low = d_up
    else:
        d_up = np.abs(pts[rows] - pts[cols])
        d_low = np.abs(pts[rows]) + np.abs(pts[cols])
    return rows, cols, d_up, d_low


@dataclass(frozen=True)
class _FitData:
    """Precomputed per-table arrays shared by every bisection step."""

    t: float
    vals: np.ndarray
    d_up2: np.ndarray
    d_low2: np.ndarray
    flat_exponent: float  # t^{-(n+alpha)/2}
    mb_prod: np.ndarray  # min-branch prefactor product per entry
    ball_prod: np.ndarray  # sqrt(w(B(x)) w(B(y))) per entry


def _fit_data(tb: KernelTable) -> _FitData:
    rows, cols, d_up, d_low = _comparison_entries(tb)
    n, a = tb.spec.dimension, tb.spec.alpha
    mb = np.array([_min_branch(tb.spec, abs(p), tb.t) for p in tb.points])
    rt = math.sqrt(tb.t)
    wb = np.array([ball_mass(tb.spec, abs(p), rt) for p in tb.points])
    return _FitData(
        t=tb.t,
        vals=tb.matrix[rows, cols],
        d_up2=d_up**2,
        d_low2=d_low**2,
        flat_exponent=tb.t ** (-(n + a) / 2.0),
        mb_prod=mb[rows] * mb[cols],
        ball_prod=np.sqrt(wb[rows] * wb[cols]),
    )


def _coverage_upper(data: list[_FitData], const: float, kind: str) -> float:
    tot = 0
    ok = 0
    for d in data:
        pref = const * d.flat_exponent if kind == "minbranch" else const / d.ball_prod
        env = pref * np.exp(-d.d_up2 / (const * d.t))
        tot += d.vals.size
        ok += int(np.sum(d.vals <= env))
    return ok / tot


def _coverage_lower(data: list[_FitData], const: float, kind: str) -> float:
    tot = 0
    ok = 0
    for d in data:
        pref = const * d.mb_prod if kind == "minbranch" else const / d.ball_prod
        env = pref * np.exp(-d.d_low2 / (const * d.t))
        tot += d.vals.size
        ok += int(np.sum(env <= d.vals))
    return ok / tot


def _bisect_constant(cov, target: float, lo: float, hi: float, increase_helps: bool, iters: int = 48):
    """Smallest (or largest) constant reaching the target coverage."""
    f_lo, f_hi = cov(lo), cov(hi)
    if increase_helps:
        if f_hi < target:
            return None, f_hi
        if f_lo >= target:
            return lo, f_lo
    else:
        if f_lo < target:
            return None, f_lo
        if f_hi >= target:
            return hi, f_hi
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if (cov(mid) >= target) == increase_helps:
            hi = mid
        else:
            lo = mid
    pick = hi if increase_helps else lo
    return pick, cov(pick)


def fit_envelope_constants(
    tables: list[KernelTable],
    coverage_target: float = 0.99,
    kind: str = "minbranch",
) -> EnvelopeFit:
    """Fit the tightest envelope constants bracketing >= coverage of entries.

    kind = "minbranch" fits the explicit min-branch envelope; kind =
    "sandwich" fits the ball-mass-prefactor sandwich.
    """
    data = [_fit_data(tb) for tb in tables]
    up, up_cov = _bisect_constant(
        lambda c: _coverage_upper(data, c, kind), coverage_target, 1e-3, 1e6, True
    )
    low, low_cov = _bisect_constant(
        lambda c: _coverage_lower(data, c, kind), coverage_target, 1e-12, 1e3, False
    )
    if up is None or low is None:
        raise EnvelopeFitError(
            f"no {kind} constants bracket {coverage_target:.0%} of kernel entries "
            f"(upper coverage {up_cov:.4f}, lower coverage {low_cov:.4f})"
        )
    return EnvelopeFit(
        lower=low,
        upper=up,
        lower_coverage=low_cov,
        upper_coverage=up_cov,
        entries=sum(d.vals.size for d in data),
    )


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    label: str
    r: float
    slope: float
    intercept: float
    predicted: float

    @property
    def relative_error(self) -> float:
        if self.predicted == 0.0:
            return abs(self.slope)
        return abs(self.slope - self.predicted) / abs(self.predicted)


def loglog_slope(ts: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    lx = np.log(np.asarray(ts, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class KernelVerification:
    times: tuple[float, ...]
    k1_errors: dict[float, float]
    k2_errors: dict[float, float]
    sandwich: EnvelopeFit
    minbranch: EnvelopeFit
    norm_slopes: tuple[SlopeFit, ...]
    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def composition_error(t_table: KernelTable, half_table: KernelTable) -> float:
    """Weighted-L1 row error of K(t) against K(t/2) composed with itself."""
    m = half_table.masses
    comp = (half_table.matrix * m[None, :]) @ half_table.matrix
    diff = np.abs(t_table.matrix - comp) * m[None, :]
    rows = diff.sum(axis=1)
    return float(np.max(rows[t_table.interior_mask()]))


def verify_kernel(
    spec: WeightSpec,
    grid: Grid,
    times: list[float],
    steps: int = 256,
    slope_rs: tuple[float, ...] = (2.0, INF),
    coverage_target: float = 0.99,
    suite: "KernelSuite | None" = None,
) -> KernelVerification:
    """Build tables at the given geometric times and verify the kernel laws.

    Checks: unit row mass, self-composition across a time halving, fitted
    two-sided envelopes (both the ball-mass sandwich and the explicit
    min-branch form), and log-log decay slopes of strong and (r,1) norms of
    kernel rows seeded at the singular point.
    """
    times = sorted(float(t) for t in times)
    if len(times) < 4:
        raise ValueError("kernel verification needs at least 4 times")
    ratios = [times[i + 1] / times[i] for i in range(len(times) - 1)]
    if max(ratios) - min(ratios) > 1e-9 * max(ratios):
        raise ValueError("kernel verification times must be geometrically spaced")

    suite = suite if suite is not None else KernelSuite(spec, grid, steps=steps)
    failures: list[str] = []
    k1: dict[float, float] = {}
    k2: dict[float, float] = {}
    tables = []
    for t in times:
        tb = suite.table(t)
        tables.append(tb)
        k1[t] = tb.k1_max_error(interior_only=True)
        k2[t] = composition_error(tb, suite.table(t / 2.0))

    try:
        sandwich = fit_envelope_constants(tables, coverage_target, kind="sandwich")
    except EnvelopeFitError as exc:
        failures.append(str(exc))
        sandwich = EnvelopeFit(math.nan, math.nan, 0.0, 0.0, 0)
    try:
        minbranch = fit_envelope_constants(tables, coverage_target, kind="minbranch")
    except EnvelopeFitError as exc:
        failures.append(str(exc))
        minbranch = EnvelopeFit(math.nan, math.nan, 0.0, 0.0, 0)

    n, a = spec.dimension, spec.alpha
    center = tables[0].size // 2 if spec.case is WeightCase.AXIS_POWER else 0
    slopes: list[SlopeFit] = []
    for r in slope_rs:
        predicted = -(n + a) / 2.0 * (1.0 - (0.0 if r == INF else 1.0 / r))
        strong = [
            _row_norm(tb, center, r) for tb in tables
        ]
        s, b = loglog_slope(np.array(times), np.array(strong))
        slopes.append(SlopeFit(f"row_strong_r={r:g}", r, s, b, predicted))
        if r != INF:
            weak1 = [lorentz_norm(tb.row_step_function(center), LorentzIndex(r, 1.0)) for tb in tables]
            s1, b1 = loglog_slope(np.array(times), np.array(weak1))
            slopes.append(SlopeFit(f"row_lorentz1_r={r:g}", r, s1, b1, predicted))

    return KernelVerification(
        times=tuple(times),
        k1_errors=k1,
        k2_errors=k2,
        sandwich=sandwich,
        minbranch=minbranch,
        norm_slopes=tuple(slopes),
        failures=tuple(failures),
    )


def _row_norm(tb: KernelTable, i: int, r: float) -> float:
    row = tb.matrix[i]
    if r == INF:
        return float(np.max(row))
    return float(np.sum(tb.masses * row**r) ** (1.0 / r))


# ---------------------------------------------------------------------------
# suite: shared tables, direct propagation, optional binary cache
# ---------------------------------------------------------------------------


_CACHE_MAGIC = b"DHKT0001"


def _grid_digest(grid: Grid) -> bytes:
    h = hashlib.sha256()
    h.update(grid.nodes.tobytes())
    h.update(struct.pack("<d", grid.radius))
    return h.digest()


class KernelSuite:
    """Provider of kernel tables and direct semigroup propagation.

    Tables share one grid and step policy and are cached in memory (and
    optionally on disk).  ``propagate`` steps raw mesh vectors with the same
    discrete generator the tables are built from, so table application and
    direct stepping agree up to time-discretization error.
    """

    def __init__(
        self,
        spec: WeightSpec,
        grid: Grid,
        steps: int = 256,
        cache_dir: str | Path | None = None,
    ) -> None:
        if grid.spec != spec:
            raise ValueError("grid was built for a different weight spec")
        self.spec = spec
        self.grid = grid
        self.steps = int(steps)
        self.mesh = solver_mesh(grid)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._tables: dict[float, KernelTable] = {}
        self._lock = threading.Lock()

    # -- tables ------------------------------------------------------------

    def table(self, t: float) -> KernelTable:
        t = float(t)
        # tables are immutable once built; the lock only guards the cache so
        # concurrent sweep cells can share one suite
        with self._lock:
            if t in self._tables:
                return self._tables[t]
        loaded = self._load_cached(t)
        built = loaded if loaded is not None else build_kernel(self.spec, self.grid, t, self.steps)
        with self._lock:
            self._tables.setdefault(t, built)
        if loaded is None:
            self._store_cached(built)
        return self._tables[t]

    # -- direct propagation -------------------------------------------------

    def propagate(self, full_values: np.ndarray, tau: float, substeps: int) -> np.ndarray:
        return propagate(self.mesh, full_values, tau, substeps)

    def propagate_ladder(
        self, full_values: np.ndarray, times: list[float], substeps: int = 16
    ) -> dict[float, np.ndarray]:
        """March one vector through ascending times, reusing each increment."""
        out: dict[float, np.ndarray] = {}
        cur = np.asarray(full_values, dtype=float)
        now = 0.0
        for t in sorted(float(t) for t in times):
            cur = propagate(self.mesh, cur, t - now, substeps)
            out[t] = cur
            now = t
        return out

    def extend(self, f_values: np.ndarray) -> np.ndarray:
        return self.mesh.extend(f_values)

    def restrict(self, full_values: np.ndarray) -> np.ndarray:
        return self.mesh.restrict(full_values)

    # -- binary cache --------------------------------------------------------

    def _cache_path(self, t: float) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.sha256()
        key.update(_CACHE_MAGIC)
        key.update(self.spec.case.value.encode())
        key.update(struct.pack("<dqd", self.spec.exponent, self.spec.dimension, self.grid.radius))
        key.update(_grid_digest(self.grid))
        key.update(struct.pack("<dq", t, self.steps))
        return self.cache_dir / f"kernel_{key.hexdigest()[:24]}.bin"

    def _store_cached(self, table: KernelTable) -> None:
        path = self._cache_path(table.t)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        header = _CACHE_MAGIC + struct.pack(
            "<Bqdddqq",
            0 if self.spec.case is WeightCase.AXIS_POWER else 1,
            self.spec.dimension,
            self.spec.exponent,
            self.grid.radius,
            table.t,
            self.steps,
            table.size,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(_grid_digest(self.grid))
            fh.write(table.points.astype("<f8").tobytes())
            fh.write(table.masses.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(table.matrix, dtype="<f8").tobytes())

    def _load_cached(self, t: float) -> KernelTable | None:
        path = self._cache_path(t)
        if path is None or not path.exists():
            return None
        with open(path, "rb") as fh:
            magic = fh.read(len(_CACHE_MAGIC))
            if magic != _CACHE_MAGIC:
                return None
            case_code, dim, expo, radius, tt, steps, size = struct.unpack(
                "<Bqdddqq", fh.read(struct.calcsize("<Bqdddqq"))
            )
            digest = fh.read(32)
            want_case = 0 if self.spec.case is WeightCase.AXIS_POWER else 1
            if (
                case_code != want_case
                or dim != self.spec.dimension
                or expo != self.spec.exponent
                or radius != self.grid.radius
                or tt != t
                or steps != self.steps
                or digest != _grid_digest(self.grid)
            ):
                return None
            points = np.frombuffer(fh.read(8 * size), dtype="<f8").copy()
            masses = np.frombuffer(fh.read(8 * size), dtype="<f8").copy()
            matrix = np.frombuffer(fh.read(8 * size * size), dtype="<f8").reshape(size, size).copy()
        return KernelTable(
            spec=self.spec,
            grid=self.grid,
            t=t,
            steps=steps,
            points=points,
            masses=masses,
            matrix=matrix,
        )
