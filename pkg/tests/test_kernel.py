import math

import numpy as np
import pytest
from scipy.special import i0e

from degenheat.kernel import (
    EnvelopeFitError,
    KernelInvariantError,
    KernelSuite,
    KernelTable,
    build_kernel,
    composition_error,
    fit_envelope_constants,
    kernel_bounds,
    verify_kernel,
)
from degenheat.weights import WeightCase, WeightSpec, make_grid

AX, RAD = WeightCase.AXIS_POWER, WeightCase.RADIAL_POWER

DESK_SPECS = [
    WeightSpec(AX, 0.0, 1),
    WeightSpec(AX, 0.5, 1),
    WeightSpec(RAD, 0.0, 2),
    WeightSpec(RAD, 1.0, 2),
]


@pytest.fixture(scope="module")
def suites():
    return {
        spec: KernelSuite(spec, make_grid(spec, 16.0, 192, 2.0), steps=256)
        for spec in DESK_SPECS
    }


class TestStructure:
    @pytest.mark.parametrize("spec", DESK_SPECS, ids=str)
    def test_row_mass_symmetry_positivity(self, suites, spec):
        tb = suites[spec].table(1.0)
        assert tb.k1_max_error() < 1e-3
        assert np.min(tb.matrix) >= 0.0
        scale = np.max(tb.matrix)
        assert np.max(np.abs(tb.matrix - tb.matrix.T)) <= 1e-8 * scale

    @pytest.mark.parametrize("spec", DESK_SPECS, ids=str)
    def test_composition_identity(self, suites, spec):
        suite = suites[spec]
        for t in (0.5, 1.0):
            assert composition_error(suite.table(t), suite.table(t / 2)) < 2e-3

    def test_negative_entries_rejected(self, suites):
        tb = suites[DESK_SPECS[0]].table(1.0)
        bad = tb.matrix.copy()
        bad[3, 5] = -1e-6
        with pytest.raises(KernelInvariantError):
            KernelTable(tb.spec, tb.grid, tb.t, tb.steps, tb.points, tb.masses, bad)

    def test_asymmetry_rejected(self, suites):
        tb = suites[DESK_SPECS[0]].table(1.0)
        bad = tb.matrix.copy()
        bad[3, 5] *= 1.5
        with pytest.raises(KernelInvariantError):
            KernelTable(tb.spec, tb.grid, tb.t, tb.steps, tb.points, tb.masses, bad)


class TestClassicalOracle:
    def test_matches_gaussian_when_unweighted(self, suites):
        suite = suites[WeightSpec(AX, 0.0, 1)]
        for t in (0.25, 1.0):
            tb = suite.table(t)
            pts = tb.points
            gauss = (4.0 * math.pi * t) ** -0.5 * np.exp(
                -((pts[:, None] - pts[None, :]) ** 2) / (4.0 * t)
            )
            mask = tb.interior_mask()
            err = np.abs(tb.matrix[mask] - gauss[mask]) @ tb.masses
            assert err.max() < 0.01

    def test_radial_matches_angular_averaged_gaussian(self, suites):
        # 2-D classical kernel averaged over the angle has the closed form
        # (4 pi t)^-1 exp(-(r-s)^2/4t) i0e(rs/2t)
        suite = suites[WeightSpec(RAD, 0.0, 2)]
        t = 0.5
        tb = suite.table(t)
        r = tb.points
        exact = (
            (4.0 * math.pi * t) ** -1
            * np.exp(-((r[:, None] - r[None, :]) ** 2) / (4.0 * t))
            * i0e(np.outer(r, r) / (2.0 * t))
        )
        mask = tb.interior_mask()
        err = np.abs(tb.matrix[mask] - exact[mask]) @ tb.masses
        assert err.max() < 0.01


class TestRefinement:
    @pytest.mark.parametrize(
        "spec", [WeightSpec(AX, 0.5, 1), WeightSpec(RAD, 1.0, 2)], ids=str
    )
    def test_second_order_self_convergence(self, spec):
        tabs = {
            n: build_kernel(spec, make_grid(spec, 12.0, n, 2.0), 1.0, 768)
            for n in (64, 128, 256)
        }

        def diff(coarse, fine):
            sel = np.searchsorted(fine.points, coarse.points)
            sub = fine.matrix[np.ix_(sel, sel)]
            mask = coarse.interior_mask()
            return (np.abs(coarse.matrix[mask] - sub[mask]) @ coarse.masses).max()

        d1 = diff(tabs[64], tabs[128])
        d2 = diff(tabs[128], tabs[256])
        assert 3.0 < d1 / d2 < 5.0


class TestBoundsFormula:
    def test_unweighted_envelopes_share_shape(self):
        spec = WeightSpec(AX, 0.0, 1)
        lo, hi = kernel_bounds(spec, 0.3, 0.8, 2.0, constants=(1.0, 1.0))
        expect = 2.0**-0.5 * math.exp(-0.25 / 2.0)
        assert lo == pytest.approx(expect, rel=1e-12)
        assert hi == pytest.approx(expect, rel=1e-12)

    def test_on_diagonal_branch_arithmetic(self):
        # x = y with |x1| >= sqrt(t): both min branches pick the axis factor
        spec = WeightSpec(AX, 0.5, 1)
        t, x = 0.5, 2.0
        lo, _ = kernel_bounds(spec, x, x, t, constants=(1.0, 1.0))
        assert lo == pytest.approx(t ** (-0.5) * x ** (-0.5), rel=1e-12)

    def test_gaussian_factor_at_unit_argument(self):
        spec = WeightSpec(AX, 0.5, 1)
        t = 0.7
        x, y = 0.0, math.sqrt(t)
        lo, hi = kernel_bounds(spec, x, y, t, constants=(1.0, 1.0))
        assert hi == pytest.approx(t ** (-0.75) * math.exp(-1.0), rel=1e-12)

    def test_time_must_be_positive(self):
        with pytest.raises(ValueError):
            kernel_bounds(WeightSpec(AX, 0.0, 1), 0.0, 0.0, 0.0, (1.0, 1.0))


class TestEnvelopeFits:
    def test_fitted_constants_bracket(self, suites):
        suite = suites[WeightSpec(AX, 0.5, 1)]
        tables = [suite.table(t) for t in (0.5, 1.0, 2.0)]
        for kind in ("minbranch", "sandwich"):
            fit = fit_envelope_constants(tables, 0.99, kind=kind)
            assert fit.lower > 0.0 and fit.upper > fit.lower
            assert fit.lower_coverage >= 0.99
            assert fit.upper_coverage >= 0.99

    def test_impossible_coverage_is_named_failure(self, suites):
        tb = suites[WeightSpec(AX, 0.0, 1)].table(1.0)
        # a hard zero in the Gaussian core defeats every positive lower bound
        broken = tb.matrix.copy()
        c = tb.size // 2
        broken[c, c] = 0.0
        broken[c, :] = broken[:, c] = 0.0
        doctored = KernelTable(tb.spec, tb.grid, tb.t, tb.steps, tb.points, tb.masses, broken)
        with pytest.raises(EnvelopeFitError):
            fit_envelope_constants([doctored], coverage_target=0.999999, kind="minbranch")


class TestVerifyKernel:
    def test_report_for_degenerate_axis(self, suites):
        spec = WeightSpec(AX, 0.5, 1)
        suite = suites[spec]
        rep = verify_kernel(spec, suite.grid, [0.5, 1.0, 2.0, 4.0], suite=suite)
        assert rep.ok
        assert max(rep.k1_errors.values()) < 1e-3
        assert max(rep.k2_errors.values()) < 2e-3
        by_label = {s.label: s for s in rep.norm_slopes}
        assert by_label["row_strong_r=inf"].relative_error < 0.05
        assert by_label["row_strong_r=2"].relative_error < 0.05
        assert by_label["row_lorentz1_r=2"].relative_error < 0.05

    def test_needs_four_geometric_times(self, suites):
        spec = WeightSpec(AX, 0.5, 1)
        with pytest.raises(ValueError):
            verify_kernel(spec, suites[spec].grid, [0.5, 1.0, 2.0], suite=suites[spec])
        with pytest.raises(ValueError):
            verify_kernel(spec, suites[spec].grid, [0.5, 1.0, 2.0, 3.0], suite=suites[spec])


class TestSuiteCache:
    def test_roundtrip_binary_cache(self, tmp_path):
        spec = WeightSpec(AX, 0.5, 1)
        grid = make_grid(spec, 8.0, 32, 2.0)
        s1 = KernelSuite(spec, grid, steps=16, cache_dir=tmp_path)
        tb = s1.table(0.5)
        files = list(tmp_path.glob("kernel_*.bin"))
        assert len(files) == 1
        s2 = KernelSuite(spec, grid, steps=16, cache_dir=tmp_path)
        tb2 = s2.table(0.5)
        assert np.array_equal(tb.matrix, tb2.matrix)
        assert np.array_equal(tb.points, tb2.points)

    def test_cache_key_separates_steps(self, tmp_path):
        spec = WeightSpec(AX, 0.5, 1)
        grid = make_grid(spec, 8.0, 32, 2.0)
        KernelSuite(spec, grid, steps=16, cache_dir=tmp_path).table(0.5)
        KernelSuite(spec, grid, steps=32, cache_dir=tmp_path).table(0.5)
        assert len(list(tmp_path.glob("kernel_*.bin"))) == 2

    def test_propagation_matches_table(self):
        spec = WeightSpec(AX, 0.5, 1)
        grid = make_grid(spec, 8.0, 64, 2.0)
        suite = KernelSuite(spec, grid, steps=64)
        tb = suite.table(0.5)
        rng = np.random.default_rng(0)
        v = rng.uniform(0.0, 1.0, tb.size)
        via_table = tb.apply(v)
        via_steps = suite.propagate(v, 0.5, 64)
        assert np.max(np.abs(via_table - via_steps)) < 1e-10 * np.max(np.abs(via_steps))
