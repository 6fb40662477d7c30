import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from degenheat.weights import (
    WeightCase,
    WeightSpec,
    ball_mass,
    ball_mass_bounds,
    fit_ball_constants,
    make_grid,
    weight_at,
)

AX, RAD = WeightCase.AXIS_POWER, WeightCase.RADIAL_POWER


class TestWeightSpec:
    def test_axis_exponent_range(self):
        WeightSpec(AX, 0.0, 1)
        WeightSpec(AX, 0.99, 3)
        with pytest.raises(ValueError):
            WeightSpec(AX, 1.0, 1)
        with pytest.raises(ValueError):
            WeightSpec(AX, -0.1, 1)

    def test_radial_exponent_range(self):
        WeightSpec(RAD, 1.0, 2)
        with pytest.raises(ValueError):
            WeightSpec(RAD, 2.0, 2)


class TestWeightAt:
    def test_axis_square_root(self):
        assert weight_at(WeightSpec(AX, 0.5, 2), (4.0, 0.0)) == pytest.approx(2.0)

    def test_zero_exponent_is_unweighted(self):
        assert weight_at(WeightSpec(AX, 0.0, 3), (7.0, -1.0, 2.0)) == 1.0

    def test_radial_norm(self):
        assert weight_at(WeightSpec(RAD, 1.0, 2), (0.0, 3.0)) == pytest.approx(3.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            weight_at(WeightSpec(AX, 0.5, 2), (1.0,))


class TestBallMass:
    def test_axis_centered_half_power(self):
        # integral of |x|^(1/2) over [-1, 1]
        spec = WeightSpec(AX, 0.5, 1)
        assert ball_mass(spec, 0.0, 1.0) == pytest.approx(4.0 / 3.0, rel=1e-12)

    def test_radial_centered_two_d(self):
        spec = WeightSpec(RAD, 1.0, 2)
        assert ball_mass(spec, 0.0, 1.0) == pytest.approx(2.0 * math.pi / 3.0, rel=1e-12)

    def test_unweighted_is_lebesgue(self):
        spec = WeightSpec(AX, 0.0, 1)
        assert ball_mass(spec, 3.7, 2.0) == pytest.approx(4.0, rel=1e-12)

    def test_axis_offcenter_matches_quadrature(self):
        spec = WeightSpec(AX, 0.5, 1)
        got = ball_mass(spec, 0.3, 1.0)
        ref, _ = integrate.quad(lambda y: abs(y) ** 0.5, -0.7, 1.3, points=[0.0])
        assert got == pytest.approx(ref, rel=1e-10)

    def test_axis_two_d_matches_double_quadrature(self):
        spec = WeightSpec(AX, 0.5, 2)
        c, r = 0.4, 1.0
        got = ball_mass(spec, (c, 5.0), r)
        ref, _ = integrate.dblquad(
            lambda y2, y1: abs(y1) ** 0.5,
            c - r, c + r,
            lambda y1: -math.sqrt(max(r**2 - (y1 - c) ** 2, 0.0)),
            lambda y1: math.sqrt(max(r**2 - (y1 - c) ** 2, 0.0)),
        )
        assert got == pytest.approx(ref, rel=1e-6)

    def test_radial_offcenter_matches_double_quadrature(self):
        spec = WeightSpec(RAD, 1.0, 2)
        rho, r = 1.5, 0.8
        got = ball_mass(spec, (rho, 0.0), r)
        ref, _ = integrate.dblquad(
            lambda y2, y1: math.hypot(y1, y2),
            rho - r, rho + r,
            lambda y1: -math.sqrt(max(r**2 - (y1 - rho) ** 2, 0.0)),
            lambda y1: math.sqrt(max(r**2 - (y1 - rho) ** 2, 0.0)),
        )
        assert got == pytest.approx(ref, rel=1e-6)

    def test_axis_translation_in_transverse_coordinates(self):
        spec = WeightSpec(AX, 0.5, 2)
        a = ball_mass(spec, (0.4, 0.0), 1.0)
        b = ball_mass(spec, (0.4, 17.3), 1.0)
        assert a == pytest.approx(b, rel=1e-12)

    @given(
        lam=st.floats(0.1, 10.0),
        r=st.floats(0.05, 5.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_scaling_law_at_origin(self, lam, r):
        spec = WeightSpec(RAD, 1.0, 2)
        big = ball_mass(spec, 0.0, lam * r)
        small = ball_mass(spec, 0.0, r)
        assert big == pytest.approx(lam**spec.mass_exponent * small, rel=1e-10)

    def test_strictly_increasing_in_radius(self):
        spec = WeightSpec(AX, 0.5, 1)
        radii = np.linspace(0.1, 4.0, 30)
        masses = [ball_mass(spec, 0.7, float(r)) for r in radii]
        assert np.all(np.diff(masses) > 0.0)


class TestBallMassBounds:
    def test_axis_at_origin_branches_coincide(self):
        spec = WeightSpec(AX, 0.5, 1)
        env = ball_mass_bounds(spec, 0.0, 2.0)
        assert env.lower == pytest.approx(2.0**1.5)
        assert env.upper == pytest.approx(2.0**1.5)
        assert env.branch == "r >= |x1|"

    def test_radial_far_center_branch(self):
        spec = WeightSpec(RAD, 1.0, 2)
        env = ball_mass_bounds(spec, 5.0, 1.0)
        assert env.upper == pytest.approx(5.0)
        assert env.branch == "r <= |x|"

    @pytest.mark.parametrize("spec", [WeightSpec(AX, 0.5, 1), WeightSpec(RAD, 1.0, 2)])
    def test_fitted_envelope_brackets_sample(self, spec):
        rng = np.random.default_rng(7)
        fit = fit_ball_constants(spec, n_samples=100, rng=rng)
        check = np.random.default_rng(7)
        for _ in range(100):
            c = float(4.0 * abs(check.standard_normal()))
            r = float(math.exp(check.uniform(math.log(0.05), math.log(8.0))))
            env = ball_mass_bounds(spec, c, r, constants=(fit.lower_coef, fit.upper_coef))
            mass = ball_mass(spec, c, r)
            assert env.lower <= mass * (1.0 + 1e-12)
            assert mass <= env.upper * (1.0 + 1e-12)


class TestGrid:
    def test_uniform_grading_nodes(self):
        spec = WeightSpec(AX, 0.0, 1)
        grid = make_grid(spec, 1.0, 16, grading=1.0)
        assert np.allclose(grid.nodes[:5], [0.0, 1 / 16, 2 / 16, 3 / 16, 4 / 16])

    def test_axis_mass_telescopes(self):
        spec = WeightSpec(AX, 0.5, 1)
        grid = make_grid(spec, 1.0, 64, grading=2.0)
        assert np.sum(grid.cell_mass) == pytest.approx(2.0 / 3.0, rel=1e-12)
        # physical measure doubles by even extension
        assert grid.total_measure == pytest.approx(4.0 / 3.0, rel=1e-12)

    def test_radial_mass_matches_ball(self):
        spec = WeightSpec(RAD, 1.0, 2)
        grid = make_grid(spec, 1.0, 48)
        assert np.sum(grid.cell_mass) == pytest.approx(2.0 * math.pi / 3.0, rel=1e-12)

    def test_grading_concentrates_near_zero(self):
        spec = WeightSpec(AX, 0.5, 1)
        grid = make_grid(spec, 1.0, 32, grading=2.0)
        widths = np.diff(grid.nodes)
        assert widths[0] < widths[-1] / 10.0

    def test_small_cell_count_rejected(self):
        with pytest.raises(ValueError):
            make_grid(WeightSpec(AX, 0.0, 1), 1.0, 8)

    def test_grid_function_requires_finite(self):
        grid = make_grid(WeightSpec(AX, 0.0, 1), 1.0, 16)
        with pytest.raises(ValueError):
            grid.function(np.full(grid.n_nodes, np.inf))
