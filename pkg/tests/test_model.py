"""Model layer: potential closed forms, symbols, harmonic levels."""

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from artifact.model import (
    SLOPE,
    WELL,
    ModelParams,
    PotentialModel,
    hamilton_field,
    harmonic_levels,
    symbol_value,
)


def oscillator_ground_level_fd(omega_sq, half_width=12.0, npts=6001):
    """Lowest eigenvalue of -d2/ds2 + omega_sq * s^2 on a large interval (FD oracle)."""
    s = np.linspace(-half_width, half_width, npts)
    dx = s[1] - s[0]
    diag = 2.0 / dx**2 + omega_sq * s**2
    off = np.full(npts - 1, -1.0 / dx**2)
    vals = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))[0]
    return vals[0]


class TestPotential:
    def test_zero_at_origin(self, radial2d):
        assert radial2d.value(np.zeros(2)) == 0.0

    def test_radial_closed_form_and_saturation(self, radial2d):
        for r in (0.3, 1.0, 2.5):
            assert radial2d.value(np.array([0.0, r])) == pytest.approx(
                1.0 - np.exp(-(r**2) / 2), abs=1e-15
            )
        assert radial2d.value(np.array([0.0, 40.0])) == pytest.approx(1.0, abs=1e-12)

    def test_gradient_matches_central_differences(self, rng):
        model = PotentialModel.anisotropic([[2.0, 0.3], [0.3, 1.0]])
        eps = 1e-6
        for _ in range(20):
            x = rng.uniform(-1.2, 1.2, size=2)
            grad = model.gradient(x)
            fd = np.zeros(2)
            for i in range(2):
                e = np.zeros(2)
                e[i] = eps
                fd[i] = (model.value(x + e) - model.value(x - e)) / (2 * eps)
            assert np.max(np.abs(grad - fd)) <= 1e-8 * max(1.0, np.max(np.abs(grad)))

    def test_hessian_at_origin_is_matrix(self):
        a = np.array([[1.5, 0.2], [0.2, 0.8]])
        model = PotentialModel.anisotropic(a)
        assert np.allclose(model.hessian(np.zeros(2)), a, atol=1e-14)

    def test_nonnegative_and_zero_only_at_origin(self, radial2d):
        grid = np.linspace(-2.0, 2.0, 41)
        for u in grid:
            for v in grid:
                val = radial2d.value(np.array([u, v]))
                if u == 0.0 and v == 0.0:
                    assert val == 0.0
                else:
                    assert val > 0.0

    def test_quadratic_approximation_cubic_remainder(self, radial2d):
        # |V2 - <Ax,x>/2| <= K |x|^3 on |x| <= 0.5, with K stable under refinement
        def fitted_k(npts):
            worst = 0.0
            for r in np.linspace(1e-3, 0.5, npts):
                x = np.array([r / np.sqrt(2.0), r / np.sqrt(2.0)])
                lhs = abs(radial2d.value(x) - 0.5 * (x @ x))
                worst = max(worst, lhs / r**3)
            return worst

        k_coarse, k_fine = fitted_k(100), fitted_k(400)
        assert k_fine <= 0.2  # exp series: remainder = q^2/8 - ... with q = r^2/2
        assert abs(k_fine - k_coarse) <= 0.05 * k_coarse + 1e-12

    def test_complex_strip_boundedness(self, params2d, radial2d, rng):
        for _ in range(50):
            x = rng.uniform(-1.5, 1.5, size=2) + 1j * rng.uniform(
                -params2d.strip_delta, params2d.strip_delta, size=2
            )
            assert np.isfinite(radial2d.value(x))

    def test_non_spd_matrix_rejected(self):
        with pytest.raises(ValueError):
            PotentialModel.anisotropic([[1.0, 0.0], [0.0, -0.5]])
        with pytest.raises(ValueError):
            PotentialModel.anisotropic([[1.0, 0.5], [0.0, 1.0]])


class TestSymbols:
    def test_slope_at_origin(self, params2d, radial2d):
        val = symbol_value(SLOPE, params2d, radial2d, np.zeros(2), np.zeros(2))
        assert val == pytest.approx(-0.1, abs=1e-15)

    def test_well_at_origin(self, params2d, radial2d):
        assert symbol_value(WELL, params2d, radial2d, np.zeros(2), np.zeros(2)) == 0.0

    def test_well_imaginary_momentum(self, params2d, radial2d):
        # x = 0, xi = i*s*e_n: bilinear square gives -s^2
        for s in (0.1, 0.7):
            val = symbol_value(WELL, params2d, radial2d, np.zeros(2), np.array([0.0, 1j * s]))
            assert val == pytest.approx(-(s**2), abs=1e-15)

    def test_well_momentum_parity(self, params2d, radial2d, rng):
        for _ in range(30):
            x = rng.uniform(-1, 1, 2) + 1j * rng.uniform(-0.2, 0.2, 2)
            xi = rng.uniform(-1, 1, 2) + 1j * rng.uniform(-0.5, 0.5, 2)
            assert symbol_value(WELL, params2d, radial2d, x, -xi) == symbol_value(
                WELL, params2d, radial2d, x, xi
            )

    def test_hamilton_field_well_fixed_point(self, params2d, radial2d):
        dx, dxi = hamilton_field(WELL, params2d, radial2d, np.zeros(2), np.zeros(2))
        assert np.all(dx == 0) and np.all(dxi == 0)

    def test_hamilton_field_slope(self, params2d, radial2d):
        dx, dxi = hamilton_field(SLOPE, params2d, radial2d, np.zeros(2), np.array([0.0, 1.0]))
        assert np.allclose(dx, [0.0, 2.0]) and np.allclose(dxi, [0.0, -1.0])

    def test_well_field_position_rate(self, params2d, radial2d, rng):
        for _ in range(10):
            x = rng.uniform(-1, 1, 2)
            xi = rng.uniform(-1, 1, 2)
            dx, _ = hamilton_field(WELL, params2d, radial2d, x, xi)
            assert np.allclose(dx, 2 * xi, atol=1e-15)


class TestHarmonicLevels:
    def test_radial_2d(self):
        params = ModelParams(n=2, tau=0.5)
        data = harmonic_levels(params, PotentialModel.radial(2), 3)
        assert data.level(1) == pytest.approx(1.0, abs=1e-12)
        # per-mode FD oscillator oracle, tolerance 1e-4
        for a_i, omega in zip([1.0, 1.0], data.mode_frequencies):
            assert oscillator_ground_level_fd(params.tau * a_i / 2) == pytest.approx(
                omega, abs=1e-4
            )

    def test_1d_scaled(self):
        params = ModelParams(n=1, tau=2.0)
        model = PotentialModel.anisotropic([[2.0]])
        data = harmonic_levels(params, model, 2)
        assert data.level(1) == pytest.approx(np.sqrt(2.0), abs=1e-12)
        assert oscillator_ground_level_fd(params.tau * 2.0 / 2) == pytest.approx(
            data.level(1), abs=1e-4
        )

    def test_anisotropic_2d(self):
        params = ModelParams(n=2, tau=0.5)
        model = PotentialModel.anisotropic(np.diag([1.0, 4.0]))
        data = harmonic_levels(params, model, 3)
        assert data.level(1) == pytest.approx(1.5, abs=1e-12)
        for a_i, omega in zip([1.0, 4.0], data.mode_frequencies):
            assert oscillator_ground_level_fd(params.tau * a_i / 2) == pytest.approx(
                omega, abs=1e-4
            )

    def test_level_ordering_and_spacing(self, params2d, radial2d):
        data = harmonic_levels(params2d, radial2d, 5)
        levels = data.levels[:5]
        assert np.all(np.diff(levels) >= -1e-15)
        # radial n=2: levels are (2k+2)*omega
        omega = data.mode_frequencies[0]
        assert levels[0] == pytest.approx(2 * omega, abs=1e-13)
        assert levels[1] == pytest.approx(4 * omega, abs=1e-13)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ModelParams(n=3)
        with pytest.raises(ValueError):
            ModelParams(mu=-0.1)
        with pytest.raises(ValueError):
            ModelParams(planck_h=0.0)
