"""Grid operator, resonance extraction, and width-law fitting."""

import numpy as np
import pytest
import scipy.linalg

from artifact.model import ModelParams, PotentialModel, harmonic_levels
from artifact.spectral import (
    GridSpec,
    ResonanceResult,
    ScanSample,
    SpectralError,
    accept_sample,
    assemble,
    boundary_decay,
    compute_resonance,
    default_theta,
    find_resonance,
    fit_width,
    width_scan,
)

# First harmonic level coefficient for the radial model at mu = tau = 0.1,
# and the loop action the widths decay with (frozen from the path modules).
E1_N1 = 0.22360679774997896
E1_N2 = 0.4472135954999579
S_REF = 2.242153049938567e-3

RADIAL_1 = PotentialModel.radial(1)
RADIAL_2 = PotentialModel.radial(2)


def params_1d(h, c=1.0):
    return ModelParams(n=1, mu=0.1, tau=0.1, coupling_c=c, planck_h=h)


class TestGridSpec:
    def test_spacing(self):
        grid = GridSpec(n=1, half_width=1.0, points_per_dim=65)
        assert grid.spacing == pytest.approx(2.0 / 64.0, rel=0, abs=0)
        assert grid.axis()[0] == -1.0 and grid.axis()[-1] == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(n=1, half_width=1.0, points_per_dim=63)
        with pytest.raises(ValueError):
            GridSpec(n=1, half_width=-2.0, points_per_dim=128)
        with pytest.raises(ValueError):
            GridSpec(n=1, half_width=1.0, points_per_dim=128, stencil_order=3)
        with pytest.raises(ValueError):
            GridSpec(n=3, half_width=1.0, points_per_dim=128)


class TestAssembly:
    def test_exact_complex_symmetry(self):
        for n, n_pts in ((1, 128), (2, 64)):
            model = RADIAL_1 if n == 1 else RADIAL_2
            params = ModelParams(n=n, mu=0.1, tau=0.1, coupling_c=1.0, planck_h=1e-2)
            grid = GridSpec(n=n, half_width=1.0, points_per_dim=n_pts)
            op = assemble(params, model, grid, theta=0.01)
            asym = op.matrix - op.matrix.T
            assert asym.nnz == 0, f"operator not exactly symmetric at n={n}"

    def test_zero_coupling_is_block_diagonal(self):
        grid = GridSpec(n=1, half_width=1.0, points_per_dim=128)
        op = assemble(params_1d(1e-2, c=0.0), RADIAL_1, grid, theta=0.01)
        off = op.matrix[:128, 128:]
        assert off.nnz == 0

    def test_untranslated_uncoupled_matrix_is_real(self):
        grid = GridSpec(n=1, half_width=1.0, points_per_dim=128)
        op = assemble(params_1d(1e-2, c=0.0), RADIAL_1, grid, theta=0.0)
        assert np.abs(op.matrix.imag).max() == 0.0

    def test_well_block_diagonal_entry(self):
        # Node closest to the origin: the well-block diagonal there must be
        # tau*V2(0, -i*theta) plus the stencil's own diagonal term.
        h, theta = 1e-2, 0.02
        grid = GridSpec(n=1, half_width=1.0, points_per_dim=129)
        op = assemble(params_1d(h, c=0.5), RADIAL_1, grid, theta=theta)
        idx = 64
        assert grid.axis()[idx] == 0.0
        expected = 0.1 * (1.0 - np.exp(-0.5 * (-1j * theta) ** 2))
        expected += h * h * 30.0 / (12.0 * grid.spacing**2)
        entry = op.matrix[129 + idx, 129 + idx]
        assert entry == pytest.approx(expected, rel=1e-14)

    def test_coupling_entries(self):
        h = 2e-3
        grid = GridSpec(n=1, half_width=1.0, points_per_dim=128)
        op = assemble(params_1d(h, c=2.0), RADIAL_1, grid, theta=0.01)
        coupling = op.matrix[:128, 128:].toarray()
        assert np.allclose(coupling, 2.0 * h * np.eye(128), rtol=0, atol=0)

    def test_second_order_stencil_option(self):
        grid = GridSpec(n=1, half_width=1.0, points_per_dim=129, stencil_order=2)
        op = assemble(params_1d(1e-2, c=0.0), RADIAL_1, grid, theta=0.0)
        row = op.matrix[64].toarray().ravel()
        assert np.count_nonzero(row) == 3

    def test_argument_validation(self):
        grid = GridSpec(n=1, half_width=1.0, points_per_dim=128)
        with pytest.raises(ValueError):
            assemble(params_1d(1e-2), RADIAL_1, grid, theta=0.6)
        with pytest.raises(ValueError):
            assemble(params_1d(1e-2), RADIAL_1, grid, theta=-0.1)
        params_2d = ModelParams(n=2, mu=0.1, tau=0.1, coupling_c=1.0, planck_h=1e-2)
        with pytest.raises(ValueError):
            assemble(params_2d, RADIAL_2, grid, theta=0.01)

    def test_memory_guard_reports_bytes(self):
        grid = GridSpec(n=2, half_width=1.0, points_per_dim=6000)
        with pytest.raises(SpectralError, match="bytes"):
            assemble(
                ModelParams(n=2, mu=0.1, tau=0.1, coupling_c=1.0, planck_h=1e-3),
                RADIAL_2,
                grid,
                theta=0.01,
            )


class TestResonance:
    def test_zero_coupling_gives_real_eigenvalue(self):
        h = 1e-3
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=2048)
        op = assemble(params_1d(h, c=0.0), RADIAL_1, grid, theta=default_theta(h))
        res = find_resonance(op, E1_N1 * h)
        floor = 10.0 * max(res.eigvec_residual, 1e-15)
        assert abs(res.rho.imag) <= floor
        assert abs(res.rho.real - E1_N1 * h) <= 0.5 * h * h

    def test_level_error_scales_as_h_squared(self):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=4096)
        consts = []
        for h in (8e-4, 4e-4, 2e-4):
            res = compute_resonance(params_1d(h), RADIAL_1, grid, drift_check=False)
            assert res.rho.imag < 0.0
            consts.append(abs(res.rho.real - E1_N1 * h) / h**2)
        assert max(consts) <= 2.0 * min(consts), consts

    def test_translation_stability(self):
        h = 5e-4
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=4096)
        res = compute_resonance(params_1d(h), RADIAL_1, grid)
        assert np.isfinite(res.theta_drift)
        assert res.theta_drift <= max(1e-10, 0.05 * abs(res.rho.imag))
        assert res.eigvec_residual <= 1e-9

    def test_against_dense_eigensolver(self):
        h = 0.02
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=128)
        op = assemble(params_1d(h), RADIAL_1, grid, theta=default_theta(h))
        res = find_resonance(op, E1_N1 * h)
        dense = scipy.linalg.eig(op.matrix.toarray(), right=False)
        nearest = dense[np.argmin(np.abs(dense - E1_N1 * h))]
        assert abs(res.rho - nearest) <= 1e-9

    def test_grid_refinement_stability(self):
        h = 5e-4
        rhos = []
        for n_pts in (2048, 4096):
            grid = GridSpec(n=1, half_width=2.0, points_per_dim=n_pts)
            rhos.append(compute_resonance(params_1d(h), RADIAL_1, grid, drift_check=False).rho)
        assert abs(rhos[0].real - rhos[1].real) <= 1e-3 * h
        assert abs(rhos[0].imag - rhos[1].imag) <= 0.10 * abs(rhos[1].imag)

    def test_iterative_fallback_agrees(self):
        h = 0.02
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=128)
        op = assemble(params_1d(h), RADIAL_1, grid, theta=default_theta(h))
        direct = find_resonance(op, E1_N1 * h)
        fallback = find_resonance(op, E1_N1 * h, iterative=True)
        assert abs(direct.rho - fallback.rho) <= 1e-10

    def test_tolerance_validation(self):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=128)
        op = assemble(params_1d(0.02), RADIAL_1, grid, theta=0.1)
        with pytest.raises(ValueError):
            find_resonance(op, E1_N1 * 0.02, tol=1e-14)

    def test_second_dimension_level(self):
        # Cheap n = 2 sanity solve on a coarse grid: the resonance sits near
        # the two-mode harmonic level and below the real axis.
        h = 2e-3
        params = ModelParams(n=2, mu=0.1, tau=0.1, coupling_c=1.0, planck_h=h)
        grid = GridSpec(n=2, half_width=0.6, points_per_dim=96)
        res = compute_resonance(params, RADIAL_2, grid, drift_check=False)
        level = harmonic_levels(params, RADIAL_2, 1).level(1)
        assert level == pytest.approx(E1_N2, rel=1e-12)
        assert abs(res.rho.real - level * h) <= 0.1 * level * h
        assert res.rho.imag < 0.0


class TestBoundaryDecay:
    def test_wide_box_underflows(self):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=4096)
        assert boundary_decay(params_1d(4e-4), RADIAL_1, grid) < 1e-14

    def test_narrow_box_is_flagged(self, caplog):
        params = ModelParams(n=2, mu=0.1, tau=0.1, coupling_c=1.0, planck_h=S_REF / 6.0)
        grid = GridSpec(n=2, half_width=0.2, points_per_dim=256)
        value = boundary_decay(params, RADIAL_2, grid)
        assert value > 1e-14


class TestWidthScan:
    def test_rows_and_monotone_width(self, tmp_path):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=4096)
        h_list = [S_REF / k for k in (4.2, 5.0, 5.8)]
        samples = width_scan(params_1d(1e-3), RADIAL_1, grid, h_list,
                             cache_path=str(tmp_path / "scan.csv"))
        assert len(samples) == 3
        assert all(s.accepted for s in samples)
        widths = [abs(s.rho.imag) for s in samples]
        assert widths[0] > widths[1] > widths[2]

    def test_cache_hit_skips_solves(self, tmp_path, monkeypatch):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=2048)
        h_list = [2e-3, 1.5e-3]
        cache = str(tmp_path / "scan.csv")
        first = width_scan(params_1d(1e-3), RADIAL_1, grid, h_list, cache_path=cache)

        def boom(*args, **kwargs):
            raise AssertionError("cache miss: resonance recomputed")

        monkeypatch.setattr("artifact.spectral.compute_resonance", boom)
        second = width_scan(params_1d(1e-3), RADIAL_1, grid, h_list, cache_path=cache)
        assert second == first

    def test_cache_columns(self, tmp_path):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=2048)
        cache = tmp_path / "scan.csv"
        width_scan(params_1d(1e-3), RADIAL_1, grid, [2e-3], cache_path=str(cache))
        header = cache.read_text().splitlines()[0]
        assert header.split(",") == [
            "h", "theta", "N", "L", "Re rho", "Im rho", "residual", "theta_drift", "accepted",
        ]

    def test_failures_are_recorded(self, tmp_path, monkeypatch):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=2048)

        def fail_small(params, *args, **kwargs):
            if params.planck_h < 1.8e-3:
                raise SpectralError("synthetic failure")
            return ResonanceResult(1e-4 - 1e-8j, 1e-13, 0.02, 1e-12, 4)

        monkeypatch.setattr("artifact.spectral.compute_resonance", fail_small)
        samples = width_scan(params_1d(1e-3), RADIAL_1, grid, [2e-3, 1.5e-3])
        assert samples[0].accepted
        assert not samples[1].accepted and np.isnan(samples[1].rho.real)

    def test_h_list_must_descend(self):
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=2048)
        with pytest.raises(ValueError):
            width_scan(params_1d(1e-3), RADIAL_1, grid, [1e-3, 2e-3])

    def test_coupling_scaling_square_law(self):
        # Observational: widths should scale as c^2 across an octave each
        # way.  A violation is worth knowing about but is not a defect.
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=4096)
        h = S_REF / 5.0
        widths = {}
        for c in (0.5, 1.0, 2.0):
            res = compute_resonance(params_1d(h, c=c), RADIAL_1, grid, drift_check=False)
            widths[c] = abs(res.rho.imag)
        low = widths[1.0] / widths[0.5]
        high = widths[2.0] / widths[1.0]
        if not (abs(low - 4.0) <= 0.4 and abs(high - 4.0) <= 0.4):
            pytest.xfail(f"c^2 scaling off: ratios {low:.3f}, {high:.3f}")


def synthetic_samples(h_values, s_true=0.05, q_true=1.5, f_true=0.7, noise=None, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for h in h_values:
        width = f_true * h**q_true * np.exp(-2.0 * s_true / h)
        if noise is not None:
            width *= 1.0 + noise * rng.standard_normal()
        rows.append(
            ScanSample(h=float(h), theta=default_theta(h), points_per_dim=2048,
                       half_width=2.0, rho=complex(0.1 * h, -width), residual=1e-15,
                       theta_drift=0.0, accepted=True)
        )
    return rows


class TestFitWidth:
    def test_noiseless_roundtrip(self):
        fit = fit_width(synthetic_samples(np.linspace(0.01, 0.025, 7)))
        assert abs(fit.S_fit - 0.05) <= 1e-6
        assert abs(fit.prefactor_exponent - 1.5) <= 1e-6
        assert abs(np.exp(fit.log_f00) - 0.7) <= 1e-5
        assert fit.residual_rms <= 1e-8

    def test_five_percent_noise(self):
        rows = synthetic_samples(np.linspace(0.01, 0.025, 12), noise=0.05, seed=20250817)
        fit = fit_width(rows)
        assert abs(fit.S_fit - 0.05) <= 0.02 * 0.05

    def test_constrained_exponent(self):
        rows = synthetic_samples(np.linspace(0.01, 0.025, 4))
        fit = fit_width(rows, fix_exponent=1.5)
        assert fit.prefactor_exponent == 1.5
        assert abs(fit.S_fit - 0.05) <= 1e-8
        assert abs(np.exp(fit.log_f00) - 0.7) <= 1e-7

    def test_floor_exclusion_starves_fit(self):
        rows = synthetic_samples(np.linspace(0.01, 0.025, 7))
        starved = []
        for i, row in enumerate(rows):
            if i < 3:
                starved.append(
                    ScanSample(h=row.h, theta=row.theta, points_per_dim=row.points_per_dim,
                               half_width=row.half_width, rho=complex(row.rho.real, -1e-8),
                               residual=1e-9, theta_drift=0.0, accepted=True)
                )
            else:
                starved.append(row)
        with pytest.raises(SpectralError, match="usable"):
            fit_width(starved)

    def test_rejected_rows_are_ignored(self):
        rows = synthetic_samples(np.linspace(0.01, 0.025, 8))
        rows[0] = ScanSample(h=rows[0].h, theta=rows[0].theta, points_per_dim=2048,
                             half_width=2.0, rho=complex(float("nan"), float("nan")),
                             residual=float("inf"), theta_drift=float("nan"), accepted=False)
        fit = fit_width(rows)
        assert len(fit.samples) == 7

    def test_minimum_counts(self):
        rows = synthetic_samples(np.linspace(0.01, 0.025, 4))
        with pytest.raises(SpectralError):
            fit_width(rows)
        with pytest.raises(SpectralError):
            fit_width(rows[:2], fix_exponent=1.5)

    def test_rank_deficiency(self):
        rows = synthetic_samples([0.01] * 6)
        with pytest.raises(SpectralError, match="rank"):
            fit_width(rows)


class TestAcceptGate:
    def test_gate_conditions(self):
        assert accept_sample(1e-4 - 1e-7j, 1e-13, 1e-12)
        assert not accept_sample(1e-4 - 1e-7j, 1e-8, 1e-12)
        assert not accept_sample(1e-4 - 1e-7j, 1e-13, 1e-7)
        assert not accept_sample(1e-4 - 1e-12j, 1e-13, 1e-13)
        assert accept_sample(1e-4 - 1e-7j, 1e-13, float("nan"))
