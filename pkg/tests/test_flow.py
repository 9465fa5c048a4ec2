"""Flow layer: ray integration, closed-form slope flow, conservation properties."""

import numpy as np
import pytest

from artifact.flow import (
    PhasePoint,
    energy_drift,
    integrate,
    integrate_path,
    slope_flow_closed_form,
)
from artifact.model import SLOPE, WELL, symbol_value

TOL = 1e-12


def random_point(rng, scale_x=0.5, scale_xi=0.5, imag=True):
    x = rng.uniform(-scale_x, scale_x, 2)
    xi = rng.uniform(-scale_xi, scale_xi, 2)
    if imag:
        x = x + 1j * rng.uniform(-0.2, 0.2, 2)
        xi = xi + 1j * rng.uniform(-0.3, 0.3, 2)
    return PhasePoint(x, xi)


class TestIntegrate:
    def test_zero_time_is_identity(self, params2d, radial2d):
        z0 = PhasePoint([0.1, -0.2], [0.05, 0.3])
        st = integrate(WELL, params2d, radial2d, z0, 0.0, TOL)
        assert st.point.close_to(z0, 0.0)
        assert st.action == 0.0

    def test_slope_matches_closed_form_imaginary_ray(self, params2d, radial2d):
        z0 = PhasePoint([0.0, 0.0], [0.0, 0.5j])
        t = 1.0j
        st = integrate(SLOPE, params2d, radial2d, z0, t, TOL)
        ref = slope_flow_closed_form(z0, t)
        assert st.point.close_to(ref.point, 1e-10)
        assert abs(st.action - ref.action) <= 1e-10

    def test_well_fixed_point_stays_put(self, params2d, radial2d):
        z0 = PhasePoint([0.0, 0.0], [0.0, 0.0])
        for t in (0.4, 0.9j, 0.3 - 0.2j):
            st = integrate(WELL, params2d, radial2d, z0, t, TOL)
            assert st.point.close_to(z0, 1e-13)
            assert abs(st.action) <= 1e-13

    def test_energy_conservation_both_channels(self, params2d, radial2d, rng):
        for which in (SLOPE, WELL):
            for _ in range(8):
                z0 = random_point(rng)
                t = complex(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8))
                seg = integrate_path(which, params2d, radial2d, z0, t, TOL)
                assert energy_drift(seg, which, params2d, radial2d) <= 10 * TOL

    def test_reversibility(self, params2d, radial2d, rng):
        for which in (SLOPE, WELL):
            for _ in range(6):
                z0 = random_point(rng)
                t = complex(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6))
                fwd = integrate(which, params2d, radial2d, z0, t, TOL)
                back = integrate(which, params2d, radial2d, fwd.point, -t, TOL)
                assert back.point.close_to(z0, 100 * TOL)

    def test_action_additivity(self, params2d, radial2d, rng):
        for _ in range(6):
            z0 = random_point(rng)
            t = complex(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7))
            frac = rng.uniform(0.2, 0.8)
            whole = integrate(WELL, params2d, radial2d, z0, t, TOL)
            first = integrate(WELL, params2d, radial2d, z0, frac * t, TOL)
            second = integrate(WELL, params2d, radial2d, first.point, (1 - frac) * t, TOL)
            assert abs((first.action + second.action) - whole.action) <= 10 * TOL

    def test_samples_monotone_and_endpoint(self, params2d, radial2d):
        z0 = PhasePoint([0.2, 0.1], [0.0, 0.3])
        t = 0.5 - 0.3j
        seg = integrate_path(WELL, params2d, radial2d, z0, t, TOL)
        fracs = [st.time / t if st.time != 0 else 0.0 for st in seg.samples]
        rs = np.real(fracs)
        assert np.all(np.diff(rs) > 0)
        assert seg.end.time == pytest.approx(t, abs=1e-14)

    def test_invalid_tol_rejected(self, params2d, radial2d):
        with pytest.raises(ValueError):
            integrate(WELL, params2d, radial2d, PhasePoint([0.0, 0.0], [0.0, 0.0]), 1.0, -1.0)


class TestClosedForm:
    def test_identity_at_zero_time(self):
        z0 = PhasePoint([0.3, -0.1], [0.2, 0.4])
        st = slope_flow_closed_form(z0, 0.0)
        assert st.point.close_to(z0, 0.0)
        assert st.action == 0.0

    def test_vertical_connecting_ray(self, params2d, radial2d):
        # start on the outgoing graph over x_n with momentum i*eta*e_n; after
        # time 2*i*eta the position returns and the momentum flips sign
        eta = 0.225
        x_n = 0.7
        z0 = PhasePoint([0.0, x_n], [0.0, 1j * eta])
        st = slope_flow_closed_form(z0, 2j * eta)
        assert np.allclose(st.point.x, [0.0, x_n], atol=1e-15)
        assert np.allclose(st.point.xi, [0.0, -1j * eta], atol=1e-15)
        assert st.action == pytest.approx(-4j / 3 * eta**3, abs=1e-15)
        # cross-check against the numerical integrator at tight tolerance
        num = integrate(SLOPE, params2d, radial2d, z0, 2j * eta, TOL)
        assert num.point.close_to(st.point, 1e-10)
        assert abs(num.action - st.action) <= 1e-10

    def test_energy_exactly_conserved(self, params2d, radial2d, rng):
        for _ in range(10):
            z0 = random_point(rng)
            t = complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
            st = slope_flow_closed_form(z0, t)
            p0 = symbol_value(SLOPE, params2d, radial2d, z0.x, z0.xi)
            p1 = symbol_value(SLOPE, params2d, radial2d, st.point.x, st.point.xi)
            assert abs(p1 - p0) <= 1e-13 * max(1.0, abs(p0))

    def test_closed_form_vs_integrator_random(self, params2d, radial2d, rng):
        for _ in range(6):
            z0 = random_point(rng)
            t = complex(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8))
            num = integrate(SLOPE, params2d, radial2d, z0, t, TOL)
            ref = slope_flow_closed_form(z0, t)
            assert num.point.close_to(ref.point, 1e-10)
            assert abs(num.action - ref.action) <= 1e-10


def test_segment_csv_roundtrip(tmp_path, params2d, radial2d):
    z0 = PhasePoint([0.1, 0.2], [0.0, 0.1j])
    seg = integrate_path(WELL, params2d, radial2d, z0, 0.4j, TOL)
    out = tmp_path / "segment.csv"
    seg.write_csv(out)
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("re_t,im_t,re_x0")
    assert len(rows) == len(seg.samples) + 1
