import math

import numpy as np
import pytest
from scipy import integrate

from fkc.errors import DomainError, ShapeError, UnsupportedKindError
from fkc.schedules import NoiseSchedule, ddpm_alphas, drift_at, sigma_at, vp_marginal_params


def test_ve_sigma_endpoints_and_midpoint():
    s = NoiseSchedule.ve(0.01, 500.0)
    assert sigma_at(s, 0.0) == pytest.approx(0.01, rel=1e-14)
    assert sigma_at(s, 1.0) == pytest.approx(500.0, rel=1e-14)
    assert sigma_at(s, 0.5) == pytest.approx(math.sqrt(5.0), rel=1e-12)


def test_time_outside_unit_interval():
    s = NoiseSchedule.ve()
    for t in (-0.1, 1.5):
        with pytest.raises(DomainError):
            sigma_at(s, t)


def test_ve_drift_is_zero():
    s = NoiseSchedule.ve(dim=3)
    f, div = drift_at(s, np.ones((4, 3)), 0.3)
    assert np.all(f == 0) and div == 0


def test_vp_drift_linear():
    s = NoiseSchedule.vp(2.0, 2.0, dim=2)
    f, div = drift_at(s, np.array([1.0, 1.0]), 0.7)
    np.testing.assert_allclose(f, [-1.0, -1.0])
    assert div == -2.0


def test_drift_shape_mismatch():
    with pytest.raises(ShapeError):
        drift_at(NoiseSchedule.vp(dim=2), np.ones(3), 0.5)


def test_vp_marginal_params():
    s = NoiseSchedule.vp(1.0, 1.0)
    assert vp_marginal_params(s, 0.0) == (1.0, 0.0)
    a, v = vp_marginal_params(s, 1.0)
    assert a == pytest.approx(math.exp(-0.5), rel=1e-14)
    assert v == pytest.approx(1 - math.exp(-1.0), rel=1e-14)
    with pytest.raises(UnsupportedKindError):
        vp_marginal_params(NoiseSchedule.ve(), 0.5)


@pytest.mark.parametrize("tau", [0.1, 0.5, 0.9, 1.0])
def test_ve_accumulated_variance_matches_quadrature(tau):
    s = NoiseSchedule.ve(0.01, 500.0)
    ref, _ = integrate.quad(lambda u: s.sigma(u) ** 2, 0.0, tau, epsabs=0, epsrel=1e-12, limit=200)
    assert s.accumulated_variance(tau) == pytest.approx(ref, rel=1e-6)


def test_ve_reference_variance_value():
    # sigma_min^2 / (2 ln r) (r^2 - 1) with r = 5e4
    assert NoiseSchedule.ve(0.01, 500.0).reference_variance() == pytest.approx(11552.916951182513, rel=1e-12)


@pytest.mark.parametrize("tau", [0.2, 0.6, 1.0])
def test_vp_variance_preserving(tau):
    s = NoiseSchedule.vp()
    a, v = s.marginal_coefficients(tau)
    assert a * a + v == pytest.approx(1.0, abs=1e-14)


def _ddpm_gap(s, n):
    disc = ddpm_alphas(s, n)
    cont = np.array([vp_marginal_params(s, i / n)[0] for i in range(n + 1)])
    return np.max(np.abs(disc - cont))


def test_ddpm_matches_continuous_marginal_constant_rate():
    assert _ddpm_gap(NoiseSchedule.vp(1.0, 1.0), 1000) <= 1e-3


def test_ddpm_gap_is_first_order():
    # frozen: the standard (0.1, 20) schedule sits at 1.916e-3 for N = 1000
    s = NoiseSchedule.vp(0.1, 20.0)
    gaps = [_ddpm_gap(s, n) for n in (1000, 2000, 4000)]
    assert gaps[0] == pytest.approx(0.0019162139146520762, rel=1e-9)
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.01)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.01)


def test_generation_clock_flips_time():
    s = NoiseSchedule.vp()
    assert s.gen_sigma(0.2) == s.sigma(0.8)
    np.testing.assert_array_equal(s.gen_drift(np.ones(1), 0.25)[0], s.drift(np.ones(1), 0.75)[0])
