import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semirad.ensemble import (
    EnsembleMember,
    NewtonianEnsemble,
    NewtonianSource,
    closed_form_moment,
    ensemble_fields,
    ensemble_moment_theorem_check,
    gaussian_raw_moment,
)
from semirad.errors import NumericalRejection
from semirad.gridlab import TimeSampling, UniformGrid3, continuity_residual, integrate_grid
from semirad.multipole import compute_moment, moment_series, radiation_report
from semirad.gridlab import SphereQuadrature

GRID = UniformGrid3.centered(14.0, 0.5)


def counter_propagating():
    return NewtonianEnsemble(((0.5, (-2, 0, 0), (0.1, 0, 0), 1.0), (0.5, (2, 1, 0), (-0.1, 0, 0), 1.2)))


def test_validation():
    with pytest.raises(ValueError):
        NewtonianEnsemble(((0.5, (0, 0, 0), (0, 0, 0), 1.0),))
    with pytest.raises(ValueError):
        NewtonianEnsemble(((1.0, (0, 0, 0), (1.0, 0, 0), 1.0),))
    with pytest.raises(ValueError):
        EnsembleMember(1.0, (0, 0, 0), (0, 0, 0), -1.0)


def test_static_member_has_no_current():
    ens = NewtonianEnsemble(((1.0, (1, 2, 3), (0, 0, 0), 1.0),), q=2.0)
    rho, J = ensemble_fields(ens, 5.0, GRID)
    assert np.all(J.values == 0)
    assert integrate_grid(rho) == pytest.approx(2.0, rel=1e-10)


@pytest.mark.parametrize("t", [-10.0, 0.0, 7.0])
def test_total_current_is_qv(t):
    v = np.array([0.2, -0.1, 0.3])
    ens = NewtonianEnsemble(((1.0, (0, 0, 0), v, 1.0),), q=-1.5)
    _, J = ensemble_fields(ens, t, GRID)
    np.testing.assert_allclose(integrate_grid(J), -1.5 * v, rtol=1e-10)


def test_counter_propagating_pair():
    ens = counter_propagating()
    ts = TimeSampling.centered(0.0, 1.0, 12)
    ser = moment_series(NewtonianSource(ens), GRID, ts, 2)
    I1 = ser.moment((1, 0, 0), 1)
    assert np.max(np.abs(I1)) < 1e-14
    I2 = ser.moment((1, 0, 0), 2)[:, 0]
    slope = np.polyfit(ts.times, I2, 1)[0]
    # d/dt sum w v (x0 + v t).n = sum w v^2
    assert slope == pytest.approx(0.01, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.0, 2.0), st.integers(0, 6))
def test_gaussian_raw_moment_matches_quadrature(mu, s, k):
    if s == 0:
        assert gaussian_raw_moment(mu, s, k) == pytest.approx(mu**k)
        return
    x, w = np.polynomial.hermite_e.hermegauss(20)
    quad = np.sum(w * (mu + s * x) ** k) / np.sqrt(2 * np.pi)
    assert gaussian_raw_moment(mu, s, k) == pytest.approx(quad, rel=1e-12, abs=1e-12)


def test_single_member_third_moment_closed_form():
    x0, v, s = np.array([1.0, 0.5, 0.0]), np.array([0.1, 0.2, 0.0]), 0.8
    ens = NewtonianEnsemble(((1.0, x0, v, s),))
    n = np.array([1.0, 0.0, 0.0])
    t = np.array([0.0, 2.0])
    expect = (np.array([(n @ (x0 + v * tt)) ** 2 + s**2 for tt in t]))[:, None] * v
    np.testing.assert_allclose(closed_form_moment(ens, n, 3, t), expect, rtol=1e-14)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_quadrature_matches_closed_form(m):
    ens = counter_propagating()
    n = np.array([0.6, 0.0, 0.8])
    _, J = ensemble_fields(ens, 3.0, GRID)
    quad = compute_moment(J, n, m)
    exact = closed_form_moment(ens, n, m, 3.0)[0]
    # members cancel in I_1, so judge against the sum of member magnitudes
    scale = sum(np.abs(closed_form_moment(NewtonianEnsemble((EnsembleMember(1.0, mem.x0, mem.v, mem.sigma_x),)), n, m, 3.0)).max()
                * mem.weight for mem in ens.members)
    assert np.max(np.abs(quad - exact)) <= 1e-8 * scale


def test_theorem_check_passes():
    ens = NewtonianEnsemble(((0.3, (-1, 0, 1), (0.05, 0.1, 0), 1.0), (0.7, (1, -1, 0), (-0.1, 0, 0.05), 1.3)))
    chk = ensemble_moment_theorem_check(ens, [(1, 0, 0), (0, 0.6, 0.8)], 4, TimeSampling.centered(0, 1.0, 12), GRID)
    assert chk.certification.passed
    assert chk.closed_form_error <= 1e-8
    assert chk.passed


def test_zero_velocity_moments_are_static():
    ens = NewtonianEnsemble(((1.0, (1, 0, 0), (0, 0, 0), 1.0),))
    ser = moment_series(NewtonianSource(ens), GRID, TimeSampling(0, 1.0, 8), 3)
    assert np.all(ser.tensors == 0)


def test_continuity_and_no_radiation():
    ens = counter_propagating()
    src = NewtonianSource(ens)
    assert continuity_residual(src.arrays, 1.5, GRID).relative <= 1e-6
    ser = moment_series(src, GRID, TimeSampling.centered(0, 1.0, 14), 4)
    assert radiation_report(ser, SphereQuadrature.build(2000.0), 4).numerically_zero


def test_point_members_and_escape_rejected():
    with pytest.raises(NumericalRejection, match="closed_form"):
        ensemble_fields(NewtonianEnsemble(((1.0, (0, 0, 0), (0, 0, 0), 0.0),)), 0.0, GRID)
    with pytest.raises(NumericalRejection, match="suggested half-extent"):
        ensemble_fields(NewtonianEnsemble(((1.0, (0, 0, 0), (0.5, 0, 0), 1.0),)), 40.0, GRID)
