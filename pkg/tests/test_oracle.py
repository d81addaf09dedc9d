import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semirad.errors import NumericalRejection
from semirad.gridlab import TimeSampling, UniformGrid3
from semirad.oracle import (
    CurrentHistory,
    dipole_field_B,
    dipole_history,
    exact_farfield_B,
    exact_fields,
    flux_scan,
    retarded_potential,
)

GRID = UniformGrid3.centered(3.0, 0.25)


def static_history(sigma=0.5, J=None, n=61):
    X, Y, Z = GRID.mesh()
    g = np.exp(-(X**2 + Y**2 + Z**2) / (2 * sigma**2)) / (2 * np.pi * sigma**2) ** 1.5
    ts = TimeSampling(-50.0, 1.0, n)
    rho = np.broadcast_to(g, (n,) + g.shape)
    Jf = np.zeros(rho.shape + (3,))
    if J is not None:
        Jf[:] = g[..., None] * np.asarray(J)
    return CurrentHistory.from_arrays(GRID, ts, rho, Jf)


def test_coulomb_limit():
    h = static_history()
    x = np.array([30.0, 10.0, -20.0])
    phi, A = retarded_potential(h, x, 0.0)
    assert np.all(A == 0)
    assert phi == pytest.approx(1 / np.linalg.norm(x), rel=1e-6)
    E, B = exact_fields(h, x, 0.0)
    np.testing.assert_allclose(E, x / np.linalg.norm(x) ** 3, rtol=1e-6)
    assert np.all(B == 0)


def test_zero_history_gives_zero_everything():
    ts = TimeSampling(0.0, 1.0, 8)
    h = CurrentHistory.from_arrays(GRID, ts, np.zeros((8,) + GRID.counts), np.zeros((8,) + GRID.counts + (3,)))
    assert retarded_potential(h, (50, 0, 0), 4.0) == (0.0, pytest.approx(np.zeros(3)))
    scan = flux_scan(h, [100.0, 200.0], 3.0, 4, 8)
    assert np.all(scan.power == 0) and np.all(scan.b_rms == 0)


def test_static_current_gives_static_potential():
    h = static_history(J=(0.0, 0.3, 0.0))
    x = np.array([0.0, 0.0, 4.0])
    A = [retarded_potential(h, x, t)[1] for t in (-0.5, 0.3, 1.7)]
    np.testing.assert_allclose(A[0], A[1], rtol=1e-13)
    np.testing.assert_allclose(A[0], A[2], rtol=1e-13)


def test_window_underflow_reports_required_window():
    h = static_history()
    with pytest.raises(NumericalRejection, match="need samples covering"):
        retarded_potential(h, (50.0, 0, 0), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(0.0, 0.999))
def test_cubic_interpolation_exact_for_cubics(coef, frac):
    ts = TimeSampling(0.0, 0.5, 10)
    t = ts.times
    f = np.polynomial.polynomial.polyval(t, coef)
    fd = np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(coef))
    g = UniformGrid3((0, 0, 0), (1, 1, 1), (2, 2, 2))
    rho = np.broadcast_to(f[:, None, None, None], (10, 2, 2, 2))
    h = CurrentHistory.from_arrays(g, ts, rho, np.zeros((10, 2, 2, 2, 3)) + 1.0, threshold=0)
    tq = 2.0 + frac * 0.5
    r, rt, _, _ = h.at_retarded(np.full(len(h.active), tq))
    exact = np.polynomial.polynomial.polyval(tq, coef)
    dexact = np.polynomial.polynomial.polyval(tq, np.polynomial.polynomial.polyder(coef))
    scale = np.abs(f).max() + np.abs(fd).max() + 1
    assert np.allclose(r, exact, atol=1e-12 * scale)
    assert np.allclose(rt, dexact, atol=1e-11 * scale)


def test_save_load_roundtrip(tmp_path):
    h = dipole_history(UniformGrid3.centered(1.2, 0.2), TimeSampling(0.0, 0.1, 9))
    p = tmp_path / "hist.bin"
    h.save(p)
    back = CurrentHistory.load(p)
    assert back.grid == h.grid and back.times == h.times and back.interpolation == h.interpolation
    np.testing.assert_array_equal(back.active, h.active)
    np.testing.assert_array_equal(back.rho, h.rho)
    np.testing.assert_array_equal(back.J, h.J)
    raw = p.read_bytes()
    assert raw[:8] == b"SEMIRADH"


def test_load_rejects_truncated_file(tmp_path):
    h = dipole_history(UniformGrid3.centered(1.2, 0.2), TimeSampling(0.0, 0.1, 9))
    p = tmp_path / "hist.bin"
    h.save(p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        CurrentHistory.load(p)


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOTAHIST" + bytes(16))
    with pytest.raises(ValueError):
        CurrentHistory.load(p)


@pytest.fixture(scope="module")
def dipole():
    w = 0.5
    t0 = np.pi / (2 * w)
    return w, t0, dipole_history(UniformGrid3.centered(2.4, 0.15), TimeSampling.centered(t0, 0.1, 61), omega=w)


def test_dipole_matches_point_dipole_field(dipole):
    w, t0, h = dipole
    lam = 2 * np.pi / w
    for R in (20 * lam, 30 * lam):
        for th in (0.4, 1.2, 2.0):
            x = R * np.array([np.sin(th) * np.cos(0.7), np.sin(th) * np.sin(0.7), np.cos(th)])
            Bx = exact_farfield_B(h, x, t0 + R)
            Ba = dipole_field_B(x, t0 + R, omega=w)
            assert np.linalg.norm(Bx - Ba) <= 0.05 * np.linalg.norm(Ba)


def test_dipole_radiates_with_unit_exponent(dipole):
    w, t0, h = dipole
    scan = flux_scan(h, [50.0, 100.0, 200.0, 400.0], t0, 4, 8)
    assert scan.b_exponent == pytest.approx(1.0, abs=0.05)
    assert scan.decay_ratio(0) == pytest.approx(1.0, abs=0.05)
    assert np.all(scan.power > 0)


def test_causality(dipole):
    w, t0, h = dipole
    x = np.array([0.0, 30.0, 40.0])
    t_obs = t0 + 50.0
    lo, hi = h.required_window(x, t_obs)
    B0 = exact_farfield_B(h, x, t_obs)
    # the cubic stencil reaches two samples past the latest retarded time
    late = h.times.times > hi + 2 * h.times.dt
    assert late.any()
    pert = CurrentHistory(h.grid, h.times, h.active, h.rho.copy(), h.J.copy())
    pert.J[late] += 1.0
    pert.rho[late] -= 3.0
    np.testing.assert_array_equal(exact_farfield_B(pert, x, t_obs), B0)
    inside = (h.times.times >= lo) & (h.times.times <= hi)
    pert.J[inside] += 1e-3
    assert not np.array_equal(exact_farfield_B(pert, x, t_obs), B0)
