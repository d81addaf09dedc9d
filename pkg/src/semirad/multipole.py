"""
Moment integrals of a current distribution, the far-field multipole series
for B and E, Poynting power over a sphere, the polynomial-in-time
certification of the moments, and the Larmor term.

Conventions: the moment of order m is

    I_m(n, t0) = integral J(x', t0) (n . x')^(m-1) d^3x'

with no 1/c inside; the factor (1/c)^(m-1) / (m-1)! is applied when the
series for B is assembled,

    B = -n x (1 / c^2 R0) sum_m d^m I_m / dt0^m (1/c)^(m-1) / (m-1)!,
    E = -n x B,   S = (c / 4 pi) E x B.

Time derivatives always come from the sampled series (finite differences
with Richardson extrapolation), never from operator algebra, so a passing
certificate is a measurement rather than an assumption.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import factorial
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalRejection
from .gridlab import (
    FieldGrid,
    PolynomialFit,
    SphereQuadrature,
    TimeSampling,
    UniformGrid3,
    fit_polynomial_degree,
    integrate_grid,
    nth_time_derivative,
    spectrum,
)

DEFAULT_ORDER = 4
CANCELLATION_FLOOR = 1e-6


def unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class ObservationGeometry:
    n: tuple
    R0: float
    c: float = 1.0

    def __post_init__(self):
        n = np.asarray(self.n, float)
        if abs(np.linalg.norm(n) - 1) > 1e-12:
            raise ValueError(f"observation direction must be a unit vector, |n| = {np.linalg.norm(n)}")
        if self.R0 <= 0:
            raise ValueError("R0 must be positive")
        object.__setattr__(self, "n", tuple(n))

    def check_far(self, extent: float, factor: float = 50.0) -> None:
        if self.R0 < factor * extent:
            raise NumericalRejection(
                f"R0={self.R0:g} is not >= {factor:g} x source extent {extent:g}")


def check_boundary_decay(J: FieldGrid, rel: float = 1e-8) -> None:
    mag = np.linalg.norm(J.values, axis=-1) if J.values.ndim == 4 else np.abs(J.values)
    peak = mag.max()
    if peak == 0:
        return
    faces = max(mag[0].max(), mag[-1].max(), mag[:, 0].max(), mag[:, -1].max(),
                mag[:, :, 0].max(), mag[:, :, -1].max())
    if faces > rel * peak:
        raise NumericalRejection(
            f"current at the grid boundary is {faces / peak:.2e} of its peak (limit {rel:g})")


def compute_moment(J: FieldGrid, n, m: int, check_decay: bool = True) -> np.ndarray:
    """I_m for a single direction by direct quadrature."""
    if m < 1:
        raise ValueError("moment order starts at 1")
    if check_decay:
        check_boundary_decay(J)
    n = np.asarray(n, float)
    return integrate_grid(J, lambda X, Y, Z: (n[0] * X + n[1] * Y + n[2] * Z) ** (m - 1))


def moment_tensors(J: FieldGrid, M: int) -> np.ndarray:
    """Cartesian moments ``T[a, b, c, i] = integral J_i x^a y^b z^c`` for
    exponents below M, by separable contraction one axis at a time."""
    J.check_finite()
    x, y, z = J.grid.axes()
    pw = lambda u: u[None, :] ** np.arange(M)[:, None]
    v = J.values
    s1 = np.sum(pw(x)[:, :, None, None, None] * v[None], axis=1)            # a, y, z, i
    s2 = np.sum(pw(y)[None, :, :, None, None] * s1[:, None], axis=2)       # a, b, z, i
    s3 = np.sum(pw(z)[None, None, :, :, None] * s2[:, :, None], axis=3)    # a, b, c, i
    return s3 * J.grid.cell_volume


def direction_coefficients(directions, M: int) -> np.ndarray:
    """``C[d, m-1, a, b, c]`` such that ``I_m(n_d) = sum C * T[a, b, c]``."""
    d = np.atleast_2d(np.asarray(directions, float))
    C = np.zeros((len(d), M, M, M, M))
    for a, b, c in product(range(M), repeat=3):
        k = a + b + c
        if k >= M:
            continue
        mult = factorial(k) / (factorial(a) * factorial(b) * factorial(c))
        C[:, k, a, b, c] = mult * d[:, 0] ** a * d[:, 1] ** b * d[:, 2] ** c
    return C


@dataclass
class MomentSeries:
    """Time-sampled moments.  ``tensors[t, a, b, c, i]`` holds the Cartesian
    moments, from which I_m for any direction follows exactly."""

    M: int
    times: TimeSampling
    tensors: np.ndarray
    abs_moments: np.ndarray        # [t, m-1] integral |J| |x|^(m-1), a cancellation-free scale
    q: float = 1.0
    c: float = 1.0
    metadata: dict = field(default_factory=dict)
    charge: Optional[np.ndarray] = None          # [t] integral of rho
    luminal_excess: Optional[np.ndarray] = None  # [t] max(|J| - c|rho|) / max(c|rho|)

    def values(self, directions) -> np.ndarray:
        """I_m(t) with shape ``(T, D, M, 3)``."""
        C = direction_coefficients(directions, self.M)
        return np.einsum("dmabc,tabci->tdmi", C, self.tensors)

    def moment(self, n, m: int) -> np.ndarray:
        return self.values([n])[:, 0, m - 1]

    def scale(self, directions) -> np.ndarray:
        """Per (direction, m): window peak |I_m| floored at a small fraction of
        the absolute moment, so exact cancellations are judged against the
        size of the terms that cancel."""
        vals = self.values(directions)
        peak = np.max(np.linalg.norm(vals, axis=-1), axis=0)              # D, M
        floor = CANCELLATION_FLOOR * np.max(self.abs_moments, axis=0)      # M
        return np.maximum(peak, floor[None, :])


def moment_series(source, grid: UniformGrid3, sampling: TimeSampling, M: int = DEFAULT_ORDER,
                  check_decay: bool = True, executor=None, **meta) -> MomentSeries:
    """Sample the current of ``source`` on ``grid`` at every time and reduce
    it to Cartesian moment tensors.  Total charge and the largest excess
    of |J| over c|rho| are recorded per sample alongside."""
    r = np.linalg.norm(grid.points(), axis=-1)
    c = float(getattr(source, "c", 1.0))

    def one(t):
        rho, J = source.currents(float(t), grid)
        if check_decay:
            check_boundary_decay(J)
        mag = np.linalg.norm(J.values, axis=-1)
        absm = [np.sum(mag * r**k) * grid.cell_volume for k in range(M)]
        crho = c * np.abs(rho.values)
        excess = float(np.max(mag - crho) / max(np.max(crho), 1e-300))
        return moment_tensors(J, M), absm, float(np.sum(rho.values) * grid.cell_volume), excess

    times = sampling.times
    results = list(executor.map(one, times)) if executor is not None else [one(t) for t in times]
    series = MomentSeries(M, sampling, np.stack([x[0] for x in results]), np.array([x[1] for x in results]),
                          float(getattr(source, "q", 1.0)), c, dict(meta))
    series.charge = np.array([x[2] for x in results])
    series.luminal_excess = np.array([x[3] for x in results])
    return series


@dataclass
class MomentCertificate:
    m: int
    direction: tuple
    fit: PolynomialFit
    derivative_ratio: float       # max |d^m I_m| dt^m / scale
    derivative_error: float       # Richardson step-halving estimate, same units
    scale: float
    tol: float
    quadrature_flag: bool = False

    @property
    def degree(self) -> Optional[int]:
        return self.fit.degree

    @property
    def fit_residual(self) -> float:
        """Relative RMS residual of the degree m-1 fit."""
        return self.fit.residuals[self.m - 1]

    @property
    def passed(self) -> bool:
        return (self.fit.degree is not None and self.fit.degree <= self.m - 1
                and self.derivative_ratio <= self.tol)

    def to_dict(self) -> dict:
        return {"m": self.m, "direction": list(self.direction), "degree": self.degree,
                "fit_residual": self.fit_residual, "derivative_ratio": self.derivative_ratio,
                "derivative_error": self.derivative_error, "scale": self.scale,
                "passed": self.passed, "quadrature_flag": self.quadrature_flag}


def certify_series(series: MomentSeries, directions, M: Optional[int] = None,
                   tol: float = 1e-6) -> list:
    """Certify, for every direction and m = 1..M, that I_m is a polynomial of
    degree <= m-1 in time and that its m-th derivative is numerically zero.

    Both tests are relative to :meth:`MomentSeries.scale`; the derivative
    test uses the artifact-wide unit ``scale / dt^m``.
    """
    M = M or series.M
    dirs = unit(np.atleast_2d(directions))
    vals = series.values(dirs)
    scales = series.scale(dirs)
    t = series.times.times
    dt = series.times.dt
    certs = []
    for d, n in enumerate(dirs):
        for m in range(1, M + 1):
            y = vals[:, d, m - 1]
            s = float(scales[d, m - 1])
            max_deg = min(m + 2, len(t) - 5)
            fit = fit_polynomial_degree(y, t, max_deg, tol, scale=s)
            der = nth_time_derivative(y, dt, m)
            ratio = float(np.max(np.linalg.norm(der.values, axis=-1))) * dt**m / s if s > 0 else 0.0
            err = float(np.max(np.linalg.norm(der.error, axis=-1))) * dt**m / s if s > 0 else 0.0
            certs.append(MomentCertificate(m, tuple(n), fit, ratio, err, s, tol))
    return certs


@dataclass
class Certification:
    series: MomentSeries
    certificates: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.certificates)

    def failing(self) -> list:
        return [c for c in self.certificates if not c.passed]


def certify_nonradiation(source, grid: UniformGrid3, sampling: TimeSampling, directions,
                         M: int = DEFAULT_ORDER, tol: float = 1e-6, probe_refinement: bool = True,
                         executor=None) -> Certification:
    """Sample the moments of ``source`` and certify them with
    :func:`certify_series`.  Failing certificates are re-measured once on the
    refined grid; a failure whose residual moves by more than 2x is flagged
    as quadrature-dominated rather than physical."""
    series = moment_series(source, grid, sampling, M, executor=executor)
    certs = certify_series(series, directions, M, tol)
    if probe_refinement and any(not c.passed for c in certs):
        try:
            fine = moment_series(source, grid.refined(), sampling, M, executor=executor)
        except NumericalRejection:
            return Certification(series, certs)
        for c, f in zip(certs, certify_series(fine, directions, M, tol)):
            if not c.passed:
                a, b = max(c.derivative_ratio, 1e-300), max(f.derivative_ratio, 1e-300)
                c.quadrature_flag = max(a / b, b / a) > 2
    return Certification(series, certs)


# -- far field -------------------------------------------------------------------------

def _derivative_tensors(series: MomentSeries, M: int):
    """d^m/dt^m of the order-m tensor slices on a common interior index set."""
    dt = series.times.dt
    ders = [nth_time_derivative(series.tensors, dt, m) for m in range(1, M + 1)]
    lo = max(int(d.index[0]) for d in ders)
    hi = min(int(d.index[-1]) for d in ders)
    idx = np.arange(lo, hi + 1)
    out = []
    for m, d in enumerate(ders, start=1):
        sl = slice(lo - int(d.index[0]), hi - int(d.index[0]) + 1)
        out.append((d.values[sl], d.error[sl]))
    return idx, out


@dataclass
class FarField:
    t0: np.ndarray             # retarded times t - R0/c
    B: np.ndarray              # (T, D, 3)
    terms: np.ndarray          # (T, D, M) magnitude of each series term in B
    term_errors: np.ndarray    # (T, D, M) step-halving error of each term
    directions: np.ndarray
    R0: float
    c: float

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.R0 / self.c

    @property
    def E(self) -> np.ndarray:
        return farfield_E(self.B, self.directions[None, :, :])


def farfield_series(series: MomentSeries, directions, R0: float, M: Optional[int] = None) -> FarField:
    """Leading-order B at distance R0 along each direction, on the interior
    retarded times where every derivative is available."""
    M = M or series.M
    c = series.c
    dirs = unit(np.atleast_2d(directions))
    C = direction_coefficients(dirs, series.M)
    idx, ders = _derivative_tensors(series, M)
    total = np.zeros((len(idx), len(dirs), 3))
    terms = np.zeros((len(idx), len(dirs), M))
    errs = np.zeros_like(terms)
    for m, (val, err) in enumerate(ders, start=1):
        coef = 1.0 / (c ** (m - 1) * factorial(m - 1) * c**2 * R0)
        dI = np.einsum("dabc,tabci->tdi", C[:, m - 1], val) * coef
        eI = np.einsum("dabc,tabci->tdi", np.abs(C[:, m - 1]), err) * coef
        total += dI
        terms[..., m - 1] = np.linalg.norm(np.cross(dirs[None], dI), axis=-1)
        errs[..., m - 1] = np.linalg.norm(eI, axis=-1)
    B = -np.cross(dirs[None], total)
    return FarField(series.times.times[idx], B, terms, errs, dirs, float(R0), c)


def farfield_B(series: MomentSeries, geometry: ObservationGeometry, M: Optional[int] = None):
    """B(t) along one observation direction; returns (t, B[T, 3], FarField)."""
    ff = farfield_series(series, [geometry.n], geometry.R0, M)
    return ff.t, ff.B[:, 0], ff


def farfield_E(B, n) -> np.ndarray:
    """E = -n x B (radiation zone)."""
    return -np.cross(np.asarray(n, float), np.asarray(B, float))


def radiated_power(E, B, quad: SphereQuadrature, c: float = 1.0):
    """Sphere integral of (c / 4 pi) (E x B) . n.  Fields have the sphere
    node on axis -2 (any leading axes, e.g. time, are kept)."""
    S = (c / (4 * np.pi)) * np.einsum("...di,di->...d", np.cross(E, B), quad.directions)
    return np.einsum("...d,d->...", S, quad.weights)


def larmor_power(a, q: float = 1.0, c: float = 1.0) -> float:
    a = np.asarray(a, float)
    return 2.0 / 3.0 * q**2 * float(a @ a) / c**3


@dataclass
class RadiationReport:
    t: np.ndarray
    t0: np.ndarray
    B: np.ndarray               # (T, D, 3) on the sphere nodes
    E: np.ndarray
    power: np.ndarray           # (T,)
    term_power: np.ndarray      # (T, M) power carried by each term alone
    certificates: list
    M: int
    R0: float
    power_threshold: float
    transversality: float       # max |E.n|, |B.n| relative to max |B|
    power_spectrum: Optional[object] = None

    @property
    def numerically_zero(self) -> bool:
        return bool(np.max(np.abs(self.power)) <= self.power_threshold)


def power_threshold(series: MomentSeries, tol: float, M: int) -> float:
    """Power carried by a B field whose every term sits at the numerically-zero
    derivative threshold ``tol * scale / dt^m``, for any R0."""
    c, dt = series.c, series.times.dt
    floor = CANCELLATION_FLOOR * np.max(series.abs_moments, axis=0)
    b = sum(tol * floor[m - 1] / dt**m / (c ** (m - 1) * factorial(m - 1)) for m in range(1, M + 1))
    scale_peak = np.max(np.abs(series.tensors))
    b = max(b, sum(tol * scale_peak / dt**m / (c ** (m - 1) * factorial(m - 1)) for m in range(1, M + 1)))
    return (c / (4 * np.pi)) * 4 * np.pi * (b / c**2) ** 2


def radiation_report(series: MomentSeries, quad: SphereQuadrature, M: Optional[int] = None,
                     tol: float = 1e-6, certify_directions=None) -> RadiationReport:
    M = M or series.M
    ff = farfield_series(series, quad.directions, quad.radius, M)
    E = ff.E
    P = radiated_power(E, ff.B, quad, series.c)
    # per-term power: recompute each term alone through the same pipeline
    term_power = np.zeros((len(ff.t0), M))
    idx, ders = _derivative_tensors(series, M)
    C = direction_coefficients(ff.directions, series.M)
    for m, (val, _) in enumerate(ders, start=1):
        coef = 1.0 / (series.c ** (m - 1) * factorial(m - 1) * series.c**2 * quad.radius)
        Bm = -np.cross(ff.directions[None], np.einsum("dabc,tabci->tdi", C[:, m - 1], val) * coef)
        term_power[:, m - 1] = radiated_power(farfield_E(Bm, ff.directions[None]), Bm, quad, series.c)
    bmax = max(np.max(np.linalg.norm(ff.B, axis=-1)), 1e-300)
    trans = max(np.max(np.abs(np.einsum("tdi,di->td", ff.B, ff.directions))),
                np.max(np.abs(np.einsum("tdi,di->td", E, ff.directions)))) / bmax
    certs = certify_series(series, certify_directions, M, tol) \
        if certify_directions is not None else []
    pspec = spectrum(P, series.times.dt) if len(P) >= 32 else None
    return RadiationReport(ff.t, ff.t0, ff.B, E, P, term_power, certs, M, quad.radius,
                           power_threshold(series, tol, M), float(trans), pspec)
