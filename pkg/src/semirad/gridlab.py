"""
Shared numerical infrastructure: uniform 3D grids, midpoint quadrature,
discrete Fourier synthesis, finite-difference time derivatives with
Richardson extrapolation, polynomial degree certification, sphere
quadrature and windowed spectra.

Grid nodes are treated as cell centres, so every volume integral is the
midpoint rule ``sum(values * weight) * cell_volume``.  Reductions go
through ``numpy.sum`` on arrays of fixed layout, which is a fixed pairwise
tree and therefore bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft
from scipy.signal import get_window
from scipy.special import roots_legendre

from .errors import NumericalRejection

DEFAULT_NODE_BUDGET = 2**21

PAYLOAD_SHAPES = {"complex": (), "real": (), "vector": (3,), "cvector": (3,), "spinor": (4,)}

# worker count for scipy.fft; set by the CLI, never changes results
FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    global FFT_WORKERS
    FFT_WORKERS = max(1, int(n))


@dataclass(frozen=True)
class UniformGrid3:
    """Uniform Cartesian grid; node ``i`` along axis ``a`` sits at
    ``origin[a] + i * spacing[a]``."""

    origin: tuple
    spacing: tuple
    counts: tuple
    budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        counts = tuple(int(v) for v in self.counts)
        if len(origin) != 3 or len(spacing) != 3 or len(counts) != 3:
            raise ValueError("origin, spacing and counts must have three entries")
        if min(spacing) <= 0 or not all(np.isfinite(spacing + origin)):
            raise ValueError(f"spacing must be positive and finite, got {spacing}")
        if min(counts) < 2:
            raise ValueError(f"need at least 2 nodes per axis, got {counts}")
        if int(np.prod(counts)) > self.budget:
            raise NumericalRejection(
                f"grid of {counts} nodes exceeds the node budget {self.budget}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def centered(cls, half_extent, spacing, center=(0.0, 0.0, 0.0), **kw):
        """Smallest grid with the given spacing covering ``center +/- half_extent``."""
        half_extent = np.broadcast_to(np.asarray(half_extent, float), (3,))
        spacing = np.broadcast_to(np.asarray(spacing, float), (3,))
        counts = np.maximum(2, np.ceil(2 * half_extent / spacing).astype(int) + 1)
        origin = np.asarray(center, float) - 0.5 * (counts - 1) * spacing
        return cls(tuple(origin), tuple(spacing), tuple(counts), **kw)

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lengths(self) -> np.ndarray:
        """Periodic box lengths ``N * h`` per axis."""
        return np.asarray(self.counts) * np.asarray(self.spacing)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * (np.asarray(self.counts) - 1) * np.asarray(self.spacing)

    def axes(self) -> list:
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.counts)]

    def mesh(self) -> tuple:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``counts + (3,)``."""
        return np.stack(self.mesh(), axis=-1)

    def shifted(self, offset) -> "UniformGrid3":
        origin = np.asarray(self.origin) + np.asarray(offset, float)
        return UniformGrid3(tuple(origin), self.spacing, self.counts, self.budget)

    def refined(self) -> "UniformGrid3":
        """Halve the spacing while covering the same cells."""
        h = np.asarray(self.spacing)
        origin = np.asarray(self.origin) - 0.25 * h
        return UniformGrid3(tuple(origin), tuple(h / 2), tuple(2 * np.asarray(self.counts)),
                            self.budget)

    def reciprocal(self) -> "UniformGrid3":
        """Conjugate wave-number grid: same counts, ``dk = 2 pi / (N h)``, containing k = 0."""
        n = np.asarray(self.counts)
        dk = 2 * np.pi / (n * np.asarray(self.spacing))
        origin = -(n // 2) * dk
        return UniformGrid3(tuple(origin), tuple(dk), tuple(n), self.budget)

    def is_conjugate(self, other: "UniformGrid3", rtol: float = 1e-12) -> bool:
        if self.counts != other.counts:
            return False
        prod = np.asarray(self.spacing) * np.asarray(other.spacing) * np.asarray(self.counts)
        return bool(np.all(np.abs(prod - 2 * np.pi) <= rtol * 2 * np.pi))

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "spacing": list(self.spacing),
                "counts": list(self.counts)}


@dataclass(frozen=True)
class FieldGrid:
    """Samples of one payload kind on every node of ``grid``.

    ``values`` has shape ``grid.counts + payload_shape`` where the payload
    shape is ``()`` for complex/real scalars, ``(3,)`` for vectors and
    ``(4,)`` for Dirac spinors.
    """

    grid: UniformGrid3
    values: np.ndarray
    kind: str = "real"

    def __post_init__(self):
        if self.kind not in PAYLOAD_SHAPES:
            raise ValueError(f"unknown payload kind {self.kind!r}")
        expected = self.grid.counts + PAYLOAD_SHAPES[self.kind]
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != expected {expected}")

    def check_finite(self) -> None:
        bad = ~np.isfinite(self.values)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise NumericalRejection(f"non-finite {self.kind} sample at node index {idx}")


@dataclass(frozen=True)
class TimeSampling:
    t_start: float
    dt: float
    n_samples: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_samples < 5:
            raise ValueError("need at least 5 time samples")

    @classmethod
    def centered(cls, t_center, dt, n_samples):
        return cls(t_center - 0.5 * (n_samples - 1) * dt, dt, n_samples)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_samples)

    @property
    def duration(self) -> float:
        return self.dt * (self.n_samples - 1)

    def check_resolves(self, omega_max: float, samples_per_period: int = 8) -> None:
        """Reject sampling that puts fewer than ``samples_per_period`` samples
        in one period of angular frequency ``omega_max``."""
        if omega_max <= 0:
            return
        period = 2 * np.pi / omega_max
        if self.dt * samples_per_period > period * (1 + 1e-12):
            raise NumericalRejection(
                f"dt={self.dt:g} under-resolves omega={omega_max:g}: need "
                f"dt <= {period / samples_per_period:g}")

    def refined(self) -> "TimeSampling":
        return TimeSampling(self.t_start, self.dt / 2, 2 * self.n_samples - 1)


@dataclass(frozen=True)
class SphereQuadrature:
    """Gauss-Legendre in cos(theta) times uniform phi on a sphere of radius R."""

    radius: float
    directions: np.ndarray
    weights: np.ndarray
    n_theta: int
    n_phi: int

    @classmethod
    def build(cls, radius: float, n_theta: int = 8, n_phi: int = 16) -> "SphereQuadrature":
        mu, w_mu = roots_legendre(n_theta)
        phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
        mu_g, phi_g = np.meshgrid(mu, phi, indexing="ij")
        s = np.sqrt(1.0 - mu_g**2)
        dirs = np.stack([s * np.cos(phi_g), s * np.sin(phi_g), mu_g], axis=-1).reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        weights = (np.outer(w_mu, np.full(n_phi, 2 * np.pi / n_phi)) * radius**2).ravel()
        return cls(float(radius), dirs, weights, n_theta, n_phi)

    def integrate(self, values) -> np.ndarray:
        """Surface integral of per-node values (first axis indexes nodes)."""
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0)) if values.ndim > 1 \
            else float(np.sum(self.weights * values))


def _weight_array(grid: UniformGrid3, weight) -> Optional[np.ndarray]:
    if weight is None:
        return None
    if callable(weight):
        w = np.asarray(weight(*grid.mesh()))
    else:
        w = np.asarray(weight)
    w = np.broadcast_to(w, grid.counts)
    if not np.all(np.isfinite(w)):
        raise NumericalRejection("weight is not finite at every node")
    return w


def integrate_grid(field: FieldGrid, weight=None):
    """Midpoint-rule integral of ``field`` times a per-node scalar weight.

    ``weight`` may be ``None`` (unit weight), an array broadcastable to the
    grid counts, or a callable ``weight(X, Y, Z)`` on the node mesh.  The
    result has the payload type: a scalar for scalar kinds, an array of
    shape ``(3,)`` or ``(4,)`` otherwise.
    """
    field.check_finite()
    w = _weight_array(field.grid, weight)
    v = field.values
    if w is not None:
        v = v * w.reshape(w.shape + (1,) * (v.ndim - 3))
    total = np.sum(v, axis=(0, 1, 2)) * field.grid.cell_volume
    return total if total.ndim else total[()]


def dft_synthesize(momentum: FieldGrid, position_grid: UniformGrid3, phases=None) -> FieldGrid:
    """Continuous inverse Fourier transform sampled on ``position_grid``.

    Computes ``(2 pi)^-3/2 * sum_k a(k) phase(k) exp(i k.x) dk^3`` with the
    FFT.  The momentum and position grids must be conjugate (equal counts,
    ``dx * dk = 2 pi / N`` per axis); under that condition the discrete
    Parseval identity ``sum |psi|^2 dx^3 == sum |a|^2 dk^3`` holds exactly.
    """
    kg = momentum.grid
    if not kg.is_conjugate(position_grid):
        raise NumericalRejection("momentum and position grids are not conjugate")
    amp = momentum.values.astype(complex)
    if phases is not None:
        phases = np.asarray(phases)
        amp = amp * phases.reshape(phases.shape + (1,) * (amp.ndim - phases.ndim))
    n = np.asarray(kg.counts)
    # pre-twist exp(i j dk xi) and post-twist exp(i kappa x_n)
    def along(a, v):
        shape = [1] * amp.ndim
        shape[a] = n[a]
        return v.reshape(shape)

    for a in range(3):
        amp = amp * along(a, np.exp(1j * np.arange(n[a]) * kg.spacing[a] * position_grid.origin[a]))
    out = scipy.fft.ifftn(amp, axes=(0, 1, 2), workers=FFT_WORKERS)
    for a in range(3):
        x = position_grid.origin[a] + np.arange(n[a]) * position_grid.spacing[a]
        out = out * along(a, np.exp(1j * kg.origin[a] * x))
    out *= float(np.prod(n)) * kg.cell_volume / (2 * np.pi) ** 1.5
    kind = momentum.kind if momentum.kind in ("spinor", "cvector") else "complex"
    return FieldGrid(position_grid, out, kind)


@lru_cache(maxsize=None)
def central_weights(order: int) -> tuple:
    """Second-order central finite-difference weights for the ``order``-th
    derivative on offsets ``-p..p``, ``p = (order + 1) // 2``."""
    from sympy.calculus.finite_diff import finite_diff_weights

    p = (order + 1) // 2
    offsets = list(range(-p, p + 1))
    w = finite_diff_weights(order, offsets, 0)[order][-1]
    return tuple(float(c) for c in w)


@dataclass
class DerivativeEstimate:
    index: np.ndarray       # sample indices the estimates refer to
    values: np.ndarray      # Richardson-extrapolated derivative
    error: np.ndarray       # step-halving error estimate, same shape as values
    order: int


def nth_time_derivative(series, dt: float, n: int) -> DerivativeEstimate:
    """Estimate the ``n``-th time derivative of a uniformly sampled series.

    Second-order central differences with steps ``dt`` and ``2 dt`` are
    combined by one Richardson step; ``|D_dt - D_2dt| / 3`` is returned as
    the error estimate.  Only interior samples where both stencils fit are
    returned.  The first axis of ``series`` is time.
    """
    y = np.asarray(series, dtype=float if not np.iscomplexobj(series) else complex)
    if n < 1:
        raise ValueError("derivative order must be >= 1")
    p = (n + 1) // 2
    needed = max(n + 4, 4 * p + 1)
    if y.shape[0] < needed:
        raise ValueError(f"order-{n} derivative needs >= {needed} samples, got {y.shape[0]}")
    w = central_weights(n)
    lo, hi = 2 * p, y.shape[0] - 2 * p
    d1 = np.zeros_like(y[lo:hi])
    d2 = np.zeros_like(y[lo:hi])
    for j, c in zip(range(-p, p + 1), w):
        if c == 0.0:
            continue
        d1 = d1 + c * y[lo + j:hi + j]
        d2 = d2 + c * y[lo + 2 * j:hi + 2 * j]
    d1 /= dt**n
    d2 /= (2 * dt) ** n
    rich = (4 * d1 - d2) / 3
    return DerivativeEstimate(np.arange(lo, hi), rich, np.abs(d1 - d2) / 3, n)


@dataclass
class PolynomialFit:
    degree: Optional[int]          # None means no degree <= max_degree certifies
    residuals: list                # relative RMS residual for degree 0..max_degree
    scale: float
    tol: float
    coefficients: list = field(default_factory=list)

    @property
    def polynomial(self) -> bool:
        return self.degree is not None

    def describe(self) -> str:
        return "non-polynomial" if self.degree is None else f"degree {self.degree}"


def fit_polynomial_degree(series, times, max_degree: int, tol: float,
                          scale: Optional[float] = None) -> PolynomialFit:
    """Least-squares polynomial fits of degree 0..max_degree on a scaled time
    axis; the certified degree is the smallest one whose RMS residual,
    relative to ``scale`` (default: peak absolute value of the series), is
    at most ``tol``."""
    t = np.asarray(times, float)
    y = np.asarray(series, float).reshape(len(t), -1)
    if len(t) < max_degree + 5:
        raise ValueError(f"need >= {max_degree + 5} samples for degree {max_degree}")
    half = 0.5 * (t[-1] - t[0]) or 1.0
    u = (t - 0.5 * (t[-1] + t[0])) / half
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    scale = peak if scale is None else float(scale)
    residuals, coefs, degree = [], [], None
    for d in range(max_degree + 1):
        c = np.polynomial.polynomial.polyfit(u, y, d)
        r = y - np.polynomial.polynomial.polyval(u, c).T.reshape(y.shape)
        rms = float(np.sqrt(np.mean(r**2)))
        rel = rms / scale if scale > 0 else 0.0
        residuals.append(rel)
        coefs.append(c)
        if degree is None and rel <= tol:
            degree = d
    return PolynomialFit(degree, residuals, scale, tol, coefs)


@dataclass
class Peak:
    omega: float
    amplitude: float


@dataclass
class Spectrum:
    omega: np.ndarray
    amplitude: np.ndarray         # combined over components, DC removed
    component_amplitude: np.ndarray
    dc: np.ndarray
    peaks: list
    bin_width: float
    threshold: float

    @property
    def non_dc_peaks(self) -> list:
        return [p for p in self.peaks if p.omega > 0]

    def band_power(self, below: Optional[float] = None, above: Optional[float] = None) -> float:
        """Summed squared amplitude over ``omega < below`` or ``omega >= above``."""
        mask = np.ones_like(self.omega, dtype=bool)
        if below is not None:
            mask &= self.omega < below
        if above is not None:
            mask &= self.omega >= above
        return float(np.sum(self.amplitude[mask] ** 2))


def spectrum(series, dt: float, window: str = "blackmanharris",
             rel_threshold: float = 1e-3, floor: float = 0.0) -> Spectrum:
    """Windowed DFT of each component of a uniformly sampled series.

    The window-weighted mean is reported as the DC line and removed before
    the transform, so slow drift does not leak into the band.  Peaks are
    local maxima above ``rel_threshold`` times the largest of the DC line,
    the largest spectral amplitude and ``floor``; their frequencies are
    refined by a parabola through the log amplitudes.
    """
    y = np.asarray(series, float)
    y = y.reshape(len(y), -1)
    n = y.shape[0]
    if n < 32:
        raise ValueError("spectrum needs at least 32 samples")
    w = get_window(window, n)
    dc = np.sum(y * w[:, None], axis=0) / np.sum(w)
    spec = np.fft.rfft((y - dc) * w[:, None], axis=0)
    comp_amp = 2 * np.abs(spec) / np.sum(w)
    amp = np.sqrt(np.sum(comp_amp**2, axis=1))
    omega = 2 * np.pi * np.fft.rfftfreq(n, dt)
    bin_width = float(omega[1])
    dc_amp = float(np.linalg.norm(dc))
    threshold = rel_threshold * max(dc_amp, float(amp[1:].max(initial=0.0)), floor)
    peaks = []
    if dc_amp >= threshold and dc_amp > 0:
        peaks.append(Peak(0.0, dc_amp))
    for i in range(1, len(amp)):
        left = amp[i - 1]
        right = amp[i + 1] if i + 1 < len(amp) else -np.inf
        if amp[i] < threshold or amp[i] <= 0 or not (amp[i] > left and amp[i] >= right):
            continue
        offset = 0.0
        if i + 1 < len(amp) and left > 0 and amp[i + 1] > 0:
            la, lb, lc = np.log(left), np.log(amp[i]), np.log(amp[i + 1])
            den = la - 2 * lb + lc
            if den < 0:
                offset = float(np.clip(0.5 * (la - lc) / den, -0.5, 0.5))
        peaks.append(Peak(float(omega[i] + offset * bin_width), float(amp[i])))
    return Spectrum(omega, amp, comp_amp, dc, peaks, bin_width, threshold)


@dataclass
class ContinuityReport:
    max_residual: float
    max_drho_dt: float

    @property
    def relative(self) -> float:
        return self.max_residual / self.max_drho_dt if self.max_drho_dt > 0 else 0.0


def continuity_residual(fields: Callable, t: float, grid: UniformGrid3,
                        dx: float = 1e-3, dt: float = 1e-3) -> ContinuityReport:
    """Check ``d rho/dt + div J = 0`` at every node of ``grid``.

    ``fields(t, grid)`` must return ``(rho, J)`` arrays on the given grid.
    Both derivatives are central differences with steps ``h`` and ``2h``
    combined by Richardson extrapolation; the spatial ones evaluate the
    source on grids shifted by ``+/- h`` along each axis, so every node has
    a full stencil.
    """
    def central(f, h):
        d1 = (f(h) - f(-h)) / (2 * h)
        d2 = (f(2 * h) - f(-2 * h)) / (4 * h)
        return (4 * d1 - d2) / 3

    drho = central(lambda s: np.asarray(fields(t + s, grid)[0]), dt)
    div = np.zeros_like(drho)
    for a in range(3):
        e = np.zeros(3)
        e[a] = 1.0
        div += central(lambda s: np.asarray(fields(t, grid.shifted(s * e))[1])[..., a], dx)
    res = np.abs(drho + div)
    return ContinuityReport(float(res.max()), float(np.abs(drho).max()))


def source_extent(grid: UniformGrid3, density, fraction: float = 0.99) -> float:
    """Radius about the |density|-weighted centroid enclosing ``fraction``
    of the total |density|."""
    d = np.abs(np.asarray(density))
    if d.ndim == 4:
        d = np.linalg.norm(d, axis=-1)
    total = d.sum()
    if total == 0:
        return 0.0
    pts = grid.points()
    c = np.tensordot(d, pts, axes=3) / total
    r = np.linalg.norm(pts - c, axis=-1).ravel()
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(d.ravel()[order])
    return float(r[order][np.searchsorted(cum, fraction * total)])


def rms_radius(grid: UniformGrid3, density) -> float:
    """sqrt of the |density|-weighted mean squared distance from the centroid.
    Unlike the quantile radius it is a smooth integral, so it converges with
    the grid like any other moment."""
    d = np.abs(np.asarray(density))
    if d.ndim == 4:
        d = np.linalg.norm(d, axis=-1)
    total = np.sum(d)
    if total == 0:
        return 0.0
    pts = grid.points()
    c = np.tensordot(d, pts, axes=3) / total
    return float(np.sqrt(np.sum(d * np.sum((pts - c) ** 2, -1)) / total))


def shell_fraction(grid: UniformGrid3, density, width: int = 2) -> float:
    """Fraction of |density| in the outer ``width`` node layers of the box."""
    d = np.abs(np.asarray(density))
    if d.ndim == 4:
        d = d.sum(axis=-1)
    total = d.sum()
    if total == 0:
        return 0.0
    inner = d[width:-width, width:-width, width:-width].sum()
    return float((total - inner) / total)
