"""
Klein-Gordon and Dirac sources.

Both are specified by momentum-space amplitudes on a grid conjugate to the
position grid and synthesized exactly by FFT, so Parseval-type norms hold to
rounding.  Klein-Gordon states carry separate positive and negative
frequency amplitudes; Dirac states carry coefficients over the four
eigenbranches of H(k) = c hbar alpha.k + beta m c^2, ordered
[+, +, -, -] (descending energy, spin-up first).

The Klein-Gordon current is

    rho = (i q hbar / 2 m c^2) (Phi* Phi_t - Phi Phi_t*),
    J   = (q hbar / m) Im(Phi* grad Phi),

and the Dirac current is rho = q Psi^dagger Psi, j = c q Psi^dagger alpha Psi.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalRejection
from .gridlab import FieldGrid, Spectrum, TimeSampling, UniformGrid3, dft_synthesize, shell_fraction, spectrum

ESCAPE_LIMIT = 1e-10

SIGMA = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], complex)
BETA = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)
ALPHA = np.zeros((3, 4, 4), complex)
ALPHA[:, :2, 2:] = SIGMA
ALPHA[:, 2:, :2] = SIGMA
BRANCH_SIGN = np.array([1.0, 1.0, -1.0, -1.0])


def gaussian_amplitude(kgrid: UniformGrid3, k0, sigma_k, x_offset=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Unnormalized Gaussian momentum profile centred at k0, displaced to x_offset."""
    K = kgrid.points()
    sk = np.broadcast_to(np.asarray(sigma_k, float), (3,))
    return np.exp(-np.sum((K - np.asarray(k0, float)) ** 2 / (4 * sk**2), -1)
                  - 1j * K @ np.asarray(x_offset, float))


def _check_escape(grid: UniformGrid3, density, t: float) -> None:
    f = shell_fraction(grid, density)
    if f > ESCAPE_LIMIT:
        raise NumericalRejection(
            f"state reaches the grid boundary at t={t:g} (shell fraction {f:.2e}); "
            f"suggested half-extent {np.round(1.5 * grid.lengths / 2, 3).tolist()}")


# -- Klein-Gordon ----------------------------------------------------------------------

@dataclass(frozen=True)
class KGState:
    """Positive and negative frequency amplitudes on a momentum grid.

    Normalized so that the sum of the absolute branch charges,
    ``sum (hbar omega / m c^2)(|a+|^2 + |a-|^2) dk^3``, is 1; the conserved
    charge is then ``q (N+ - N-)``.
    """

    kgrid: UniformGrid3
    plus: np.ndarray
    minus: np.ndarray
    mass: float = 1.0
    charge: float = 1.0
    hbar: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("Klein-Gordon mass must be positive")
        plus = np.asarray(self.plus, complex)
        minus = np.asarray(self.minus, complex)
        if plus.shape != self.kgrid.counts or minus.shape != self.kgrid.counts:
            raise ValueError("branch amplitudes must match the momentum grid")
        w = self.energy_weight()
        total = np.sum(w * (np.abs(plus) ** 2 + np.abs(minus) ** 2)) * self.kgrid.cell_volume
        if total == 0:
            raise ValueError("state has zero norm")
        s = 1 / np.sqrt(total)
        object.__setattr__(self, "plus", plus * s)
        object.__setattr__(self, "minus", minus * s)

    @classmethod
    def gaussian(cls, kgrid, k0, sigma_k, plus_weight=1.0, minus_weight=0.0, x_offset=(0, 0, 0), **kw):
        g = gaussian_amplitude(kgrid, k0, sigma_k, x_offset)
        return cls(kgrid, plus_weight * g, minus_weight * g, **kw)

    def omega(self) -> np.ndarray:
        K2 = np.sum(self.kgrid.points() ** 2, -1)
        return self.c * np.sqrt(K2 + (self.mass * self.c / self.hbar) ** 2)

    def energy_weight(self) -> np.ndarray:
        return self.hbar * self.omega() / (self.mass * self.c**2)

    def norm(self) -> float:
        w = self.energy_weight()
        return float(np.sum(w * (np.abs(self.plus) ** 2 + np.abs(self.minus) ** 2)) * self.kgrid.cell_volume)

    def branch_charges(self) -> tuple:
        w = self.energy_weight()
        dv = self.kgrid.cell_volume
        return (float(np.sum(w * np.abs(self.plus) ** 2) * dv),
                -float(np.sum(w * np.abs(self.minus) ** 2) * dv))

    def total_charge(self) -> float:
        return self.charge * sum(self.branch_charges())

    def max_frequency(self) -> float:
        on = (np.abs(self.plus) + np.abs(self.minus)) > 1e-12 * max(np.abs(self.plus).max(), np.abs(self.minus).max())
        return float(self.omega()[on].max())


def kg_evolve_and_synthesize(state: KGState, t: float, grid: UniformGrid3):
    """(Phi, d Phi/dt, grad Phi) at time t; the time derivative is analytic."""
    w = state.omega()
    ep, em = np.exp(-1j * w * t), np.exp(1j * w * t)
    A = state.plus * ep + state.minus * em
    At = -1j * w * (state.plus * ep - state.minus * em)
    K = state.kgrid.points()
    kg = state.kgrid
    phi = dft_synthesize(FieldGrid(kg, A, "complex"), grid)
    phi_t = dft_synthesize(FieldGrid(kg, At, "complex"), grid)
    grad = dft_synthesize(FieldGrid(kg, 1j * K * A[..., None], "cvector"), grid)
    return phi, phi_t, grad


def kg_current(phi: FieldGrid, phi_t: FieldGrid, grad: FieldGrid, q: float, m: float,
               hbar: float = 1.0, c: float = 1.0):
    p = phi.values
    rho = -(q * hbar / (m * c**2)) * np.imag(np.conj(p) * phi_t.values)
    J = (q * hbar / m) * np.imag(np.conj(p)[..., None] * grad.values)
    return FieldGrid(phi.grid, rho, "real"), FieldGrid(phi.grid, J, "vector")


class KGSource:
    model = "klein_gordon"

    def __init__(self, state: KGState, check_escape: bool = True):
        self.state = state
        self.check_escape = check_escape

    @property
    def q(self) -> float:
        return self.state.charge

    @property
    def c(self) -> float:
        return self.state.c

    def currents(self, t, grid):
        s = self.state
        phi, phi_t, grad = kg_evolve_and_synthesize(s, t, grid)
        if self.check_escape:
            _check_escape(grid, np.abs(phi.values) ** 2, t)
        return kg_current(phi, phi_t, grad, s.charge, s.mass, s.hbar, s.c)

    def arrays(self, t, grid):
        rho, J = self.currents(t, grid)
        return rho.values, J.values


# -- Dirac -------------------------------------------------------------------------------

def dirac_hamiltonian(k, m: float, hbar: float = 1.0, c: float = 1.0) -> np.ndarray:
    k = np.asarray(k, float)
    return c * hbar * np.einsum("...i,iab->...ab", k, ALPHA) + m * c**2 * BETA


@dataclass
class DiracBasis:
    energies: np.ndarray      # (..., 4) ordered [+E, +E, -E, -E]
    vectors: np.ndarray       # (..., 4, 4) columns are branch spinors
    min_separation: float


def dirac_eigenbasis(k, m: float, hbar: float = 1.0, c: float = 1.0) -> DiracBasis:
    """Numerical diagonalization of H(k) with a smooth branch gauge: the
    unit vectors e1, e2 projected onto the positive subspace (e3, e4 onto
    the negative one) and orthonormalized."""
    H = dirac_hamiltonian(k, m, hbar, c)
    evals, evecs = np.linalg.eigh(H)
    sep = float(np.min(evals[..., 2] - evals[..., 1]))
    if sep < 1e-10 * max(m * c**2, 1e-300):
        raise NumericalRejection(f"Dirac branches are degenerate (separation {sep:.2e})")
    vecs = np.empty_like(evecs)
    for sub, cols in ((slice(2, 4), (0, 1)), (slice(0, 2), (2, 3))):
        U = evecs[..., :, sub]
        P = U @ np.conj(np.swapaxes(U, -1, -2))
        prev = None
        for col in cols:
            v = P[..., :, col]
            if prev is not None:
                v = v - prev * np.sum(np.conj(prev) * v, -1, keepdims=True)
            v = v / np.linalg.norm(v, axis=-1, keepdims=True)
            vecs[..., :, col] = v
            prev = v
    energies = evals[..., ::-1]
    return DiracBasis(energies, vecs, sep)


@dataclass(frozen=True)
class DiracState:
    """Coefficients over the four eigenbranches at every momentum node,
    shape ``kgrid.counts + (4,)``; normalized to ``sum |c|^2 dk^3 = 1``."""

    kgrid: UniformGrid3
    coefficients: np.ndarray
    mass: float = 1.0
    charge: float = 1.0
    hbar: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        co = np.asarray(self.coefficients, complex)
        if co.shape != self.kgrid.counts + (4,):
            raise ValueError("coefficients must have shape kgrid.counts + (4,)")
        total = np.sum(np.abs(co) ** 2) * self.kgrid.cell_volume
        if total == 0:
            raise ValueError("state has zero norm")
        object.__setattr__(self, "coefficients", co / np.sqrt(total))

    @classmethod
    def gaussian(cls, kgrid, k0, sigma_k, branch_weights=(1, 0, 0, 0), x_offset=(0, 0, 0), **kw):
        g = gaussian_amplitude(kgrid, k0, sigma_k, x_offset)
        return cls(kgrid, g[..., None] * np.asarray(branch_weights, complex), **kw)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2) * self.kgrid.cell_volume)

    def basis(self) -> DiracBasis:
        return dirac_eigenbasis(self.kgrid.points(), self.mass, self.hbar, self.c)

    def max_frequency(self) -> float:
        on = np.max(np.abs(self.coefficients), -1) > 1e-12 * np.abs(self.coefficients).max()
        K2 = np.sum(self.kgrid.points() ** 2, -1)
        E = np.sqrt((self.hbar * self.c) ** 2 * K2 + (self.mass * self.c**2) ** 2)
        return float(E[on].max() / self.hbar)


def dirac_synthesize(state: DiracState, t: float, grid: UniformGrid3,
                     basis: Optional[DiracBasis] = None) -> FieldGrid:
    b = basis or state.basis()
    phase = np.exp(-1j * b.energies * t / state.hbar)
    spinor_k = np.einsum("...ab,...b->...a", b.vectors, state.coefficients * phase)
    return dft_synthesize(FieldGrid(state.kgrid, spinor_k, "spinor"), grid)


def dirac_current(psi: FieldGrid, q: float, c: float = 1.0):
    v = psi.values
    rho = q * np.sum(np.abs(v) ** 2, -1)
    j = c * q * np.real(np.einsum("...a,iab,...b->...i", np.conj(v), ALPHA, v))
    return FieldGrid(psi.grid, rho, "real"), FieldGrid(psi.grid, j, "vector")


class DiracSource:
    model = "dirac"

    def __init__(self, state: DiracState, check_escape: bool = True):
        self.state = state
        self.check_escape = check_escape
        self._basis = state.basis()

    @property
    def q(self) -> float:
        return self.state.charge

    @property
    def c(self) -> float:
        return self.state.c

    def spinor(self, t, grid):
        return dirac_synthesize(self.state, t, grid, self._basis)

    def currents(self, t, grid):
        psi = self.spinor(t, grid)
        if self.check_escape:
            _check_escape(grid, np.sum(np.abs(psi.values) ** 2, -1), t)
        return dirac_current(psi, self.state.charge, self.state.c)

    def arrays(self, t, grid):
        rho, J = self.currents(t, grid)
        return rho.values, J.values


# -- zitterbewegung -------------------------------------------------------------------------

@dataclass
class ZitterbewegungReport:
    spectrum: Spectrum
    rest_frequency: float         # m c^2 / hbar
    low_band_power: float         # omega < m c^2 / hbar, DC removed
    high_band_power: float        # omega >= 2 m c^2 / hbar

    @property
    def band_ratio(self) -> float:
        return self.low_band_power / self.high_band_power if self.high_band_power > 0 else 0.0

    @property
    def peaks_above_threshold(self) -> bool:
        """Every non-DC peak lies at or above 2 m c^2 / hbar, up to one bin."""
        lim = 2 * self.rest_frequency - self.spectrum.bin_width
        return all(p.omega >= lim for p in self.spectrum.non_dc_peaks)


def zitterbewegung_report(I1, sampling: TimeSampling, mass: float, hbar: float = 1.0, c: float = 1.0,
                          omega_max: Optional[float] = None, floor: float = 0.0) -> ZitterbewegungReport:
    """Spectrum of I1(t) with the band split at m c^2 / hbar and 2 m c^2 / hbar.
    ``omega_max`` (default 2 x rest frequency) must be resolved by 8 samples
    per period."""
    w0 = mass * c**2 / hbar
    sampling.check_resolves(omega_max if omega_max is not None else 2 * w0, 8)
    sp = spectrum(I1, sampling.dt, floor=floor)
    return ZitterbewegungReport(sp, w0, sp.band_power(below=w0), sp.band_power(above=2 * w0))
