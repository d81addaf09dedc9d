"""
Band-limited Schrodinger states built from Gaussian momentum-space
components, their closed-form evolution (free, or under a uniform force)
and the probability charge/current densities they carry.

Each component evolves exactly: in momentum space it is a Gaussian times
``exp(-i hbar k^2 t / 2m)``, and the momentum integral is done in closed
form per axis.  A uniform force ``F`` is handled by the standard
transformation to the accelerated frame::

    psi_F(x, t) = exp(i F.x t / hbar - i F^2 t^3 / (6 m hbar)) psi_free(x - F t^2 / 2m, t)

Gradients are obtained analytically, never by numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import NumericalRejection
from .gridlab import FieldGrid, UniformGrid3, integrate_grid

C_LIGHT = 1.0


@dataclass(frozen=True)
class GaussianComponent:
    amplitude: complex
    k_center: tuple
    sigma_k: tuple
    x_offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        k = np.broadcast_to(np.asarray(self.k_center, float), (3,))
        s = np.broadcast_to(np.asarray(self.sigma_k, float), (3,))
        x = np.broadcast_to(np.asarray(self.x_offset, float), (3,))
        if np.any(s <= 0):
            raise ValueError("sigma_k must be positive on every axis")
        if not np.isfinite(complex(self.amplitude)):
            raise ValueError("component amplitude must be finite")
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        object.__setattr__(self, "k_center", tuple(k))
        object.__setattr__(self, "sigma_k", tuple(s))
        object.__setattr__(self, "x_offset", tuple(x))

    @property
    def position_width(self) -> np.ndarray:
        """Position-space standard deviation of |psi|^2 at t = 0."""
        return 0.5 / np.asarray(self.sigma_k)


def _overlap(a: GaussianComponent, b: GaussianComponent) -> complex:
    """<a|b> for unit-norm components (amplitudes excluded)."""
    total = 1.0 + 0j
    for i in range(3):
        sa, sb = a.position_width[i], b.position_width[i]
        alpha = sa**2 + sb**2
        B = 2 * sa**2 * a.k_center[i] + 2 * sb**2 * b.k_center[i] + 1j * (a.x_offset[i] - b.x_offset[i])
        C = sa**2 * a.k_center[i] ** 2 + sb**2 * b.k_center[i] ** 2
        norm = (2 * sa**2 / np.pi) ** 0.25 * (2 * sb**2 / np.pi) ** 0.25
        total *= norm * np.sqrt(np.pi / alpha) * np.exp(B**2 / (4 * alpha) - C)
    return total


@dataclass(frozen=True)
class GaussianPacketSet:
    """Normalised superposition of Gaussian components.

    The amplitudes passed in are rescaled so that the state has unit norm.
    """

    components: tuple
    mass: float = 1.0
    charge: float = 1.0
    hbar: float = 1.0
    delta: float = 0.2
    n_sigma: float = 6.0
    c: float = C_LIGHT

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a packet set needs at least one component")
        if not 0 < self.delta < 1:
            raise ValueError("band-limit margin delta must lie in (0, 1)")
        if self.mass <= 0 or self.hbar <= 0:
            raise ValueError("mass and hbar must be positive")
        gram = np.array([[_overlap(a, b) for b in comps] for a in comps])
        amps = np.array([c.amplitude for c in comps])
        norm2 = float(np.real(amps.conj() @ gram @ amps))
        if not norm2 > 0:
            raise ValueError("components cancel; state has zero norm")
        scale = 1 / np.sqrt(norm2)
        comps = tuple(replace(c, amplitude=c.amplitude * scale) for c in comps)
        object.__setattr__(self, "components", comps)

    def norm(self) -> float:
        amps = np.array([c.amplitude for c in self.components])
        gram = np.array([[_overlap(a, b) for b in self.components] for a in self.components])
        return float(np.real(amps.conj() @ gram @ amps))

    def mean_momentum(self) -> np.ndarray:
        """<P> for the free state (time independent)."""
        # in momentum space |phi(k)|^2 cross terms share the Gaussian integrals
        p = np.zeros(3)
        for a in self.components:
            for b in self.components:
                ov = _overlap(a, b)
                if ov == 0:
                    continue
                for i in range(3):
                    sa, sb = a.position_width[i], b.position_width[i]
                    alpha = sa**2 + sb**2
                    B = 2 * sa**2 * a.k_center[i] + 2 * sb**2 * b.k_center[i] \
                        + 1j * (a.x_offset[i] - b.x_offset[i])
                    p[i] += np.real(np.conj(a.amplitude) * b.amplitude * ov * B / (2 * alpha))
        return self.hbar * p

    def max_frequency(self) -> float:
        """Largest angular frequency hbar k^2 / 2m inside the n_sigma support."""
        kmax = max(np.linalg.norm(c.k_center) + self.n_sigma * max(c.sigma_k)
                   for c in self.components)
        return self.hbar * kmax**2 / (2 * self.mass)


@dataclass(frozen=True)
class MixedState:
    members: tuple  # of (weight, GaussianPacketSet)

    def __post_init__(self):
        members = tuple((float(w), s) for w, s in self.members)
        if not members:
            raise ValueError("mixed state needs at least one member")
        if any(not 0 < w <= 1 for w, _ in members):
            raise ValueError("mixture weights must lie in (0, 1]")
        if abs(sum(w for w, _ in members) - 1) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        object.__setattr__(self, "members", members)


@dataclass(frozen=True)
class UniformForce:
    F: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        f = np.broadcast_to(np.asarray(self.F, float), (3,))
        if not np.all(np.isfinite(f)):
            raise ValueError("force must be finite")
        object.__setattr__(self, "F", tuple(f))

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.F)


FREE = UniformForce()


@dataclass
class BandLimitReport:
    passed: bool
    worst_margin: float          # (1 - delta) c minus the largest support velocity
    v_max: float                 # (1 - delta) c
    margins: list = field(default_factory=list)


def check_band_limit(state: GaussianPacketSet) -> BandLimitReport:
    """Every component's momentum support, taken as ``|k_center| + n_sigma *
    max(sigma_k)``, must correspond to a speed below ``(1 - delta) c``."""
    v_max = (1 - state.delta) * state.c
    margins = []
    for comp in state.components:
        kmax = np.linalg.norm(comp.k_center) + state.n_sigma * max(comp.sigma_k)
        margins.append(v_max - state.hbar * kmax / state.mass)
    worst = min(margins)
    return BandLimitReport(bool(worst > 0), float(worst), v_max, [float(m) for m in margins])


def _axis_factor(comp: GaussianComponent, axis: int, x, t: float, hbar: float, m: float):
    """1D factor of one component and its x-derivative at positions ``x``."""
    s = comp.position_width[axis]
    k0 = comp.k_center[axis]
    y = np.asarray(x, float) - comp.x_offset[axis]
    alpha = s**2 + 1j * hbar * t / (2 * m)
    B = 2 * s**2 * k0 + 1j * y
    pref = (2 * s**2 / np.pi) ** 0.25 / np.sqrt(2 * alpha)
    f = pref * np.exp(B**2 / (4 * alpha) - s**2 * k0**2)
    return f, f * (1j * B / (2 * alpha))


def packet_envelopes(state: GaussianPacketSet, force: UniformForce, t: float):
    """(centre, width) of each component's |psi|^2 at time ``t``."""
    out = []
    shift = force.vector * t**2 / (2 * state.mass)
    for comp in state.components:
        s = comp.position_width
        width = s * np.sqrt(1 + (state.hbar * t / (2 * state.mass * s**2)) ** 2)
        center = np.asarray(comp.x_offset) + state.hbar * np.asarray(comp.k_center) * t / state.mass + shift
        out.append((center, width))
    return out


def suggested_half_extent(state: GaussianPacketSet, force: UniformForce, times, n_width=8.0):
    """Half-extent per axis (about the origin) covering ``n_width`` widths of
    every component at every time in ``times``."""
    ext = np.zeros(3)
    for t in np.atleast_1d(times):
        for center, width in packet_envelopes(state, force, float(t)):
            ext = np.maximum(ext, np.abs(center) + n_width * width)
    return ext


def _evaluate_separable(state, force, t, axes):
    F = force.vector
    m, hbar = state.mass, state.hbar
    shift = F * t**2 / (2 * m)
    shape = tuple(len(a) for a in axes)
    psi = np.zeros(shape, complex)
    grad = np.zeros(shape + (3,), complex)
    phase_axes = [np.exp(1j * F[a] * axes[a] * t / hbar) for a in range(3)]
    for comp in state.components:
        fac = [_axis_factor(comp, a, axes[a] - shift[a], t, hbar, m) for a in range(3)]
        f = [fac[a][0] * phase_axes[a] for a in range(3)]
        # d/dx of (f_free * phase) = (f'_free + i F t / hbar f_free) * phase
        d = [(fac[a][1] + 1j * F[a] * t / hbar * fac[a][0]) * phase_axes[a] for a in range(3)]
        psi += comp.amplitude * np.einsum("i,j,k->ijk", f[0], f[1], f[2])
        grad[..., 0] += comp.amplitude * np.einsum("i,j,k->ijk", d[0], f[1], f[2])
        grad[..., 1] += comp.amplitude * np.einsum("i,j,k->ijk", f[0], d[1], f[2])
        grad[..., 2] += comp.amplitude * np.einsum("i,j,k->ijk", f[0], f[1], d[2])
    glob = np.exp(-1j * np.dot(F, F) * t**3 / (6 * m * hbar))
    return psi * glob, grad * glob


def evaluate_wavefunction(state: GaussianPacketSet, force: UniformForce, t: float,
                          grid: UniformGrid3, check_escape: bool = True):
    """Closed-form psi and grad psi on ``grid`` at time ``t``.

    Raises NumericalRejection when more than 1e-6 of the norm lies outside
    the grid; the message suggests a half-extent that covers 8 widths.
    """
    psi, grad = _evaluate_separable(state, force, t, grid.axes())
    psi_f = FieldGrid(grid, psi, "complex")
    if check_escape:
        inside = integrate_grid(FieldGrid(grid, np.abs(psi) ** 2, "real"))
        if abs(1 - inside) > 1e-6:
            ext = suggested_half_extent(state, force, [t])
            raise NumericalRejection(
                f"packet escapes grid at t={t:g}: norm on grid {inside:.8f}; "
                f"suggested half-extent {np.round(ext, 3).tolist()}")
    return psi_f, FieldGrid(grid, grad, "cvector")


def wavefunction_at(state: GaussianPacketSet, force: UniformForce, t: float, points):
    """psi at arbitrary points, shape ``(N, 3)`` -> ``(N,)``."""
    pts = np.atleast_2d(np.asarray(points, float))
    F = force.vector
    shift = F * t**2 / (2 * state.mass)
    out = np.zeros(len(pts), complex)
    for comp in state.components:
        f = np.ones(len(pts), complex)
        for a in range(3):
            f *= _axis_factor(comp, a, pts[:, a] - shift[a], t, state.hbar, state.mass)[0]
        out += comp.amplitude * f
    phase = np.exp(1j * (pts @ F) * t / state.hbar - 1j * np.dot(F, F) * t**3
                   / (6 * state.mass * state.hbar))
    return out * phase


def current_density(psi: FieldGrid, grad: FieldGrid, q: float, m: float, hbar: float):
    """rho = q |psi|^2 and J = (q hbar / 2 m i)(psi* grad psi - psi grad psi*)."""
    if psi.grid != grad.grid:
        raise ValueError("psi and grad psi must live on the same grid")
    v = psi.values
    rho = q * np.abs(v) ** 2
    J = (q * hbar / m) * np.imag(np.conj(v)[..., None] * grad.values)
    return FieldGrid(psi.grid, rho, "real"), FieldGrid(psi.grid, J, "vector")


def mixed_current(mix: MixedState, force: UniformForce, t: float, grid: UniformGrid3,
                  check_escape: bool = True):
    """Weighted sum of the members' (rho, J); members may differ in hbar."""
    rho = np.zeros(grid.counts)
    J = np.zeros(grid.counts + (3,))
    for w, state in mix.members:
        r, j = current_density(*evaluate_wavefunction(state, force, t, grid, check_escape),
                               state.charge, state.mass, state.hbar)
        rho += w * r.values
        J += w * j.values
    return FieldGrid(grid, rho, "real"), FieldGrid(grid, J, "vector")


def acceleration_expectation(state: GaussianPacketSet, force: UniformForce, t: float,
                             grid: UniformGrid3 = None, h: float = 0.05):
    """Ehrenfest acceleration <dP/dt>/m.

    Without a grid the analytic value ``F / m`` is returned.  With a grid the
    momentum expectation is integrated by quadrature at ``t +/- h`` and
    differenced, which gives an independent route to the same number.
    """
    if grid is None:
        return force.vector / state.mass

    def momentum(tt):
        psi, grad = evaluate_wavefunction(state, force, tt, grid)
        dens = state.hbar * np.imag(np.conj(psi.values)[..., None] * grad.values)
        return integrate_grid(FieldGrid(grid, dens, "vector"))

    return (momentum(t + h) - momentum(t - h)) / (2 * h * state.mass)


class SchrodingerSource:
    """Pure-state Schrodinger packet as a charge/current source."""

    model = "schrodinger"

    def __init__(self, state: GaussianPacketSet, force: UniformForce = FREE,
                 check_escape: bool = True):
        self.state = state
        self.force = force
        self.check_escape = check_escape

    @property
    def q(self) -> float:
        return self.state.charge

    @property
    def c(self) -> float:
        return self.state.c

    def currents(self, t, grid):
        psi, grad = evaluate_wavefunction(self.state, self.force, t, grid, self.check_escape)
        return current_density(psi, grad, self.state.charge, self.state.mass, self.state.hbar)

    def arrays(self, t, grid):
        psi, grad = _evaluate_separable(self.state, self.force, t, grid.axes())
        rho = self.state.charge * np.abs(psi) ** 2
        J = (self.state.charge * self.state.hbar / self.state.mass) * np.imag(np.conj(psi)[..., None] * grad)
        return rho, J

    def half_extent(self, times, n_width=8.0):
        return suggested_half_extent(self.state, self.force, times, n_width)


class MixedSource:
    model = "mixed_state"

    def __init__(self, mix: MixedState, force: UniformForce = FREE, check_escape: bool = True):
        self.mix = mix
        self.force = force
        self.check_escape = check_escape

    @property
    def q(self) -> float:
        return sum(w * s.charge for w, s in self.mix.members)

    @property
    def c(self) -> float:
        return self.mix.members[0][1].c

    def currents(self, t, grid):
        return mixed_current(self.mix, self.force, t, grid, self.check_escape)

    def arrays(self, t, grid):
        rho = np.zeros(grid.counts)
        J = np.zeros(grid.counts + (3,))
        for w, s in self.mix.members:
            r, j = SchrodingerSource(s, self.force).arrays(t, grid)
            rho += w * r
            J += w * j
        return rho, J

    def half_extent(self, times, n_width=8.0):
        return np.max([suggested_half_extent(s, self.force, times, n_width)
                       for _, s in self.mix.members], axis=0)
