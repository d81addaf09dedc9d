"""
Free-streaming Newtonian ensembles.

The phase-space density is a finite mixture of members, each a Gaussian
blob of width sigma_x in position carried rigidly at a fixed velocity, so

    rho(x, t) = q sum_j w_j g_j(x - x0_j - v_j t),   J = q sum_j w_j v_j g_j(...)

which solves the Liouville equation exactly.  Moments of J have a closed
form (Gaussian moments of a polynomial) that serves as an oracle for the
grid quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from .errors import NumericalRejection
from .gridlab import FieldGrid, TimeSampling, UniformGrid3


@dataclass(frozen=True)
class EnsembleMember:
    weight: float
    x0: tuple
    v: tuple
    sigma_x: float = 1.0

    def __post_init__(self):
        for name in ("x0", "v"):
            val = np.asarray(getattr(self, name), float)
            if val.shape != (3,) or not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, tuple(val))
        if self.sigma_x < 0:
            raise ValueError("sigma_x must be >= 0")
        if self.weight < 0:
            raise ValueError("member weights must be non-negative")


@dataclass(frozen=True)
class NewtonianEnsemble:
    members: tuple
    q: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        ms = tuple(m if isinstance(m, EnsembleMember) else EnsembleMember(*m) for m in self.members)
        if not ms:
            raise ValueError("ensemble needs at least one member")
        object.__setattr__(self, "members", ms)
        total = sum(m.weight for m in ms)
        if abs(total - 1) > 1e-12:
            raise ValueError(f"member weights must sum to 1, got {total}")
        for i, m in enumerate(ms):
            if np.linalg.norm(m.v) >= self.c:
                raise ValueError(f"member {i}: |v| = {np.linalg.norm(m.v):g} is not below c = {self.c:g}")

    def centers(self, t: float) -> np.ndarray:
        return np.array([np.add(m.x0, np.multiply(m.v, t)) for m in self.members])

    def half_extent(self, times, n_width: float = 8.0) -> np.ndarray:
        """Half-extent (about the origin) of a box holding every member."""
        pts = np.concatenate([self.centers(t) for t in np.atleast_1d(times)])
        sig = max(m.sigma_x for m in self.members)
        return np.max(np.abs(pts), axis=0) + n_width * sig


def _blob(grid: UniformGrid3, center, sigma: float) -> np.ndarray:
    x, y, z = grid.axes()
    g = [np.exp(-0.5 * ((a - c) / sigma) ** 2) / np.sqrt(2 * np.pi * sigma**2) for a, c in zip((x, y, z), center)]
    return np.einsum("i,j,k->ijk", *g)


def ensemble_arrays(ens: NewtonianEnsemble, t: float, grid: UniformGrid3, check_escape: bool = True):
    rho = np.zeros(grid.counts)
    J = np.zeros(grid.counts + (3,))
    for m, c in zip(ens.members, ens.centers(t)):
        if m.sigma_x == 0:
            raise NumericalRejection("point members (sigma_x = 0) are not grid-representable; "
                                     "use closed_form_moment")
        g = ens.q * m.weight * _blob(grid, c, m.sigma_x)
        rho += g
        J += g[..., None] * np.asarray(m.v)
    if check_escape and ens.q != 0:
        lost = abs(np.sum(rho) * grid.cell_volume - ens.q) / abs(ens.q)
        if lost > 1e-8:
            raise NumericalRejection(f"ensemble escapes the grid at t={t:g}: charge deficit {lost:.2e}; "
                                     f"suggested half-extent {ens.half_extent([t]).round(3).tolist()}")
    return rho, J


def ensemble_fields(ens: NewtonianEnsemble, t: float, grid: UniformGrid3, check_escape: bool = True):
    rho, J = ensemble_arrays(ens, t, grid, check_escape)
    return FieldGrid(grid, rho, "real"), FieldGrid(grid, J, "vector")


def gaussian_raw_moment(mu, s: float, k: int):
    """E[Y^k] for Y ~ N(mu, s^2)."""
    out = 0.0
    dfact = 1.0  # (i-1)!! for even i
    for i in range(0, k + 1, 2):
        if i > 0:
            dfact *= i - 1
        out = out + comb(k, i) * mu ** (k - i) * s**i * dfact
    return out


def closed_form_moment(ens: NewtonianEnsemble, n, m: int, t) -> np.ndarray:
    """Exact I_m(n, t); shape ``(len(t), 3)`` for array ``t``."""
    n = np.asarray(n, float)
    n = n / np.linalg.norm(n)
    t = np.atleast_1d(np.asarray(t, float))
    out = np.zeros((len(t), 3))
    for mem in ens.members:
        mu = n @ np.asarray(mem.x0) + (n @ np.asarray(mem.v)) * t
        out += ens.q * mem.weight * gaussian_raw_moment(mu, mem.sigma_x, m - 1)[:, None] * np.asarray(mem.v)
    return out


class NewtonianSource:
    model = "newtonian"

    def __init__(self, ens: NewtonianEnsemble, check_escape: bool = True):
        self.ens = ens
        self.check_escape = check_escape

    @property
    def q(self) -> float:
        return self.ens.q

    @property
    def c(self) -> float:
        return self.ens.c

    def currents(self, t, grid):
        return ensemble_fields(self.ens, t, grid, self.check_escape)

    def arrays(self, t, grid):
        return ensemble_arrays(self.ens, t, grid, self.check_escape)

    def half_extent(self, times, n_width=8.0):
        return self.ens.half_extent(times, n_width)


@dataclass
class EnsembleCheck:
    certification: object                # multipole.Certification
    closed_form_error: float             # max relative quadrature-vs-closed-form deviation
    per_order_error: list

    @property
    def passed(self) -> bool:
        return self.certification.passed and self.closed_form_error <= 1e-8


def ensemble_moment_theorem_check(ens: NewtonianEnsemble, n, M: int, sampling: TimeSampling,
                                  grid: UniformGrid3, tol: float = 1e-6) -> EnsembleCheck:
    """Degree certificates for m = 1..M plus a comparison of every sampled
    quadrature moment against the closed-form Gaussian moment."""
    from .multipole import certify_nonradiation

    if not 1 <= M <= 5:
        raise ValueError("M must lie in 1..5")
    cert = certify_nonradiation(NewtonianSource(ens), grid, sampling, np.atleast_2d(n), M, tol)
    vals = cert.series.values(np.atleast_2d(n))[:, :, :, :]
    errs = []
    for d, nd in enumerate(np.atleast_2d(n)):
        for m in range(1, M + 1):
            exact = closed_form_moment(ens, nd, m, sampling.times)
            scale = max(np.max(np.abs(exact)), cert.series.scale(np.atleast_2d(nd))[0, m - 1])
            errs.append(float(np.max(np.abs(vals[:, d, m - 1] - exact))) / scale if scale > 0 else 0.0)
    return EnsembleCheck(cert, max(errs), errs)
