"""
Brute-force retarded fields from a stored charge/current history.

Nothing here uses the multipole expansion: every source node is evaluated
at its own retarded time t - |x - x'|/c, interpolated in time from dense
snapshots, and the exact expressions are integrated over the grid,

    Phi = integral rho(t_r) / R,             A = (1/c) integral J(t_r) / R,
    B   = (1/c) integral n' x [-J / R^2 - J_t / (R c)],
    E   = integral [rho n' / R^2 + rho_t n' / (R c) - J_t / (R c^2)],

with n' = (x - x') / R and R = |x - x'|.

Only nodes where the source is ever non-negligible (the active set) are
stored; dropping the rest is verified snapshot by snapshot.

Binary container layout (all little-endian)::

    8 bytes   magic  b"SEMIRADH"
    8 bytes   uint64 header length L
    L bytes   UTF-8 JSON header: grid {origin, spacing, counts},
              times {t_start, dt, n_samples}, interpolation, n_active,
              c, endianness "<", blocks [{name, dtype, shape}, ...]
    blocks in header order, C-contiguous:
              active  int64   (n_active,)          flat node indices
              rho     float64 (n_samples, n_active)
              J       float64 (n_samples, n_active, 3)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericalRejection
from .gridlab import SphereQuadrature, TimeSampling, UniformGrid3

MAGIC = b"SEMIRADH"
ACTIVE_THRESHOLD = 1e-13


@dataclass
class CurrentHistory:
    grid: UniformGrid3
    times: TimeSampling
    active: np.ndarray       # flat node indices
    rho: np.ndarray          # (T, A)
    J: np.ndarray            # (T, A, 3)
    interpolation: str = "cubic"
    c: float = 1.0

    def __post_init__(self):
        if self.interpolation not in ("cubic", "linear"):
            raise ValueError("interpolation must be 'cubic' or 'linear'")
        T, A = self.times.n_samples, len(self.active)
        if self.rho.shape != (T, A) or self.J.shape != (T, A, 3):
            raise ValueError("snapshot arrays do not match times x active nodes")
        if not (np.all(np.isfinite(self.rho)) and np.all(np.isfinite(self.J))):
            raise NumericalRejection("history contains non-finite values")
        self._points = self.grid.points().reshape(-1, 3)[self.active]

    @property
    def points(self) -> np.ndarray:
        return self._points

    # -- construction ------------------------------------------------------------

    @classmethod
    def from_arrays(cls, grid, times, rho, J, interpolation="cubic", c=1.0, threshold=ACTIVE_THRESHOLD):
        """From full snapshots ``rho[T, *counts]`` and ``J[T, *counts, 3]``."""
        rho = np.asarray(rho, float).reshape(times.n_samples, -1)
        J = np.asarray(J, float).reshape(times.n_samples, -1, 3)
        mag = np.maximum(np.abs(rho), np.linalg.norm(J, axis=-1)).max(axis=0)
        peak = mag.max()
        active = np.flatnonzero(mag > threshold * peak) if peak > 0 else np.zeros(0, np.int64)
        return cls(grid, times, active.astype(np.int64), rho[:, active].copy(), J[:, active].copy(),
                   interpolation, c)

    @classmethod
    def from_source(cls, source, grid, times, interpolation="cubic", threshold=ACTIVE_THRESHOLD,
                    probe_stride: int = 8):
        """Sample ``source.arrays`` at every time, storing only active nodes.

        The active set is found from every ``probe_stride``-th snapshot
        (plus the last) and dilated by two nodes; every snapshot then checks
        that nothing outside it exceeds ``threshold`` of the peak."""
        ts = times.times
        probe = sorted(set(range(0, len(ts), probe_stride)) | {len(ts) - 1})
        mag = np.zeros(grid.counts)
        for i in probe:
            r, J = source.arrays(float(ts[i]), grid)
            mag = np.maximum(mag, np.maximum(np.abs(r), np.linalg.norm(J, axis=-1)))
        peak = mag.max()
        keep = mag > threshold * peak if peak > 0 else np.zeros(grid.counts, bool)
        for _ in range(2):
            grown = keep.copy()
            for ax in range(3):
                grown |= np.roll(keep, 1, ax) | np.roll(keep, -1, ax)
            keep = grown
        active = np.flatnonzero(keep.ravel()).astype(np.int64)
        outside = ~keep.ravel()
        rho = np.empty((len(ts), len(active)))
        Jh = np.empty((len(ts), len(active), 3))
        for i, t in enumerate(ts):
            r, J = source.arrays(float(t), grid)
            r, J = r.ravel(), J.reshape(-1, 3)
            if outside.any():
                leak = max(np.abs(r[outside]).max(), np.linalg.norm(J[outside], axis=-1).max())
                if leak > threshold * peak:
                    raise NumericalRejection(
                        f"source leaves the active node set at t={t:g} ({leak / peak:.2e} of peak); "
                        f"reduce probe_stride")
            rho[i] = r[active]
            Jh[i] = J[active]
        return cls(grid, times, active, rho, Jh, interpolation, float(getattr(source, "c", 1.0)))

    # -- interpolation ---------------------------------------------------------------------

    def _stencil(self, t_r: np.ndarray):
        ts = self.times
        s = (t_r - ts.t_start) / ts.dt
        i = np.floor(s).astype(np.int64)
        u = s - i
        if self.interpolation == "cubic":
            offsets = (-1, 0, 1, 2)
            w = np.stack([-u * (u - 1) * (u - 2) / 6, (u + 1) * (u - 1) * (u - 2) / 2,
                          -(u + 1) * u * (u - 2) / 2, (u + 1) * u * (u - 1) / 6])
            dw = np.stack([-(3 * u**2 - 6 * u + 2) / 6, (3 * u**2 - 4 * u - 1) / 2,
                           -(3 * u**2 - 2 * u - 2) / 2, (3 * u**2 - 1) / 6]) / ts.dt
        else:
            offsets = (0, 1)
            w = np.stack([1 - u, u])
            dw = np.stack([-np.ones_like(u), np.ones_like(u)]) / ts.dt
        lo, hi = int(i.min()) + offsets[0], int(i.max()) + offsets[-1]
        if lo < 0 or hi > ts.n_samples - 1:
            need_lo = ts.t_start + (int(i.min()) + offsets[0]) * ts.dt
            need_hi = ts.t_start + (int(i.max()) + offsets[-1]) * ts.dt
            raise NumericalRejection(
                f"history window underflow: need samples covering [{need_lo:g}, {need_hi:g}], "
                f"stored [{ts.times[0]:g}, {ts.times[-1]:g}]")
        return i, offsets, w, dw

    def at_retarded(self, t_r: np.ndarray):
        """(rho, rho_t, J, J_t) at per-node times ``t_r`` (shape (A,))."""
        i, offsets, w, dw = self._stencil(t_r)
        cols = np.arange(len(self.active))
        rho = rho_t = 0.0
        J = J_t = 0.0
        for k, o in enumerate(offsets):
            r = self.rho[i + o, cols]
            j = self.J[i + o, cols]
            rho = rho + w[k] * r
            rho_t = rho_t + dw[k] * r
            J = J + w[k][:, None] * j
            J_t = J_t + dw[k][:, None] * j
        return rho, rho_t, J, J_t

    def required_window(self, x_obs, t_obs: float) -> tuple:
        R = np.linalg.norm(np.asarray(x_obs, float) - self.points, axis=-1)
        return float(t_obs - R.max() / self.c), float(t_obs - R.min() / self.c)

    # -- serialization -------------------------------------------------------------------------

    def save(self, path) -> None:
        g, ts = self.grid, self.times
        blocks = [("active", self.active.astype("<i8")), ("rho", self.rho.astype("<f8")),
                  ("J", self.J.astype("<f8"))]
        header = {
            "grid": {"origin": list(g.origin), "spacing": list(g.spacing), "counts": list(g.counts)},
            "times": {"t_start": ts.t_start, "dt": ts.dt, "n_samples": ts.n_samples},
            "interpolation": self.interpolation, "n_active": int(len(self.active)), "c": self.c,
            "endianness": "<",
            "blocks": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in blocks],
        }
        raw = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(np.uint64(len(raw)).astype("<u8").tobytes())
            f.write(raw)
            for _, a in blocks:
                f.write(np.ascontiguousarray(a).tobytes())

    @classmethod
    def load(cls, path) -> "CurrentHistory":
        data = Path(path).read_bytes()
        if data[:8] != MAGIC:
            raise ValueError(f"{path}: not a current-history container")
        n = int(np.frombuffer(data[8:16], "<u8")[0])
        header = json.loads(data[16:16 + n])
        pos = 16 + n
        arrays = {}
        for b in header["blocks"]:
            dt = np.dtype(b["dtype"])
            count = int(np.prod(b["shape"]))
            if pos + count * dt.itemsize > len(data):
                raise ValueError(f"{path}: truncated block {b['name']!r}")
            arrays[b["name"]] = np.frombuffer(data, dt, count, pos).reshape(b["shape"]).astype(dt.newbyteorder("="))
            pos += count * dt.itemsize
        g, t = header["grid"], header["times"]
        grid = UniformGrid3(tuple(g["origin"]), tuple(g["spacing"]), tuple(g["counts"]))
        times = TimeSampling(t["t_start"], t["dt"], t["n_samples"])
        return cls(grid, times, arrays["active"], arrays["rho"], arrays["J"],
                   header["interpolation"], header["c"])


# -- fields ------------------------------------------------------------------------------------

def _geometry(history: CurrentHistory, x_obs):
    d = np.asarray(x_obs, float) - history.points
    R = np.linalg.norm(d, axis=-1)
    if np.any(R == 0):
        raise NumericalRejection("observation point coincides with a source node")
    return d / R[:, None], R


def retarded_potential(history: CurrentHistory, x_obs, t_obs: float):
    """(Phi, A) at one observation point."""
    if len(history.active) == 0:
        return 0.0, np.zeros(3)
    n, R = _geometry(history, x_obs)
    rho, _, J, _ = history.at_retarded(t_obs - R / history.c)
    dv = history.grid.cell_volume
    return float(np.sum(rho / R) * dv), np.sum(J / R[:, None], axis=0) * dv / history.c


def exact_fields(history: CurrentHistory, x_obs, t_obs: float):
    """Exact (E, B) at one observation point, all retardation and 1/R^2 terms kept."""
    if len(history.active) == 0:
        return np.zeros(3), np.zeros(3)
    c = history.c
    n, R = _geometry(history, x_obs)
    rho, rho_t, J, J_t = history.at_retarded(t_obs - R / c)
    dv = history.grid.cell_volume
    Rc = R[:, None]
    B = np.sum(np.cross(n, -J / Rc**2 - J_t / (Rc * c)), axis=0) * dv / c
    E = np.sum(n * (rho / R**2 + rho_t / (R * c))[:, None] - J_t / (Rc * c**2), axis=0) * dv
    return E, B


def exact_farfield_B(history: CurrentHistory, x_obs, t_obs: float) -> np.ndarray:
    return exact_fields(history, x_obs, t_obs)[1]


@dataclass
class FluxScan:
    radii: np.ndarray
    t_obs: np.ndarray          # observation time per radius: t0 + R0/c
    power: np.ndarray          # sphere-integrated (c/4pi) E x B . n
    b_rms: np.ndarray          # sqrt(mean |B|^2 over the sphere)
    b_exponent: float          # -d log b_rms / d log R0
    power_exponent: float

    def decay_ratio(self, i: int = 0) -> float:
        """|P(R_i)| / |P(2 R_i)| when 2 R_i is among the radii."""
        j = int(np.argmin(np.abs(self.radii - 2 * self.radii[i])))
        if not np.isclose(self.radii[j], 2 * self.radii[i]):
            raise ValueError("2 R0 is not among the scanned radii")
        return abs(self.power[i]) / abs(self.power[j]) if self.power[j] != 0 else np.inf


def _loglog_slope(x, y) -> float:
    y = np.asarray(y, float)
    if np.any(y <= 0):
        return float("nan")
    return float(-np.polyfit(np.log(x), np.log(y), 1)[0])


def flux_scan(history: CurrentHistory, radii, t0: float, n_theta: int = 8, n_phi: int = 16,
              center=(0.0, 0.0, 0.0)) -> FluxScan:
    """Exact Poynting power through spheres of the given radii.

    Each sphere is observed at ``t0 + R0/c`` so every radius sees the
    source at the same retarded epoch."""
    radii = np.asarray(radii, float)
    c = history.c
    P, brms, tobs = [], [], []
    for R0 in radii:
        quad = SphereQuadrature.build(R0, n_theta, n_phi)
        t = t0 + R0 / c
        E = np.zeros((len(quad.weights), 3))
        B = np.zeros_like(E)
        for d, n in enumerate(quad.directions):
            E[d], B[d] = exact_fields(history, np.asarray(center) + R0 * n, t)
        S = (c / (4 * np.pi)) * np.einsum("di,di->d", np.cross(E, B), quad.directions)
        P.append(float(quad.integrate(S)))
        brms.append(float(np.sqrt(quad.integrate(np.sum(B**2, -1)) / (4 * np.pi * R0**2))))
        tobs.append(t)
    return FluxScan(radii, np.array(tobs), np.array(P), np.array(brms),
                    _loglog_slope(radii, brms), _loglog_slope(radii, np.abs(P)))


# -- calibration source ---------------------------------------------------------------------------

def dipole_history(grid: UniformGrid3, times: TimeSampling, I0: float = 1.0, omega: float = 0.5,
                   width: float = 0.3, c: float = 1.0) -> CurrentHistory:
    """Oscillating Gaussian current J = z I0 cos(omega t) g(x) with the
    charge density rho = -(I0/omega) sin(omega t) dg/dz that conserves it."""
    X, Y, Z = grid.mesh()
    g = np.exp(-(X**2 + Y**2 + Z**2) / (2 * width**2)) / (2 * np.pi * width**2) ** 1.5
    dgz = -Z / width**2 * g
    t = times.times
    rho = -(I0 / omega) * np.sin(omega * t)[:, None, None, None] * dgz[None]
    J = np.zeros(rho.shape + (3,))
    J[..., 2] = I0 * np.cos(omega * t)[:, None, None, None] * g[None]
    return CurrentHistory.from_arrays(grid, times, rho, J, c=c)


def dipole_field_B(x_obs, t_obs: float, I0: float = 1.0, omega: float = 0.5, c: float = 1.0) -> np.ndarray:
    """Point-dipole B with dp/dt = z I0 cos(omega t): (p'/cR^2 + p''/c^2 R) x n."""
    x = np.asarray(x_obs, float)
    R = np.linalg.norm(x)
    n = x / R
    tr = t_obs - R / c
    p1 = np.array([0, 0, I0 * np.cos(omega * tr)])
    p2 = np.array([0, 0, -I0 * omega * np.sin(omega * tr)])
    return np.cross(p1 / (c * R**2) + p2 / (c**2 * R), n)
