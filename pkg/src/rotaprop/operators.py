"""Kinetic energies, rotations, angular projections and rotating potentials.

A potential is decomposed once into angular Fourier profiles v_m(r).  The
m = 0 profile is the rotational average (the averaged potential), the m != 0
profiles form the remainder W_0.  All time dependence of the rotating
potential is a phase on the modes:

    V_{omega t}(r, phi) = sum_m v_m(r) exp(i m (phi - omega t)).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import optimize, special

from .grid import (
    Field,
    PolarGrid,
    Rep,
    RepresentationError,
    angles_to_modes,
    as_modes,
    from_modes,
    modes_to_angles,
    norm,
    to_modes,
)

MODE_TAIL_TOL = 1e-12
RECONSTRUCTION_TOL = 1e-10


class PotentialResolutionError(ValueError):
    """The potential has angular content the grid cannot carry."""


class ZeroFrequencyError(ValueError):
    """omega == 0: the oscillatory closed form does not apply."""


@dataclass(frozen=True)
class KineticSpec:
    kind: str = "nonrelativistic"
    mass: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        if self.kind == "nonrelativistic":
            if not self.mass > 0:
                raise ValueError("mass must be positive")
        elif self.kind == "power":
            if not self.beta > 1:
                raise ValueError("power-law kinetic energy needs beta > 1")
        else:
            raise ValueError(f"unknown kinetic kind {self.kind!r}")

    @classmethod
    def nonrelativistic(cls, mass: float = 1.0) -> "KineticSpec":
        return cls("nonrelativistic", mass=mass)

    @classmethod
    def power_law(cls, beta: float) -> "KineticSpec":
        return cls("power", beta=beta)

    def h(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "nonrelativistic":
            return p**2 / (2.0 * self.mass)
        return p**self.beta / self.beta


# --- potentials -------------------------------------------------------------


@dataclass(frozen=True)
class OffsetGaussian:
    """A exp(-|x - d e_1|^2 / sigma^2); rotationally invariant when d = 0."""

    amplitude: float = 1.0
    distance: float = 1.0
    width: float = 1.0

    bounded = True

    @property
    def sup_bound(self) -> float:
        return abs(self.amplitude)

    def __call__(self, x, y):
        return self.amplitude * np.exp(-((x - self.distance) ** 2 + y**2) / self.width**2)

    def average(self, r):
        """Closed-form rotational average A e^{-(r^2+d^2)/s^2} I_0(2rd/s^2)."""
        s2 = self.width**2
        z = 2.0 * r * self.distance / s2
        return self.amplitude * np.exp(-((r - self.distance) ** 2) / s2) * special.ive(0, z)


@dataclass(frozen=True)
class Fan:
    """f(r) cos(K phi) with f(r) = A (r/r0)^K exp(K (1 - (r/r0)^2) / 2).

    The envelope peaks at r = r0 with value A, and vanishes like r^K at the
    origin so the potential is smooth.
    """

    amplitude: float = 0.5
    harmonic: int = 3
    r_peak: float = 1.5

    bounded = True

    def __post_init__(self):
        if self.harmonic < 1:
            raise ValueError("fan harmonic must be >= 1")

    @property
    def sup_bound(self) -> float:
        return abs(self.amplitude)

    def envelope(self, r):
        q = np.asarray(r, dtype=float) / self.r_peak
        return self.amplitude * q**self.harmonic * np.exp(self.harmonic * (1.0 - q**2) / 2.0)

    def __call__(self, x, y):
        r = np.hypot(x, y)
        return self.envelope(r) * np.cos(self.harmonic * np.arctan2(y, x))


@dataclass(frozen=True, eq=False)
class Sampled:
    """Potential given by its values on the (N_r, N_phi) grid."""

    values: np.ndarray

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    @property
    def sup_bound(self) -> float:
        return float(np.abs(self.values).max())


PotentialSpec = Union[OffsetGaussian, Fan, Sampled]


@dataclass(frozen=True, eq=False)
class AngularPotential:
    """Angular Fourier profiles v_m(r_i) of a real potential, m = -M..M."""

    grid: PolarGrid
    modes: np.ndarray
    spec: PotentialSpec | None = None

    @property
    def vbar(self) -> np.ndarray:
        """Rotational average on the radial nodes."""
        return self.modes[:, self.grid.M].real.copy()

    @property
    def remainder_modes(self) -> np.ndarray:
        w = self.modes.copy()
        w[:, self.grid.M] = 0.0
        return w

    @property
    def is_radial(self) -> bool:
        return not np.any(self.remainder_modes)

    def radial_part(self) -> "AngularPotential":
        only = np.zeros_like(self.modes)
        only[:, self.grid.M] = self.modes[:, self.grid.M]
        return AngularPotential(self.grid, only, None)

    def sup_vbar(self) -> float:
        return float(np.abs(self.vbar).max())


def decompose_potential(spec: PotentialSpec, grid: PolarGrid) -> AngularPotential:
    if isinstance(spec, Sampled):
        values = np.asarray(spec.values, dtype=float)
        if values.shape != (grid.N_r, grid.N_phi):
            raise ValueError("sampled potential does not match the grid")
    else:
        x, y = grid.cartesian()
        values = np.asarray(spec(x, y), dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("potential has non-finite samples")

    full = np.fft.fft(values, axis=1) / grid.N_phi
    freqs = np.fft.fftfreq(grid.N_phi, 1.0 / grid.N_phi)
    tail = np.abs(full[:, np.abs(freqs) > grid.M / 2])
    if tail.size and tail.max() >= MODE_TAIL_TOL:
        raise PotentialResolutionError(
            f"angular modes beyond |m| > M/2 = {grid.M / 2} reach {tail.max():.3e}; "
            "increase N_phi"
        )
    modes = full[:, grid.fft_index]
    # exact conjugate symmetry of a real potential; rounding noise dropped
    modes = 0.5 * (modes + np.conj(modes[:, ::-1]))
    scale = max(1.0, float(np.abs(values).max()))
    modes[np.abs(modes) < MODE_TAIL_TOL * 1e-3 * scale] = 0.0
    ap = AngularPotential(grid, modes, spec)
    err = np.abs(potential_at_time(ap, 0.0, 0.0) - values).max()
    if err > RECONSTRUCTION_TOL * max(1.0, np.abs(values).max()):
        raise PotentialResolutionError(f"mode reconstruction error {err:.3e}")
    return ap


def potential_at_time(ap: AngularPotential, omega: float, t: float) -> np.ndarray:
    """Samples of V_{omega t} on the (N_r, N_phi) grid."""
    phase = np.exp(-1j * ap.grid.m_values * omega * t)
    return modes_to_angles(ap.grid, ap.modes * phase).real


def remainder_at_time(ap: AngularPotential, omega: float, t: float) -> np.ndarray:
    phase = np.exp(-1j * ap.grid.m_values * omega * t)
    return modes_to_angles(ap.grid, ap.remainder_modes * phase).real


def W_time_integral(ap: AngularPotential, omega: float, t1: float, t2: float) -> np.ndarray:
    """Closed form of int_{t1}^{t2} W_{omega s} ds as samples on the grid."""
    if omega == 0:
        raise ZeroFrequencyError("omega = 0: use (t2 - t1) * W_0 instead")
    m = ap.grid.m_values
    factor = np.zeros(m.shape, dtype=complex)
    nz = m != 0
    factor[nz] = (np.exp(-1j * m[nz] * omega * t1) - np.exp(-1j * m[nz] * omega * t2)) / (
        1j * m[nz] * omega
    )
    return modes_to_angles(ap.grid, ap.remainder_modes * factor).real


def sup_norm_W(ap: AngularPotential, oversample: int = 4) -> float:
    """Sup-norm of the remainder W_0 over an oversampled position grid.

    Analytic potentials are re-evaluated on a grid ``oversample`` times finer
    in r and phi and the best sample is polished with a local search.
    Sampled potentials are oversampled in phi only (trigonometric
    interpolation at the radial nodes).
    """
    g = ap.grid
    if ap.is_radial:
        return 0.0
    n_phi = oversample * g.N_phi
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    on_nodes = _trig_eval(ap.remainder_modes, g.m_values, phis)
    best = float(np.abs(on_nodes).max())
    spec = ap.spec
    if spec is None or isinstance(spec, Sampled):
        return best

    def w_at(r: np.ndarray) -> np.ndarray:
        rr = r[:, None]
        vals = spec(rr * np.cos(phis)[None, :], rr * np.sin(phis)[None, :])
        return vals - vals.mean(axis=1, keepdims=True)

    radii = np.linspace(0.0, g.R_max, oversample * g.N_r + 1)
    dense = np.abs(w_at(radii))
    i, k = np.unravel_index(np.argmax(dense), dense.shape)
    best = max(best, float(dense[i, k]))

    def neg(z):
        r, phi = float(np.clip(z[0], 0.0, g.R_max)), z[1]
        angles = phi + phis
        vals = spec(r * np.cos(angles), r * np.sin(angles))
        return -abs(vals[0] - vals.mean())

    res = optimize.minimize(neg, x0=[radii[i], phis[k]], method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 2000})
    return max(best, float(-res.fun))


def _trig_eval(modes: np.ndarray, m: np.ndarray, phis: np.ndarray) -> np.ndarray:
    return (modes @ np.exp(1j * np.outer(m, phis))).real


# --- operators on fields -----------------------------------------------------


def apply_h0(f: Field, kinetic: KineticSpec, t: float) -> Field:
    """Multiply momentum profiles by exp(-i t h(p))."""
    if f.rep is not Rep.MOMENTUM:
        raise RepresentationError("apply_h0 needs the momentum representation")
    phase = np.exp(-1j * t * kinetic.h(f.grid.p_nodes))
    return f.with_data(f.data * phase[:, None])


def apply_rotation(f: Field, theta: float) -> Field:
    """R(theta) psi (x) = psi(R(theta)^{-1} x): mode m picks up exp(-i theta m)."""
    if f.rep is Rep.POSITION:
        raise RepresentationError("apply_rotation needs a mode representation")
    return f.with_data(f.data * np.exp(-1j * theta * f.grid.m_values)[None, :])


def apply_J(f: Field) -> Field:
    if f.rep is Rep.POSITION:
        raise RepresentationError("apply_J needs a mode representation")
    return f.with_data(f.data * f.grid.m_values[None, :])


def project(f: Field, j: int) -> Field:
    if f.rep is Rep.POSITION:
        raise RepresentationError("project needs a mode representation")
    col = f.grid.mode_column(j)
    out = np.zeros_like(f.data)
    out[:, col] = f.data[:, col]
    return f.with_data(out)


def multiply(f: Field, values: np.ndarray) -> Field:
    """Multiply by a function sampled on the position grid; result in modes."""
    pos = from_modes(as_modes(f))
    return to_modes(pos.with_data(pos.data * values))


def verify_diag_offdiag(ap: AngularPotential, psi: Field, j: int) -> tuple[float, float]:
    """(||P_j Vbar psi - Vbar P_j psi||, ||P_j W_0 P_j psi||)."""
    psi = as_modes(psi)
    vbar = np.repeat(ap.vbar[:, None], ap.grid.N_phi, axis=1)
    w0 = remainder_at_time(ap, 0.0, 0.0)
    commutator = project(multiply(psi, vbar), j) - multiply(project(psi, j), vbar)
    diag_w = project(multiply(project(psi, j), w0), j)
    return norm(commutator), norm(diag_w)


def potential_modes_from_function(grid: PolarGrid, func) -> np.ndarray:
    """Angular profiles of ``func(x, y)`` sampled on the grid (no checks)."""
    x, y = grid.cartesian()
    return angles_to_modes(grid, np.asarray(func(x, y), dtype=complex))
