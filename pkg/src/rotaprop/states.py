"""Test-state roster.

Every state is a Gaussian radial profile times a band-limited angular
polynomial, normalized in the grid quadrature.  Random states follow a
seed-only construction so other implementations can regenerate them:

    rng = numpy.random.default_rng(seed)
    c_m = rng.standard_normal() + 1j * rng.standard_normal(),  m = -3..3 in order
    psi = exp(-r^2/2) * sum_m c_m r^|m| e^{i m phi}
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .grid import Field, PolarGrid, norm, sample, to_modes

RANDOM_DEGREE = 3


def normalized(f: Field) -> Field:
    n = norm(f)
    if n == 0.0:
        raise ValueError("cannot normalize the zero field")
    return f * (1.0 / n)


def gauss_l0(grid: PolarGrid) -> Field:
    return to_modes(normalized(sample(grid, lambda x, y: np.exp(-(x**2 + y**2) / 2))))


def gauss_l2(grid: PolarGrid) -> Field:
    return to_modes(normalized(sample(grid, lambda x, y: (x + 1j * y) ** 2 * np.exp(-(x**2 + y**2) / 2))))


def gauss_mixed(grid: PolarGrid) -> Field:
    """Displaced Gaussian; carries every angular mode."""
    return to_modes(normalized(sample(grid, lambda x, y: np.exp(-((x - 0.6) ** 2 + (y + 0.3) ** 2) / 2))))


def random_state(grid: PolarGrid, seed: int, degree: int = RANDOM_DEGREE) -> Field:
    rng = np.random.default_rng(seed)
    ms = range(-degree, degree + 1)
    coeffs = {m: rng.standard_normal() + 1j * rng.standard_normal() for m in ms}

    def f(x, y):
        r2 = x**2 + y**2
        z, zb = x + 1j * y, x - 1j * y
        # r^|m| e^{i m phi} = z^m (m >= 0) or conj(z)^|m|
        return np.exp(-r2 / 2) * sum(c * (z**m if m >= 0 else zb ** (-m)) for m, c in coeffs.items())

    return to_modes(normalized(sample(grid, f)))


NAMED: dict[str, Callable[[PolarGrid], Field]] = {
    "gauss_l0": gauss_l0,
    "gauss_l2": gauss_l2,
    "gauss_mixed": gauss_mixed,
}

# angular mode carried by the P_l-pure roster entries
PURE_MODE = {"gauss_l0": 0, "gauss_l2": 2}


def build_state(grid: PolarGrid, state_id: str, seed: int = 0) -> Field:
    """Named state, or ``random:<k>`` for the k-th random state of ``seed``."""
    if state_id in NAMED:
        return NAMED[state_id](grid)
    if state_id.startswith("random:"):
        k = int(state_id.split(":", 1)[1])
        return random_state(grid, seed * 1000 + k)
    raise KeyError(f"unknown test state {state_id!r}")
