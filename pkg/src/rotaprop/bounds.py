"""Sampled checks of local relative bounds for square-supported potentials.

Everything lives on a Cartesian box in local coordinates y = x - xbar around
a lattice point xbar, with cell-centred nodes (so a point singularity at
y = 0 is never sampled) and FFT differentiation.  With pbar = omega xbar_perp,

    H0 - omega xbar_perp . p      has symbol  |k|^2/2 - pbar . k,
    J - xbar_perp . p             equals      y_perp . p,

where v_perp = (-v_2, v_1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .tables import Table

PARTITION_TOL = 1e-10
IDENTITY_TOL = 1e-6
BOX_LEAK_TOL = 1e-12


# --- smooth cut-offs ----------------------------------------------------------


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, and step(x) + step(1-x) = 1."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[x >= 1] = 1.0
    mid = (x > 0) & (x < 1)
    xm = x[mid]
    a, b = np.exp(-1.0 / xm), np.exp(-1.0 / (1.0 - xm))
    out[mid] = a / (a + b)
    return out


def smooth_step_derivative(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    mid = (x > 0) & (x < 1)
    xm = x[mid]
    a, b = np.exp(-1.0 / xm), np.exp(-1.0 / (1.0 - xm))
    out[mid] = a * b * (1.0 / xm**2 + 1.0 / (1.0 - xm) ** 2) / (a + b) ** 2
    return out


BUMP_INNER, BUMP_OUTER = 0.52, 1.0


def bump_1d(s, inner: float = BUMP_INNER, outer: float = BUMP_OUTER):
    """1 for |s| <= inner, 0 for |s| >= outer, smooth in between."""
    return 1.0 - smooth_step((np.abs(s) - inner) / (outer - inner))


def bump_1d_derivative(s, inner: float = BUMP_INNER, outer: float = BUMP_OUTER):
    s = np.asarray(s, dtype=float)
    return -np.sign(s) * smooth_step_derivative((np.abs(s) - inner) / (outer - inner)) / (outer - inner)


def local_cutoff(y1, y2):
    """The square-local cut-off: 1 near the unit square, supported in the square of side 2."""
    return bump_1d(y1) * bump_1d(y2)


def local_cutoff_gradient(y1, y2):
    return bump_1d_derivative(y1) * bump_1d(y2), bump_1d(y1) * bump_1d_derivative(y2)


def partition_profile(s):
    """c(s) = cos(pi/2 * step) with c(s)^2 + c(s-2)^2 = 1 on [0, 2]; 1 for |s| <= 0.6."""
    return np.cos(0.5 * np.pi * smooth_step((np.abs(s) - 0.6) / 0.8))


def partition_cutoff(y1, y2):
    return partition_profile(y1) * partition_profile(y2)


# --- Cartesian box ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Box:
    side: float = 4.0
    N: int = 512

    @property
    def h(self) -> float:
        return self.side / self.N

    @property
    def axis(self) -> np.ndarray:
        return -self.side / 2 + (np.arange(self.N) + 0.5) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        k = 2 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        return np.meshgrid(k, k, indexing="ij")

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(f) ** 2)) * self.h)

    def apply_symbol(self, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(symbol * np.fft.fft2(f))

    def momentum(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k1, k2 = self.wavenumbers()
        return self.apply_symbol(f, k1), self.apply_symbol(f, k2)


def pbar_of(center: Sequence[float], omega: float) -> np.ndarray:
    return omega * np.array([-center[1], center[0]], dtype=float)


@dataclass(frozen=True, eq=False)
class SquarePotential:
    """V on the unit square around the lattice point ``center``, zero outside."""

    center: tuple[int, int]
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    box: Box = field(default_factory=Box)

    def __post_init__(self):
        if any(int(c) != c for c in self.center):
            raise ValueError("center must be a lattice point")

    @property
    def values(self) -> np.ndarray:
        y1, y2 = self.box.mesh()
        inside = (np.abs(y1) <= 0.5) & (np.abs(y2) <= 0.5)
        out = np.zeros_like(y1)
        out[inside] = self.func(y1[inside], y2[inside])
        if not np.all(np.isfinite(out)):
            raise ValueError("potential has non-finite samples")
        return out

    @property
    def l2_norm(self) -> float:
        return self.box.norm(self.values)

    def cutoff(self) -> np.ndarray:
        return local_cutoff(*self.box.mesh())


def inverse_sqrt_singularity(y1, y2):
    return (y1**2 + y2**2) ** -0.25


def bounded_square(level: float):
    return lambda y1, y2: np.full_like(y1, level)


@dataclass(frozen=True)
class WavePacket:
    """exp(-|y - c|^2 / (2 w^2) + i (k . y + phase)) in local coordinates."""

    c: tuple[float, float]
    w: float
    k: tuple[float, float]
    phase: float = 0.0

    def __call__(self, y1, y2):
        g = np.exp(-((y1 - self.c[0]) ** 2 + (y2 - self.c[1]) ** 2) / (2 * self.w**2))
        return g * np.exp(1j * (self.k[0] * y1 + self.k[1] * y2 + self.phase))

    def momentum(self, y1, y2):
        """Exact (-i d/dy1, -i d/dy2) applied to the packet."""
        v = self(y1, y2)
        return ((self.k[0] + 1j * (y1 - self.c[0]) / self.w**2) * v,
                (self.k[1] + 1j * (y2 - self.c[1]) / self.w**2) * v)


def random_test_set(count: int = 32, seed: int = 0, k_max: float = 4.0) -> list[WavePacket]:
    """Seeded packets with random centres, widths and plane-wave modulation.

    The set is fixed in local coordinates, so every centre sees the same states.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        c = rng.uniform(-0.8, 0.8, size=2)
        w = rng.uniform(0.2, 0.6)
        k = rng.uniform(-k_max, k_max, size=2)
        out.append(WavePacket((float(c[0]), float(c[1])), float(w), (float(k[0]), float(k[1])),
                              float(rng.uniform(0, 2 * np.pi))))
    return out


def _check_inputs(test_set, a: float, box: Box, chi: np.ndarray) -> None:
    if not test_set:
        raise ValueError("test set is empty")
    if not a > 0:
        raise ValueError("a must be positive")
    y1, y2 = box.mesh()
    for psi in test_set:
        f = np.abs(chi * psi(y1, y2))
        edge = max(f[0].max(), f[-1].max(), f[:, 0].max(), f[:, -1].max())
        if edge > BOX_LEAK_TOL * max(f.max(), 1e-300):
            raise ValueError("test state support reaches the edge of the computational box")


def _b_emp(V: np.ndarray, chi: np.ndarray, test_set, a: float, generator, box: Box) -> float:
    best = 0.0
    y1, y2 = box.mesh()
    for psi in test_set:
        f = chi * psi(y1, y2)
        n = box.norm(f)
        if n == 0:
            continue
        lhs = box.norm(V * f)
        gap = lhs - a * box.norm(generator(f))
        best = max(best, gap / n)
    return best


def linear_generator(box: Box, pbar: np.ndarray):
    k1, k2 = box.wavenumbers()
    symbol = 0.5 * (k1**2 + k2**2) - (pbar[0] * k1 + pbar[1] * k2)
    return lambda f: box.apply_symbol(f, symbol)


def rotation_generator(box: Box, pbar: np.ndarray, omega: float):
    """H0 - omega J in local coordinates: the linear generator minus omega y_perp . p."""
    lin = linear_generator(box, pbar)
    y1, y2 = box.mesh()

    def apply(f):
        p1, p2 = box.momentum(f)
        return lin(f) - omega * (-y2 * p1 + y1 * p2)

    return apply


def kato_bound_sample(V: SquarePotential, a: float, omega: float, test_set) -> float:
    """max over the test set of [||V chi psi|| - a ||(H0 - omega xbar_perp.p) chi psi||]_+ / ||chi psi||."""
    chi = V.cutoff()
    _check_inputs(test_set, a, V.box, chi)
    gen = linear_generator(V.box, pbar_of(V.center, omega))
    return _b_emp(V.values, chi, test_set, a, gen, V.box)


def kato_bound_J_sample(V: SquarePotential, a: float, omega: float, test_set) -> tuple[float, float]:
    """Same with H0 - omega J; also returns the residual of the local identity

        (J - xbar_perp.p)(chi psi) = -i (y_perp . grad chi) psi + chi (y_perp . p) psi

    relative to ||(J - xbar_perp.p)(chi psi)||, maximized over the test set.
    """
    box = V.box
    chi = V.cutoff()
    _check_inputs(test_set, a, box, chi)
    gen = rotation_generator(box, pbar_of(V.center, omega), omega)
    b = _b_emp(V.values, chi, test_set, a, gen, box)
    return b, identity_residual(box, test_set)


def identity_residual(box: Box, test_set) -> float:
    y1, y2 = box.mesh()
    chi = local_cutoff(y1, y2)
    g1, g2 = local_cutoff_gradient(y1, y2)
    worst = 0.0
    for packet in test_set:
        psi = packet(y1, y2)
        p1, p2 = box.momentum(chi * psi)
        lhs = -y2 * p1 + y1 * p2
        q1, q2 = packet.momentum(y1, y2)
        rhs = -1j * (-y2 * g1 + y1 * g2) * psi + chi * (-y2 * q1 + y1 * q2)
        worst = max(worst, box.norm(lhs - rhs) / max(box.norm(lhs), 1e-300))
    return worst


# --- symbol integral ----------------------------------------------------------


def symbol_closed_form(pbar_norm: float) -> float:
    """pi {pi/2 + arctan(|pbar|^2/2)}."""
    return math.pi * (math.pi / 2 + math.atan(pbar_norm**2 / 2))


def symbol_closed_form_a(a: float, pbar_norm: float) -> float:
    """Exact value of the integral for general a: pi {pi/2 + arctan(a^2 |pbar|^2/2)}."""
    return math.pi * (math.pi / 2 + math.atan(a * a * pbar_norm**2 / 2))


def symbol_integral(a: float, pbar_norm: float, n_angle: int = 16) -> float:
    """int d^2p / ({a[(p - pbar)^2 - |pbar|^2/2]}^2 + 1/a^2) by quadrature.

    Polar coordinates around pbar: trapezoid in the angle, adaptive
    Gauss-Kronrod in the radius with the resonance r^2 = |pbar|^2/2 and the
    tail split off.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    pbar = np.array([pbar_norm, 0.0])
    lam = pbar_norm**2 / 2
    thetas = 2 * np.pi * np.arange(n_angle) / n_angle

    def integrand(r: float) -> float:
        q = pbar[None, :] + r * np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        d2 = np.sum((q - pbar) ** 2, axis=1)
        vals = 1.0 / ((a * (d2 - lam)) ** 2 + 1.0 / a**2)
        return float(r * vals.mean() * 2 * np.pi)

    r0 = math.sqrt(lam)
    width = 1.0 / (a * a * max(r0, 1.0))
    cuts = sorted({0.0, max(0.0, r0 - 10 * width), r0, r0 + 10 * width, r0 + 1.0 + 10.0 / a})
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi > lo:
            total += integrate.quad(integrand, lo, hi, epsabs=0, epsrel=1e-13, limit=400)[0]
    total += integrate.quad(integrand, cuts[-1], np.inf, epsabs=0, epsrel=1e-13, limit=400)[0]
    return total


# --- checkerboard -----------------------------------------------------------

PARITIES = ((0, 0), (1, 1), (0, 1), (1, 0))


@dataclass
class Checkerboard:
    components: dict[tuple[int, int], np.ndarray]
    square_norms: dict[tuple[int, int], float]
    origin: tuple[float, float]
    spacing: float

    def total(self) -> np.ndarray:
        return sum(self.components.values())

    def support_squares(self, parity) -> list[tuple[int, int]]:
        return sorted(c for c, n in self.square_norms.items()
                      if ((c[0] % 2, c[1] % 2) == tuple(parity)) and n > 0)


def checkerboard(values: np.ndarray, origin: tuple[float, float], spacing: float) -> Checkerboard:
    """Split V sampled on a cell-centred box into the four parity classes of unit squares.

    ``origin`` is the lower-left corner of the box; it must sit on square
    edges (half-integers) and 1/spacing must be an integer.
    """
    per = 1.0 / spacing
    if abs(per - round(per)) > 1e-9:
        raise ValueError("1/spacing must be an integer")
    per = int(round(per))
    if any(abs((o + 0.5) - round(o + 0.5)) > 1e-9 for o in origin):
        raise ValueError("box corner must lie on a unit-square edge")
    if values.shape[0] % per or values.shape[1] % per:
        raise ValueError("box must cover whole unit squares")
    c0 = (int(round(origin[0] + 0.5)), int(round(origin[1] + 0.5)))
    n1, n2 = values.shape[0] // per, values.shape[1] // per
    comps = {p: np.zeros_like(values) for p in PARITIES}
    norms = {}
    for i in range(n1):
        for j in range(n2):
            centre = (c0[0] + i, c0[1] + j)
            sl = (slice(i * per, (i + 1) * per), slice(j * per, (j + 1) * per))
            comps[(centre[0] % 2, centre[1] % 2)][sl] = values[sl]
            norms[centre] = float(np.sqrt(np.sum(np.abs(values[sl]) ** 2)) * spacing)
    return Checkerboard(comps, norms, tuple(origin), spacing)


def partition_residual(origin: tuple[float, float], shape: tuple[int, int], spacing: float,
                       shift: tuple[int, int] = (0, 0)) -> float:
    """max |sum_{xbar in (2Z)^2 + shift} chi(x - xbar)^2 - 1| over the cell centres."""
    x = origin[0] + (np.arange(shape[0]) + 0.5) * spacing
    y = origin[1] + (np.arange(shape[1]) + 0.5) * spacing
    X, Y = np.meshgrid(x, y, indexing="ij")
    total = np.zeros_like(X)
    lo1 = 2 * math.floor((x.min() - shift[0]) / 2) - 2 + shift[0]
    lo2 = 2 * math.floor((y.min() - shift[1]) / 2) - 2 + shift[1]
    for c1 in range(lo1, int(math.ceil(x.max())) + 3, 2):
        for c2 in range(lo2, int(math.ceil(y.max())) + 3, 2):
            total += partition_cutoff(X - c1, Y - c2) ** 2
    return float(np.abs(total - 1.0).max())


# --- tables -------------------------------------------------------------------


def symbol_table(pbar_norms: Sequence[float], a: float = 1.0) -> Table:
    table = Table("symbol", ["pbar_norm", "quadrature", "closed_form", "rel_err"])
    for pn in pbar_norms:
        q = symbol_integral(a, pn)
        cf = symbol_closed_form(pn)
        table.add(pbar_norm=float(pn), quadrature=q, closed_form=cf, rel_err=abs(q - cf) / cf)
    table.checks["rel_err_1e-6"] = bool(np.all(table.column("rel_err") < 1e-6))
    table.checks["below_pi_squared"] = bool(np.all(table.column("quadrature") <= math.pi**2))
    table.notes["a"] = a
    return table


def symbol_a_table(pbar_norms: Sequence[float], a_values: Sequence[float] = (1.0, 10.0)) -> Table:
    """Quadrature at several a against the printed (a-free) and the a-dependent closed forms."""
    table = Table("symbol_a_independence", ["pbar_norm", "a", "quadrature", "closed_form",
                                            "closed_form_a", "rel_err"])
    for pn in pbar_norms:
        for a in a_values:
            q = symbol_integral(a, pn)
            cf = symbol_closed_form(pn)
            table.add(pbar_norm=float(pn), a=float(a), quadrature=q, closed_form=cf,
                      closed_form_a=symbol_closed_form_a(a, pn), rel_err=abs(q - cf) / cf)
    q = table.column("quadrature").reshape(len(pbar_norms), len(a_values))
    spread = np.abs(q - q[:, :1]).max(axis=1) / q[:, 0]
    table.notes["max_relative_spread_over_a"] = float(spread.max())
    table.checks["a_independent"] = bool(np.all(spread < 1e-6))
    return table


def bounds_table(centers: Sequence[tuple[int, int]], a: float = 0.5, omega: float = 1.0,
                 box: Box | None = None, n_states: int = 32, seed: int = 0,
                 func=inverse_sqrt_singularity, extra_a: Sequence[float] = (0.05,), pool_map=map) -> Table:
    """b_emp for both generators at every centre.

    Checks (finiteness, centre stability within 25%) use the principal ``a``;
    rows for ``extra_a`` are diagnostics.
    """
    box = box or Box()
    tests = random_test_set(n_states, seed)
    a_values = (a,) + tuple(x for x in extra_a if x != a)
    table = Table("bounds", ["center_x", "center_y", "a", "omega", "generator", "b_emp", "b_proof", "v_l2"])

    def task(center):
        V = SquarePotential(tuple(center), func, box)
        lin = [kato_bound_sample(V, av, omega, tests) for av in a_values]
        rot = [kato_bound_J_sample(V, av, omega, tests)[0] for av in a_values]
        return V.l2_norm, lin, rot

    for center, (l2, lin, rot) in zip(centers, pool_map(task, centers)):
        for gen, bs in (("linear", lin), ("J", rot)):
            for av, b in zip(a_values, bs):
                table.add(center_x=int(center[0]), center_y=int(center[1]), a=float(av), omega=float(omega),
                          generator=gen, b_emp=float(b), b_proof=l2**2 / (2 * av), v_l2=l2)

    for gen in ("linear", "J"):
        b = np.array([r["b_emp"] for r in table.rows if r["generator"] == gen and r["a"] == a])
        table.checks[f"finite_{gen}"] = bool(np.all(np.isfinite(b)))
        table.checks[f"center_stable_{gen}"] = bool(b.max() - b.min() <= 0.25 * b.max())
        table.notes[f"all_zero_{gen}"] = bool(np.all(b == 0))
    resid = identity_residual(box, tests)
    table.notes["identity_residual"] = resid
    table.checks["identity"] = resid < IDENTITY_TOL

    # checkerboard partition on a 4x4 block of unit squares
    origin, spacing, shape = (-1.5, -1.5), 1.0 / 16, (64, 64)
    table.notes["partition_residual"] = max(partition_residual(origin, shape, spacing, s) for s in PARITIES)
    table.checks["partition"] = table.notes["partition_residual"] < PARTITION_TOL
    return table
