"""Evolution schemes for a particle in a rotating potential.

All schemes work on "work arrays": a batch of fields in the angular-mode
representation, weighted by sqrt(area weight) per radial node and laid out
as (2M+1, N_r, S).  In these coordinates every radial transform is an
orthogonal matrix, every step is unitary, and the rotationally invariant
pieces (H_0, J, Vbar) act block-diagonally mode by mode.

Time dependence of the potential enters only through phases on its angular
modes, so the reference propagator can work in the co-rotating frame where
the generator H_omega + V_0 is time independent:

    U(t; t0) = R(omega t) exp(-i (t - t0)(H_omega + V_0)) R(omega t0)^*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .grid import Field, PolarGrid, Rep, as_modes, norm
from .operators import (
    AngularPotential,
    KineticSpec,
    W_time_integral,
    potential_at_time,
    remainder_at_time,
    sup_norm_W,
)

SCHEMES = (
    "reference",
    "trotter_inertial",
    "averaged_plus_w",
    "u_tilde",
    "u_lin",
    "averaged_only",
)


class SeriesDivergenceError(RuntimeError):
    """Taylor series for exp(-iB) did not converge; the step is too large."""


@dataclass(frozen=True, eq=False)
class SchemeConfig:
    scheme: str
    omega: float
    T: float
    kinetic: KineticSpec
    potential: AngularPotential
    t0: float = 0.0
    n: int = 1
    n_sub: int = 64
    K_quad: int = 8
    taylor_tol: float = 1e-12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n < 1 or self.n_sub < 1 or self.K_quad < 1:
            raise ValueError("n, n_sub and K_quad must be >= 1")
        if not 0 < self.taylor_tol <= 1e-6:
            raise ValueError("taylor_tol must lie in (0, 1e-6]")

    @property
    def grid(self) -> PolarGrid:
        return self.potential.grid

    def with_(self, **changes) -> "SchemeConfig":
        return replace(self, **changes)


@dataclass
class PropagationResult:
    state: Field
    norm_drift: float
    diagnostics: dict = field(default_factory=dict)


# --- work-array plumbing -----------------------------------------------------


def to_work(fields: Field | list[Field]) -> np.ndarray:
    batch = [fields] if isinstance(fields, Field) else list(fields)
    g = batch[0].grid
    sw = np.sqrt(g.weights)
    cols = [sw[:, None] * as_modes(f).data for f in batch]
    return np.ascontiguousarray(np.stack(cols, axis=-1).transpose(1, 0, 2))


def from_work(grid: PolarGrid, work: np.ndarray) -> list[Field]:
    sw = np.sqrt(grid.weights)
    return [Field(grid, Rep.MODES, work[:, :, s].T / sw[:, None]) for s in range(work.shape[2])]


def work_norms(work: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(work) ** 2, axis=(0, 1)))


class Dynamics:
    """Cached per-mode matrices for one (grid, kinetic, potential) triple."""

    def __init__(self, grid: PolarGrid, kinetic: KineticSpec, potential: AngularPotential | None):
        self.grid = grid
        self.kinetic = kinetic
        self.potential = potential
        self.U = grid.mode_unitaries
        self.h = kinetic.h(grid.p_nodes)
        self.m = grid.m_values.astype(float)
        self.vbar = potential.vbar if potential is not None else np.zeros(grid.N_r)
        self._fft_index = grid.fft_index

    # angular sampling of work arrays
    def to_angles(self, work: np.ndarray) -> np.ndarray:
        full = np.zeros((self.grid.N_phi,) + work.shape[1:], dtype=complex)
        full[self._fft_index] = work
        return np.fft.ifft(full, axis=0) * self.grid.N_phi

    def from_angles(self, arr: np.ndarray) -> np.ndarray:
        return (np.fft.fft(arr, axis=0) / self.grid.N_phi)[self._fft_index]

    def multiply(self, work: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Pointwise multiplication by (N_r, N_phi) samples."""
        return self.from_angles(self.to_angles(work) * values.T[:, :, None])

    def rotate(self, work: np.ndarray, theta: float) -> np.ndarray:
        return work * np.exp(-1j * theta * self.m)[:, None, None]

    def _conj_diag(self, diag: np.ndarray) -> np.ndarray:
        # U_m^T diag(d_m) U_m for every mode; diag has shape (modes, N_r)
        return np.einsum("mai,ma,maj->mij", self.U, diag, self.U, optimize=True)

    @lru_cache(maxsize=64)
    def unperturbed(self, t: float, omega: float) -> np.ndarray:
        """Per-mode matrices of exp(-i t H_omega) = exp(i omega t m) exp(-i t h)."""
        phase = np.exp(-1j * t * (self.h[None, :] - omega * self.m[:, None]))
        return self._conj_diag(phase)

    @lru_cache(maxsize=64)
    def averaged_step(self, tau: float) -> np.ndarray:
        half = np.exp(-0.5j * tau * self.vbar)
        kin = self.unperturbed(tau, 0.0)
        return half[None, :, None] * kin * half[None, None, :]

    @lru_cache(maxsize=256)
    def averaged(self, t: float, n_sub: int) -> np.ndarray:
        """Strang product exp(-i tau Vbar/2) exp(-i tau H0) exp(-i tau Vbar/2), n_sub times."""
        if t == 0.0:
            return np.broadcast_to(np.eye(self.grid.N_r, dtype=complex), self.U.shape).copy()
        return np.linalg.matrix_power(self.averaged_step(t / n_sub), n_sub)

    @lru_cache(maxsize=8)
    def averaged_spectral(self):
        """Eigendecomposition of H0 + Vbar per mode (exact group)."""
        kin = self._conj_diag(np.broadcast_to(self.h, self.U.shape[:2]).astype(complex))
        a = kin + np.einsum("ij,i->ij", np.eye(self.grid.N_r), self.vbar)[None]
        a = 0.5 * (a + np.conj(np.swapaxes(a, 1, 2)))
        return np.linalg.eigh(a)

    def averaged_exact(self, t: float) -> np.ndarray:
        lam, q = self.averaged_spectral()
        return np.einsum("mik,mk,mjk->mij", q, np.exp(-1j * t * lam), np.conj(q), optimize=True)

    @staticmethod
    def apply(mats: np.ndarray, work: np.ndarray) -> np.ndarray:
        return mats @ work


@lru_cache(maxsize=32)
def dynamics_for(grid: PolarGrid, kinetic: KineticSpec, potential: AngularPotential | None) -> Dynamics:
    return Dynamics(grid, kinetic, potential)


def _radial_potential(grid: PolarGrid, vbar) -> AngularPotential | None:
    if vbar is None:
        return None
    if isinstance(vbar, AngularPotential):
        return vbar.radial_part() if not vbar.is_radial else vbar
    return _radial_from_array(grid, np.asarray(vbar, dtype=float).tobytes())


@lru_cache(maxsize=32)
def _radial_from_array(grid: PolarGrid, raw: bytes) -> AngularPotential:
    vbar = np.frombuffer(raw, dtype=float)
    modes = np.zeros((grid.N_r, grid.n_modes), dtype=complex)
    modes[:, grid.M] = vbar
    return AngularPotential(grid, modes, None)


def _averaged_dynamics(config: SchemeConfig) -> Dynamics:
    return dynamics_for(config.grid, config.kinetic, _radial_of(config.potential))


@lru_cache(maxsize=32)
def _radial_of(ap: AngularPotential) -> AngularPotential:
    return ap if ap.is_radial else ap.radial_part()


def _single(fields: list[Field]) -> Field:
    return fields[0]


# --- exact and averaged groups ----------------------------------------------


def evolve_unperturbed(psi: Field, t: float, omega: float, kinetic: KineticSpec) -> Field:
    """exp(-i t H_omega) psi; exact diagonal phases in the momentum representation."""
    if psi.rep is Rep.MOMENTUM:
        phase = np.exp(1j * omega * t * psi.grid.m_values)[None, :] * np.exp(
            -1j * t * kinetic.h(psi.grid.p_nodes)
        )[:, None]
        return psi.with_data(psi.data * phase)
    dyn = dynamics_for(psi.grid, kinetic, None)
    out = _single(from_work(psi.grid, dyn.apply(dyn.unperturbed(float(t), float(omega)), to_work(psi))))
    return out


def evolve_averaged(psi: Field, t: float, n_sub: int, kinetic: KineticSpec, vbar) -> Field:
    """Strang approximation of exp(-i t (H0 + Vbar)) psi with n_sub steps.

    ``vbar`` is an AngularPotential (its m = 0 part is used), a radial array
    on the grid nodes, or None for the free evolution.
    """
    dyn = dynamics_for(psi.grid, kinetic, _radial_potential(psi.grid, vbar))
    return _single(from_work(psi.grid, dyn.apply(dyn.averaged(float(t), int(n_sub)), to_work(psi))))


# --- reference propagator ----------------------------------------------------


def reference_work(config: SchemeConfig, work: np.ndarray, t0: float, t: float, n_sub: int) -> np.ndarray:
    """U(t; t0) on a work array via Strang splitting in the rotating frame."""
    if t == t0:
        return work.copy()
    dyn = dynamics_for(config.grid, config.kinetic, None)
    omega = config.omega
    tau = (t - t0) / n_sub
    kin = dyn.unperturbed(float(tau), float(omega))
    v0 = potential_at_time(config.potential, 0.0, 0.0)
    half = np.exp(-0.5j * tau * v0).T[:, :, None]
    full = half * half

    x = dyn.rotate(work, -omega * t0)
    ang = dyn.to_angles(x) * half
    for step in range(n_sub):
        x = kin @ dyn.from_angles(ang)
        ang = dyn.to_angles(x) * (half if step == n_sub - 1 else full)
    x = dyn.from_angles(ang)
    return dyn.rotate(x, omega * t)


def evolve_reference(psi: Field, t0: float, t: float, config: SchemeConfig, n_sub: int | None = None) -> Field:
    n_sub = config.n_sub if n_sub is None else n_sub
    return _single(from_work(psi.grid, reference_work(config, to_work(psi), t0, t, n_sub)))


def reference_with_estimate(
    config: SchemeConfig, work: np.ndarray, t0: float, t: float, n_sub: int
) -> tuple[np.ndarray, np.ndarray]:
    """Reference at 2*n_sub steps and a per-state error estimate.

    Strang is second order, so the finer run's error is about a third of
    the difference between the two runs.
    """
    coarse = reference_work(config, work, t0, t, n_sub)
    fine = reference_work(config, work, t0, t, 2 * n_sub)
    return fine, work_norms(fine - coarse) / 3.0


def duhamel_residual(psi: Field, t0: float, t: float, config: SchemeConfig, quad_nodes: int) -> float:
    """|| U(t;t0) psi - [e^{-i(t-t0)A} psi - i int e^{-i(t-tau)A} W_{omega tau} U(tau;t0) psi dtau] ||.

    A = H0 + Vbar; the integral uses Gauss-Legendre nodes.  Both propagators
    use the step size (t - t0)/n_sub of the configuration.
    """
    if quad_nodes < 4:
        raise ValueError("quad_nodes must be >= 4")
    if t == t0:
        return 0.0
    span = t - t0
    n_sub = config.n_sub
    avg = _averaged_dynamics(config)
    x, w = np.polynomial.legendre.leggauss(quad_nodes)
    taus = t0 + span * (x + 1.0) / 2.0
    weights = span * w / 2.0

    start = to_work(psi)
    integral = np.zeros_like(start)
    current, t_cur = start, t0
    for tau, wk in zip(taus, weights):
        steps = max(1, round(n_sub * (tau - t_cur) / span))
        current = reference_work(config, current, t_cur, tau, steps)
        t_cur = tau
        kicked = avg.multiply(current, remainder_at_time(config.potential, config.omega, tau))
        back = max(1, round(n_sub * (t - tau) / span))
        integral += wk * avg.apply(avg.averaged(float(t - tau), back), kicked)
    steps = max(1, round(n_sub * (t - t_cur) / span))
    lhs = reference_work(config, current, t_cur, t, steps)
    rhs = avg.apply(avg.averaged(float(span), n_sub), start) - 1j * integral
    return float(work_norms(lhs - rhs)[0])


# --- the rotating-frame identity --------------------------------------------


def ident_check(psi: Field, t: float, t1: float, omega: float, W: AngularPotential, n_steps: int) -> float:
    """|| R(omega t) exp(-i t(-omega J + W_{omega t1})) psi - exp(-i int W) psi ||.

    The left side is a Strang splitting of -omega J against W_{omega t1} with
    n_steps steps; the right side uses the closed-form time integral of W.
    """
    dyn = dynamics_for(psi.grid, KineticSpec(), None)
    work = to_work(psi)
    tau = t / n_steps
    w1 = remainder_at_time(W, omega, t1)
    half = np.exp(-0.5j * tau * w1).T[:, :, None]
    full = half * half
    spin = np.exp(1j * tau * omega * dyn.m)[:, None, None]

    ang = dyn.to_angles(work) * half
    for step in range(n_steps):
        x = spin * dyn.from_angles(ang)
        ang = dyn.to_angles(x) * (half if step == n_steps - 1 else full)
    lhs = dyn.rotate(dyn.from_angles(ang), omega * t)
    rhs = dyn.multiply(work, np.exp(-1j * W_time_integral(W, omega, t1, t1 + t)))
    return float(work_norms(lhs - rhs)[0])


# --- product formulas ---------------------------------------------------------


def _w_integral(config: SchemeConfig, t1: float, t2: float) -> np.ndarray:
    if config.omega == 0:
        return (t2 - t1) * remainder_at_time(config.potential, 0.0, 0.0)
    return W_time_integral(config.potential, config.omega, t1, t2)


def product_formula_W_work(config: SchemeConfig, work: np.ndarray, t0: float, T: float, n: int) -> np.ndarray:
    avg = _averaged_dynamics(config)
    step = T / n
    a_step = avg.averaged(float(step), config.n_sub)
    x = work
    for k in range(n):
        t1 = t0 + k * step
        x = avg.multiply(x, np.exp(-1j * _w_integral(config, t1, t1 + step)))
        x = avg.apply(a_step, x)
    return x


def product_formula_W(psi: Field, t0: float, T: float, n: int, config: SchemeConfig) -> Field:
    """prod_k exp(-i T A / n) exp(-i int_{t_k}^{t_k+1} W_{omega s} ds), k increasing right to left."""
    return _single(from_work(psi.grid, product_formula_W_work(config, to_work(psi), t0, T, n)))


class InteractionIntegral:
    """B(t1, t1+dt) = int_0^dt e^{isA} W_{omega(t1+s)} e^{-isA} ds by Gauss-Legendre.

    A = H0 + Vbar.  The conjugations use the Strang propagator with step
    size at most dt/n_sub; node matrices depend only on dt and are cached.
    """

    def __init__(self, config: SchemeConfig, dt: float):
        self.config = config
        self.dt = dt
        self.avg = _averaged_dynamics(config)
        x, w = np.polynomial.legendre.leggauss(config.K_quad)
        self.nodes = dt * (x + 1.0) / 2.0
        self.weights = dt * w / 2.0
        self.forward = [
            self.avg.averaged(float(s), max(1, math.ceil(config.n_sub * abs(s) / abs(dt)))) for s in self.nodes
        ]
        # Strang steps satisfy S(-tau) = S(tau)^H in weighted coordinates
        self.backward = [np.conj(np.swapaxes(e, 1, 2)) for e in self.forward]

    def operator(self, t1: float):
        kicks = [remainder_at_time(self.config.potential, self.config.omega, t1 + s).T[:, :, None] for s in self.nodes]
        avg = self.avg

        def apply_b(x: np.ndarray) -> np.ndarray:
            out = np.zeros_like(x)
            for wk, fwd, bwd, kick in zip(self.weights, self.forward, self.backward, kicks):
                y = fwd @ x
                y = avg.from_angles(avg.to_angles(y) * kick)
                out += wk * (bwd @ y)
            return out

        return apply_b


def _exp_minus_i(apply_b, x: np.ndarray, tol: float, max_order: int = 40) -> tuple[np.ndarray, int]:
    total = x.copy()
    term = x
    scale = max(float(work_norms(x).max()), 1e-300)
    for k in range(1, max_order + 1):
        term = (-1j / k) * apply_b(term)
        total = total + term
        if work_norms(term).max() < tol * scale:
            return total, k
    raise SeriesDivergenceError(f"exp(-iB) series not converged by order {max_order}")


def _check_factor_norm(config: SchemeConfig, dt: float, w_norm: float | None) -> float:
    w_norm = sup_norm_W(config.potential) if w_norm is None else w_norm
    if abs(dt) * w_norm >= 1.0:
        raise SeriesDivergenceError(
            f"per-factor bound |dt| ||W0|| = {abs(dt) * w_norm:.3f} >= 1; use more factors"
        )
    return w_norm


def u_tilde_work(config: SchemeConfig, work: np.ndarray, t1: float, t2: float,
                 integral: InteractionIntegral | None = None, w_norm: float | None = None) -> tuple[np.ndarray, int]:
    if t1 == t2 or config.potential.is_radial:
        return work.copy(), 0
    _check_factor_norm(config, t2 - t1, w_norm)
    integral = integral or InteractionIntegral(config, t2 - t1)
    return _exp_minus_i(integral.operator(t1), work, config.taylor_tol)


def u_lin_work(config: SchemeConfig, work: np.ndarray, t1: float, t2: float,
               integral: InteractionIntegral | None = None) -> np.ndarray:
    if t1 == t2 or config.potential.is_radial:
        return work.copy()
    integral = integral or InteractionIntegral(config, t2 - t1)
    return work - 1j * integral.operator(t1)(work)


def u_tilde_factor(psi: Field, t1: float, t2: float, config: SchemeConfig) -> Field:
    """exp(-i int_0^{t2-t1} e^{isA} W_{omega(t1+s)} e^{-isA} ds) psi."""
    return _single(from_work(psi.grid, u_tilde_work(config, to_work(psi), t1, t2)[0]))


def u_lin_factor(psi: Field, t1: float, t2: float, config: SchemeConfig) -> Field:
    """(1 - i int_0^{t2-t1} e^{isA} W_{omega(t1+s)} e^{-isA} ds) psi."""
    return _single(from_work(psi.grid, u_lin_work(config, to_work(psi), t1, t2)))


def scheme_product_work(config: SchemeConfig, work: np.ndarray, t0: float, T: float, n: int,
                        which: str) -> tuple[np.ndarray, dict]:
    if which not in ("u_tilde", "u_lin"):
        raise ValueError(f"which must be 'u_tilde' or 'u_lin', got {which!r}")
    step = T / n
    avg = _averaged_dynamics(config)
    a_step = avg.averaged(float(step), config.n_sub)
    radial = config.potential.is_radial
    integral = None if radial else InteractionIntegral(config, step)
    w_norm = None if radial or which == "u_lin" else _check_factor_norm(config, step, None)
    orders = []
    x = work
    for k in range(n):
        t1 = t0 + k * step
        if which == "u_tilde":
            x, order = u_tilde_work(config, x, t1, t1 + step, integral, w_norm)
            orders.append(order)
        else:
            x = u_lin_work(config, x, t1, t1 + step, integral)
        x = avg.apply(a_step, x)
    return x, {"factors": n, "taylor_orders": orders}


def scheme_product(psi: Field, t0: float, T: float, n: int, which: str, config: SchemeConfig) -> Field:
    """prod_k exp(-i T A/n) u(t_k+1, t_k), k increasing right to left; u is u_tilde or u_lin."""
    out, _ = scheme_product_work(config, to_work(psi), t0, T, n, which)
    return _single(from_work(psi.grid, out))


# --- dispatch ---------------------------------------------------------------


def propagate_work(config: SchemeConfig, work: np.ndarray) -> tuple[np.ndarray, dict]:
    t0, T = config.t0, config.T
    kind = config.scheme
    if kind == "reference":
        return reference_work(config, work, t0, t0 + T, config.n_sub), {"substeps": config.n_sub}
    if kind in ("averaged_plus_w", "trotter_inertial"):
        # the inertial Trotter factors coincide with these factors (see ident_check)
        out = product_formula_W_work(config, work, t0, T, config.n)
        return out, {"factors": config.n, "substeps": config.n_sub}
    if kind in ("u_tilde", "u_lin"):
        return scheme_product_work(config, work, t0, T, config.n, kind)
    avg = _averaged_dynamics(config)
    return avg.apply(avg.averaged(float(T), config.n_sub), work), {"substeps": config.n_sub}


def propagate(psi: Field, config: SchemeConfig) -> PropagationResult:
    work = to_work(psi)
    out, diag = propagate_work(config, work)
    state = _single(from_work(psi.grid, out))
    n0 = norm(psi)
    drift = abs(norm(state) - n0) / n0 if n0 else 0.0
    return PropagationResult(state=state, norm_drift=drift, diagnostics=diag)
