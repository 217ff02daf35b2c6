"""Dense truncations in the (momentum radial node, angular mode) basis.

Basis vectors are weighted momentum samples sqrt(p_weight_a) chi_m(p_a),
ordered mode-major: index = (m + M) * N_r + a.  In this basis H0 and J are
diagonal, so

    A = diag(h(p_a) - omega m + omega l) + Vbar + W_phi

with all angular coupling inside the potential blocks

    block(m, m') = c_m U_m diag(v_{m-m'}(r) e^{-i(m-m')phi}) U_{m'}^T conj(c_{m'}),

c_m = (-i)^|m| and U_m the orthogonal radial transform of mode m.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import Field, PolarGrid, Rep, as_modes
from .operators import AngularPotential, KineticSpec, sup_norm_W
from .tables import Table, slope

SOLVE_TOL = 1e-10
HERMITIAN_TOL = 1e-10


class SolverResidualError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TruncatedOperator:
    grid: PolarGrid
    matrix: np.ndarray  # Hermitian part A
    zeta: float
    omega: float
    ell: int
    phi: float

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def index(self, a: int, m: int) -> int:
        return self.grid.mode_column(m) * self.grid.N_r + a

    def block(self, m: int, mp: int) -> np.ndarray:
        n = self.grid.N_r
        i, j = self.grid.mode_column(m) * n, self.grid.mode_column(mp) * n
        return self.matrix[i:i + n, j:j + n]

    def shifted(self) -> np.ndarray:
        return self.matrix - 1j * self.zeta * np.eye(self.dimension)


def _phases(grid: PolarGrid) -> np.ndarray:
    return (-1j) ** np.abs(grid.m_values)


def potential_matrix(ap: AngularPotential, phi: float = 0.0, include_average: bool = True,
                     include_remainder: bool = True) -> np.ndarray:
    g = ap.grid
    n, nm = g.N_r, g.n_modes
    U, c = g.mode_unitaries, _phases(g)
    out = np.zeros((nm * n, nm * n), dtype=complex)
    view = out.reshape(nm, n, nm, n)
    for k in range(-g.M, g.M + 1):
        if k == 0 and not include_average or k != 0 and not include_remainder:
            continue
        v = ap.modes[:, g.mode_column(k)] * np.exp(-1j * k * phi)
        if not np.any(v):
            continue
        rows = np.arange(max(0, k), nm + min(0, k))  # columns m with m - k also in range
        cols = rows - k
        blocks = np.einsum("bai,i,bji->baj", U[rows], v, U[cols], optimize=True)
        blocks *= (c[rows][:, None, None] * np.conj(c[cols])[:, None, None])
        view[rows, :, cols, :] = blocks
    return out


def build_truncation(grid: PolarGrid, kinetic: KineticSpec, ap: AngularPotential | None,
                     omega: float, ell: int, zeta: float, phi: float = 0.0) -> TruncatedOperator:
    """H_omega + omega l + Vbar + W_phi as a dense matrix (the -i zeta shift is kept apart)."""
    if zeta == 0:
        raise ValueError("zeta must be non-zero")
    h = kinetic.h(grid.p_nodes)
    diag = (h[None, :] - omega * grid.m_values[:, None] + omega * ell).ravel()
    mat = np.diag(diag).astype(complex)
    if ap is not None:
        pot = potential_matrix(ap, phi)
        herm = np.abs(pot - pot.conj().T).max()
        if herm > HERMITIAN_TOL * max(1.0, np.abs(pot).max()):
            raise ValueError(f"potential blocks not Hermitian (residual {herm:.2e})")
        mat += pot
    return TruncatedOperator(grid, mat, float(zeta), float(omega), int(ell), float(phi))


def resolvent_apply(op: TruncatedOperator, rhs: np.ndarray) -> np.ndarray:
    """Solve (A - i zeta) x = rhs, checking the residual."""
    rhs = np.asarray(rhs, dtype=complex)
    a = op.shifted()
    x = scipy.linalg.solve(a, rhs)
    res = np.linalg.norm(a @ x - rhs)
    if res > SOLVE_TOL * max(np.linalg.norm(rhs), 1e-300):
        raise SolverResidualError(f"solver residual {res:.2e}")
    return x


# --- basis conversions --------------------------------------------------------


def to_basis(f: Field) -> np.ndarray:
    """Weighted momentum coefficients of a field (via the orthogonal transforms)."""
    g = f.grid
    x = np.sqrt(g.weights)[:, None] * as_modes(f).data
    y = np.einsum("mai,im->ma", g.mode_unitaries, x) * _phases(g)[:, None]
    return y.ravel()


def from_basis(grid: PolarGrid, vec: np.ndarray) -> Field:
    y = vec.reshape(grid.n_modes, grid.N_r) * np.conj(_phases(grid))[:, None]
    x = np.einsum("mai,ma->im", grid.mode_unitaries, y)
    return Field(grid, Rep.MODES, x / np.sqrt(grid.weights)[:, None])


def project_basis(grid: PolarGrid, vec: np.ndarray, j: int) -> np.ndarray:
    out = np.zeros_like(vec)
    n, c = grid.N_r, grid.mode_column(j)
    out[c * n:(c + 1) * n] = vec[c * n:(c + 1) * n]
    return out


def averaged_mode_matrix(grid: PolarGrid, kinetic: KineticSpec, vbar: AngularPotential | None, j: int) -> np.ndarray:
    """H0 + Vbar restricted to mode j, in the momentum basis."""
    h = np.diag(kinetic.h(grid.p_nodes)).astype(complex)
    if vbar is None:
        return h
    U = grid.mode_unitaries[grid.mode_column(j)]
    return h + U @ (vbar.vbar[:, None] * U.T)


def spectral_cut_state(grid: PolarGrid, kinetic: KineticSpec, vbar: AngularPotential | None,
                       base: Field, j: int, mu_max: float) -> np.ndarray:
    """P_j base restricted to the spectral subspace |mu| < mu_max of H0 + Vbar, in the basis."""
    a = averaged_mode_matrix(grid, kinetic, vbar, j)
    lam, q = np.linalg.eigh(0.5 * (a + a.conj().T))
    n, c = grid.N_r, grid.mode_column(j)
    coeffs = q.conj().T @ to_basis(base)[c * n:(c + 1) * n]
    coeffs[np.abs(lam) >= mu_max] = 0.0
    out = np.zeros(grid.n_modes * n, dtype=complex)
    out[c * n:(c + 1) * n] = q @ coeffs
    return out


def pure_mode(grid: PolarGrid, vec: np.ndarray, tol: float = 1e-12) -> int | None:
    """The single angular mode carrying ``vec``, or None."""
    blocks = np.linalg.norm(vec.reshape(grid.n_modes, grid.N_r), axis=1)
    total = np.linalg.norm(blocks)
    if total == 0:
        return None
    big = np.flatnonzero(blocks > tol * total)
    return int(grid.m_values[big[0]]) if big.size == 1 else None


# --- limit checks -----------------------------------------------------------


def default_zeta(ap: AngularPotential | None) -> float:
    w = 0.0 if ap is None else sup_norm_W(ap)
    return 2.0 * max(1.0, w)


def _radial(ap: AngularPotential | None) -> AngularPotential | None:
    if ap is None:
        return None
    return ap if ap.is_radial else ap.radial_part()


def limres1_check(grid: PolarGrid, kinetic: KineticSpec, vbar: AngularPotential | None, ell: int,
                  zeta: float, omegas, rhs: np.ndarray, mu_max: float | None = None) -> Table:
    """||(H_omega + Vbar + omega l - i zeta)^{-1} Phi - (H0 + Vbar - i zeta)^{-1} P_l Phi|| along omega.

    ``envelope`` is ||Phi|| / (omega |j - l| - mu_max - |zeta|) for a P_j-pure Phi
    with spectral support in |mu| < mu_max (NaN where it does not apply).
    """
    vbar = _radial(vbar)
    table = Table("limres1", ["omega", "deviation", "envelope"])
    limit = resolvent_apply(build_truncation(grid, kinetic, vbar, 0.0, 0, zeta), project_basis(grid, rhs, ell))
    j = pure_mode(grid, rhs)
    size = float(np.linalg.norm(rhs))
    for omega in omegas:
        x = resolvent_apply(build_truncation(grid, kinetic, vbar, omega, ell, zeta), rhs)
        dev = float(np.linalg.norm(x - limit))
        env = float("nan")
        if j is not None and j != ell and mu_max is not None:
            gap = omega * abs(j - ell) - mu_max - abs(zeta)
            if gap > 0:
                env = size / gap
        table.add(omega=float(omega), deviation=dev, envelope=env)

    dev = table.column("deviation")
    table.notes.update(ell=ell, zeta=zeta, pure_mode=j, mu_max=mu_max, norm=size)
    if j == ell:
        table.checks["exact_on_P_l"] = bool(np.all(dev <= 10 * SOLVE_TOL * size / abs(zeta)))
    elif j is not None:
        s = slope(table.column("omega"), dev)
        table.notes["slope"] = s
        table.checks["slope_minus_one"] = bool(abs(s + 1.0) <= 0.15)
        env = table.column("envelope")
        ok = ~np.isnan(env)
        if ok.any():
            table.checks["envelope"] = bool(np.all(dev[ok] <= env[ok]))
    return table


def resolv_limit_check(grid: PolarGrid, kinetic: KineticSpec, ap: AngularPotential, ell: int, zeta: float,
                       omegas, phis, rhs: np.ndarray, pool_map=map) -> Table:
    """||(H_omega + omega l + Vbar + W_phi - i zeta)^{-1} Phi - (H0 + Vbar - i zeta)^{-1} P_l Phi||.

    Also records the first Neumann term ||W_phi (x - x_lim)||.
    """
    w = sup_norm_W(ap)
    if abs(zeta) <= w:
        raise ValueError(f"|zeta| = {abs(zeta)} must exceed ||W0|| = {w}")
    table = Table("resolvent", ["omega", "phi", "deviation", "neumann_first"])
    vbar = _radial(ap)
    limit = resolvent_apply(build_truncation(grid, kinetic, vbar, 0.0, 0, zeta), project_basis(grid, rhs, ell))
    jobs = [(om, ph) for om in omegas for ph in phis]

    def task(job):
        om, ph = job
        op = build_truncation(grid, kinetic, ap, om, ell, zeta, ph)
        diff = resolvent_apply(op, rhs) - limit
        wphi = potential_matrix(ap, ph, include_average=False)
        return float(np.linalg.norm(diff)), float(np.linalg.norm(wphi @ diff))

    for (om, ph), (dev, neu) in zip(jobs, pool_map(task, jobs)):
        table.add(omega=float(om), phi=float(ph), deviation=dev, neumann_first=neu)

    om_arr = np.asarray(omegas, dtype=float)
    dev = table.column("deviation").reshape(len(omegas), len(phis))
    worst = dev.max(axis=1)
    table.notes.update(ell=ell, zeta=zeta, w_norm=w, max_over_phi=worst.tolist())
    if om_arr[-1] >= 16 * om_arr[0] and worst[0] > 0:
        table.checks["decay_factor_4"] = bool(worst[-1] < worst[0] / 4)
    last = dev[-1]
    if last.mean() > 0:
        table.checks["phi_uniform"] = bool(last.max() - last.min() < 2 * last.mean())
    return table
