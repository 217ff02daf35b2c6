import numpy as np
import pytest

from rotaprop.grid import make_grid, norm, sample, to_modes
from rotaprop.operators import Fan, KineticSpec, OffsetGaussian, decompose_potential, multiply, potential_at_time, project
from rotaprop.resolvent import (
    averaged_mode_matrix,
    build_truncation,
    default_zeta,
    from_basis,
    limres1_check,
    potential_matrix,
    project_basis,
    pure_mode,
    resolv_limit_check,
    resolvent_apply,
    spectral_cut_state,
    to_basis,
)
from rotaprop.states import gauss_l0, gauss_l2, gauss_mixed

KIN = KineticSpec()


@pytest.fixture(scope="module")
def grid():
    return make_grid(32, 24, 10.0, 10.0)


@pytest.fixture(scope="module")
def fan(grid):
    return decompose_potential(Fan(), grid)


@pytest.fixture(scope="module")
def radial(grid):
    return decompose_potential(OffsetGaussian(distance=0.0), grid)


def mode_state(grid, j):
    base = sample(grid, lambda x, y: (x + 1j * np.sign(j) * y) ** abs(j) * np.exp(-(x * x + y * y) / 2))
    return to_modes(base)


def test_basis_roundtrip_is_isometric(grid):
    f = gauss_mixed(grid)
    v = to_basis(f)
    assert np.linalg.norm(v) == pytest.approx(norm(f), rel=1e-12)
    assert norm(from_basis(grid, v) - f) < 1e-13


def test_truncation_structure(grid, radial, fan):
    op = build_truncation(grid, KIN, fan, 8.0, 1, 2.0, phi=0.4)
    assert op.dimension == grid.n_modes * grid.N_r
    assert np.abs(op.matrix - op.matrix.conj().T).max() < 1e-12
    assert np.allclose(np.diag(op.shifted() - op.matrix), -2.0j)
    # radial potential at omega = 0: blocks are the averaged mode matrices
    rad = build_truncation(grid, KIN, radial, 0.0, 0, 1.0)
    for m in (-2, 0, 3):
        assert np.abs(rad.block(m, m) - averaged_mode_matrix(grid, KIN, radial, m)).max() < 1e-12
    assert np.abs(rad.block(0, 1)).max() == 0
    # the fan only couples modes three apart
    assert np.abs(op.block(0, 3)).max() > 0 and np.abs(op.block(0, 1)).max() == 0
    with pytest.raises(ValueError):
        build_truncation(grid, KIN, fan, 8.0, 1, 0.0)


def test_potential_matrix_is_multiplication(grid, fan):
    f = gauss_l2(grid)
    lhs = potential_matrix(fan) @ to_basis(f)
    rhs = to_basis(multiply(f, potential_at_time(fan, 0.0, 0.0)))
    assert np.linalg.norm(lhs - rhs) < 1e-12


def test_phi_shift_is_a_rotation(grid, fan):
    phi = 0.7
    r = np.repeat(np.exp(-1j * grid.m_values * phi), grid.N_r)
    rotated = (r[:, None] * potential_matrix(fan)) * np.conj(r)[None, :]
    assert np.abs(potential_matrix(fan, phi) - rotated).max() < 1e-13


def test_resolvent_apply_bounds_and_residual(grid, fan):
    op = build_truncation(grid, KIN, fan, 4.0, 0, 1.5)
    rhs = to_basis(gauss_mixed(grid))
    x = resolvent_apply(op, rhs)
    assert np.linalg.norm(op.shifted() @ x - rhs) < 1e-10
    assert np.linalg.norm(x) <= np.linalg.norm(rhs) / 1.5 + 1e-12


def test_projection_and_pure_mode(grid):
    v = to_basis(gauss_mixed(grid))
    assert pure_mode(grid, v) is None
    p = project_basis(grid, v, 2)
    assert pure_mode(grid, p) == 2
    assert np.linalg.norm(p - to_basis(project(gauss_mixed(grid), 2))) < 1e-13
    assert pure_mode(grid, to_basis(gauss_l0(grid))) == 0
    assert pure_mode(grid, np.zeros_like(v)) is None


def test_spectral_cut_removes_high_energies(grid, radial):
    base = mode_state(grid, 1)
    cut = spectral_cut_state(grid, KIN, radial, base, 1, 3.0)
    assert pure_mode(grid, cut) == 1
    full = to_basis(project(base, 1))
    assert np.linalg.norm(cut) < np.linalg.norm(full)
    again = spectral_cut_state(grid, KIN, radial, from_basis(grid, cut), 1, 3.0)
    assert np.linalg.norm(again - cut) < 1e-12


def test_default_zeta(fan):
    assert default_zeta(None) == 2.0
    assert default_zeta(fan) == 2.0


def test_limres1_exact_on_the_kept_mode(grid, radial):
    rhs = to_basis(project(mode_state(grid, 0), 0))
    rhs /= np.linalg.norm(rhs)
    table = limres1_check(grid, KIN, radial, 0, 2.0, (8.0, 32.0, 128.0), rhs)
    assert table.checks == {"exact_on_P_l": True}
    assert table.column("deviation").max() < 1e-12


def test_limres1_decays_like_one_over_omega(grid, radial):
    rhs = spectral_cut_state(grid, KIN, radial, mode_state(grid, 1), 1, 3.0)
    rhs /= np.linalg.norm(rhs)
    table = limres1_check(grid, KIN, radial, 0, 2.0, (8.0, 16.0, 32.0, 64.0, 128.0), rhs, mu_max=3.0)
    assert table.checks["slope_minus_one"] and table.checks["envelope"]
    assert table.status == "pass"


def test_resolvent_limit_small(grid, fan):
    rhs = to_basis(gauss_l0(grid))
    phis = np.linspace(0, 2 * np.pi, 4, endpoint=False)
    table = resolv_limit_check(grid, KIN, fan, 0, 2.0, (8.0, 128.0), phis, rhs)
    assert len(table.rows) == 8
    assert table.checks["decay_factor_4"] and table.checks["phi_uniform"]
    assert np.all(table.column("neumann_first") <= 0.5 * table.column("deviation") + 1e-15)
    with pytest.raises(ValueError):
        resolv_limit_check(grid, KIN, fan, 0, 0.4, (8.0,), phis, rhs)
