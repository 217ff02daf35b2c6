import numpy as np
import pytest

from rotaprop.grid import make_grid, norm, to_momentum
from rotaprop.operators import Fan, KineticSpec, OffsetGaussian, apply_rotation, decompose_potential, sup_norm_W
from rotaprop.propagators import (
    Dynamics,
    SchemeConfig,
    SeriesDivergenceError,
    duhamel_residual,
    dynamics_for,
    evolve_averaged,
    evolve_reference,
    evolve_unperturbed,
    from_work,
    ident_check,
    product_formula_W,
    propagate,
    scheme_product,
    to_work,
    u_lin_factor,
    u_tilde_factor,
)
from rotaprop.states import build_state, gauss_l2, gauss_mixed

KIN = KineticSpec()


@pytest.fixture(scope="module")
def grid():
    return make_grid(40, 32, 10.0, 10.0)


@pytest.fixture(scope="module")
def fan(grid):
    return decompose_potential(Fan(), grid)


@pytest.fixture(scope="module")
def og(grid):
    return decompose_potential(OffsetGaussian(), make_grid(40, 96, 10.0, 10.0))


@pytest.fixture(scope="module")
def radial(grid):
    return decompose_potential(OffsetGaussian(distance=0.0), grid)


@pytest.fixture(scope="module")
def psi(grid):
    return gauss_mixed(grid)


def cfg(ap, scheme="reference", **kw):
    base = dict(omega=4.0, T=1.0, kinetic=KIN, potential=ap)
    base.update(kw)
    return SchemeConfig(scheme, **base)


def test_unperturbed_is_exact_and_unitary(grid, psi):
    out = evolve_unperturbed(psi, 0.8, 3.0, KIN)
    assert norm(out) == pytest.approx(1.0, abs=1e-12)
    twice = evolve_unperturbed(evolve_unperturbed(psi, 0.3, 3.0, KIN), 0.5, 3.0, KIN)
    assert norm(twice - out) < 1e-12
    assert norm(evolve_unperturbed(psi, 0.0, 3.0, KIN) - psi) < 1e-13


def test_unperturbed_matches_momentum_phases():
    fine = make_grid(96, 64, 14.0, 14.0)
    state = gauss_mixed(fine)
    out = evolve_unperturbed(state, 0.8, 3.0, KIN)
    direct = evolve_unperturbed(to_momentum(state), 0.8, 3.0, KIN)
    assert norm(to_momentum(out) - direct) < 1e-12


def test_unperturbed_rotation_factor(grid, psi):
    # exp(-it(H0 - omega J)) = R(-omega t) exp(-it H0)
    t, omega = 0.6, 2.5
    free = evolve_unperturbed(psi, t, 0.0, KIN)
    assert norm(evolve_unperturbed(psi, t, omega, KIN) - apply_rotation(free, -omega * t)) < 1e-12


def test_averaged_unitarity_group_law_and_order(og):
    dyn = dynamics_for(og.grid, KIN, og.radial_part())
    state = gauss_mixed(og.grid)
    work = to_work(state)
    exact = dyn.averaged_exact(1.0) @ work
    assert np.linalg.norm(exact) == pytest.approx(1.0, abs=1e-12)
    errs = [np.linalg.norm(dyn.averaged(1.0, n) @ work - exact) for n in (16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)
    split = dyn.averaged_exact(0.4) @ (dyn.averaged_exact(0.6) @ work)
    assert np.linalg.norm(split - exact) < 1e-12
    out = evolve_averaged(state, 1.0, 64, KIN, og)
    assert norm(out) == pytest.approx(1.0, abs=1e-12)


def test_averaged_accepts_arrays_and_none(grid, radial, psi):
    a = evolve_averaged(psi, 0.5, 32, KIN, radial)
    b = evolve_averaged(psi, 0.5, 32, KIN, radial.vbar)
    assert norm(a - b) < 1e-13
    free = evolve_averaged(psi, 0.5, 32, KIN, None)
    assert norm(free - evolve_unperturbed(psi, 0.5, 0.0, KIN)) < 1e-12


def test_reference_is_unitary_and_composes(fan, psi):
    c = cfg(fan, omega=8.0)
    full = evolve_reference(psi, 0.0, 1.0, c, 1024)
    assert norm(full) == pytest.approx(1.0, abs=1e-12)
    half = evolve_reference(evolve_reference(psi, 0.0, 0.4, c, 410), 0.4, 1.0, c, 614)
    assert norm(half - full) < 1e-6
    assert norm(evolve_reference(psi, 0.3, 0.3, c) - psi) < 1e-15


def test_reference_with_radial_potential_is_the_averaged_group(radial, psi):
    c = cfg(radial, omega=7.0)
    ref = evolve_reference(psi, 0.2, 1.2, c, 512)
    dyn = dynamics_for(radial.grid, KIN, radial)
    exact = from_work(radial.grid, dyn.averaged_exact(1.0) @ to_work(psi))[0]
    assert norm(ref - exact) < 1e-5


def test_duhamel_identity(fan, psi):
    assert duhamel_residual(psi, 0.0, 1.0, cfg(fan, n_sub=512), 32) < 1e-4
    with pytest.raises(ValueError):
        duhamel_residual(psi, 0.0, 1.0, cfg(fan), 2)


@pytest.mark.parametrize("omega,t1", [(10.0, 0.0), (3.0, 0.45)])
def test_rotating_frame_identity_converges_at_second_order(fan, psi, omega, t1):
    coarse = ident_check(psi, 0.1, t1, omega, fan, 1024)
    fine = ident_check(psi, 0.1, t1, omega, fan, 2048)
    assert fine < 1e-8
    assert np.log2(coarse / fine) > 1.9


def test_ident_trivial_for_radial_potential(radial, psi):
    assert ident_check(psi, 0.3, 0.0, 5.0, radial, 16) < 1e-12


def test_full_period_steps_reduce_to_averaged(fan, psi):
    omega = 2 * np.pi * 4  # T/n = 1/4 is exactly one period
    c = cfg(fan, omega=omega)
    lhs = product_formula_W(psi, 0.0, 1.0, 4, c)
    rhs = evolve_averaged(psi, 1.0, 4 * c.n_sub, KIN, fan)
    assert norm(lhs - rhs) < 1e-12


@pytest.mark.parametrize("scheme", ["averaged_plus_w", "trotter_inertial", "u_tilde", "u_lin"])
def test_schemes_without_remainder_equal_averaged(radial, psi, scheme):
    c = cfg(radial, scheme, n=4)
    out = propagate(psi, c).state
    ref = propagate(psi, c.with_(scheme="averaged_only", n_sub=4 * c.n_sub)).state
    assert norm(out - ref) < 1e-12


def test_schemes_are_unitary_except_linearized(fan, psi):
    for scheme in ("reference", "averaged_plus_w", "u_tilde", "averaged_only"):
        assert propagate(psi, cfg(fan, scheme, n=8)).norm_drift < 1e-10
    assert propagate(psi, cfg(fan, "u_lin", n=8)).norm_drift > 1e-6


def test_linearized_factor_is_within_second_order_of_exponential(fan, psi):
    dt = 0.3
    c = cfg(fan, omega=4.0)
    a = u_tilde_factor(psi, 0.1, 0.1 + dt, c)
    b = u_lin_factor(psi, 0.1, 0.1 + dt, c)
    bound = 0.5 * (dt * sup_norm_W(fan)) ** 2
    gap = norm(a - b)
    assert 0 < gap <= bound


def test_products_are_periodic_in_start_time(fan, psi):
    omega = 6.0
    c = cfg(fan, omega=omega)
    for which in ("u_tilde", "u_lin"):
        a = scheme_product(psi, 0.2, 1.0, 4, which, c)
        b = scheme_product(psi, 0.2 + 2 * np.pi / omega, 1.0, 4, which, c)
        assert norm(a - b) < 1e-11
    with pytest.raises(ValueError):
        scheme_product(psi, 0.0, 1.0, 4, "other", c)


def test_u_tilde_refuses_large_steps(fan, psi):
    with pytest.raises(SeriesDivergenceError):
        propagate(psi, cfg(fan, "u_tilde", T=4.0, n=1))


def test_u_tilde_converges_to_reference(fan, psi):
    c = cfg(fan, "u_tilde", omega=4.0)
    ref = evolve_reference(psi, 0.0, 1.0, c, 1024)
    errs = [norm(propagate(psi, c.with_(n=n)).state - ref) for n in (2, 8, 32)]
    assert errs[0] > errs[1] > errs[2]


def test_scheme_config_validation(fan):
    for bad in (dict(scheme="nope"), dict(n=0), dict(n_sub=0), dict(K_quad=0), dict(taylor_tol=1e-3)):
        kw = dict(scheme="reference")
        kw.update(bad)
        with pytest.raises(ValueError):
            cfg(fan, **kw)


def test_work_array_roundtrip(grid):
    states = [build_state(grid, s) for s in ("gauss_l0", "random:3")]
    back = from_work(grid, to_work(states))
    for a, b in zip(states, back):
        assert norm(a - b) < 1e-14
    assert isinstance(dynamics_for(grid, KIN, None), Dynamics)
    assert norm(gauss_l2(grid)) == pytest.approx(1.0, abs=1e-12)
