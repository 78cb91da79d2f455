import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tonertu import oracle
from tonertu.models import (
    FormMismatch,
    LinearPropagator,
    ModelParams,
    State,
    apply_modes,
    exact_linear_propagator,
    linear_mode_matrix,
    mode_matrices,
    perturbed_linear,
    perturbed_nonlinear,
    perturbed_terms,
    primitive_terms,
    rhs,
    rhs_pptt_perturbed,
    rhs_pptt_primitive,
    rhs_tt_perturbed,
    rhs_tt_primitive,
    steady_state,
    steady_state_fields,
    to_perturbation,
    to_primitive,
)
from tonertu.spectral import hermitian_defect, make_grid, transform_forward

from conftest import random_state

PRIM = {"TT": rhs_tt_primitive, "PPTT": rhs_pptt_primitive}
PERT = {"TT": rhs_tt_perturbed, "PPTT": rhs_pptt_perturbed}


def stacked_from_physical(grid, *fields):
    return np.stack([transform_forward(f, grid).coeffs for f in fields])


# --- parameters and steady states -----------------------------------------


def test_steady_normalized():
    rho, v = steady_state(ModelParams())
    assert rho == 1.0
    np.testing.assert_array_equal(v, [1.0, 0.0])


def test_steady_scaled():
    rho, v = steady_state(ModelParams(alpha=4.0, beta_damp=1.0, rho_s=2.0, form="primitive"))
    assert rho == 2.0
    np.testing.assert_allclose(v, [2.0, 0.0])


@pytest.mark.parametrize("bad", [dict(alpha=0), dict(beta_damp=-1), dict(rho_s=0), dict(e_dir=(1.0, 1.0)), dict(model="X")])
def test_params_rejected(bad):
    with pytest.raises(ValueError):
        ModelParams(**bad)


@pytest.mark.parametrize("model", ["TT", "PPTT"])
@given(
    alpha=st.floats(0.1, 5),
    beta=st.floats(0.1, 5),
    rho=st.floats(0.1, 5),
    theta=st.floats(0, 2 * math.pi),
    slope=st.floats(0.1, 3),
)
def test_primitive_rhs_vanishes_at_steady_state(model, alpha, beta, rho, theta, slope):
    g = make_grid(2, 8)
    p = ModelParams(model, "primitive", alpha, beta, slope, rho, (math.cos(theta), math.sin(theta)))
    st_ = steady_state_fields(g, p)
    out = PRIM[model](st_, p).stacked()
    assert np.abs(out).max() <= 1e-12 * (1 + np.abs(st_.stacked()).max())


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_primitive_rest_with_constant_density(model, grid8):
    p = ModelParams(model, "primitive")
    st_ = State.constant(grid8, [0.0, 0.0], 2.5)
    assert np.abs(PRIM[model](st_, p).stacked()).max() == 0


def test_pptt_primitive_density_mode(grid16):
    # v = 0, ρ = c + ε cos(k·x): tendency is (-∇ρ, Δρ)
    p = ModelParams("PPTT", "primitive")
    eps, c = 1e-2, 1.3
    x, y = grid16.coordinates()
    phase = 2 * x + y
    X = stacked_from_physical(grid16, 0 * x, 0 * x, c + eps * np.cos(phase))
    out = rhs_pptt_primitive(State.from_stacked(grid16, X), p).stacked()
    ref = stacked_from_physical(
        grid16, 2 * eps * np.sin(phase), eps * np.sin(phase), -5 * eps * np.cos(phase)
    )
    np.testing.assert_allclose(out, ref, atol=1e-15)


def test_form_mismatch(grid8):
    st_ = State.zeros(grid8)
    with pytest.raises(FormMismatch):
        rhs_tt_primitive(st_, ModelParams("TT", "perturbation"))
    with pytest.raises(FormMismatch):
        rhs_tt_perturbed(st_, ModelParams("TT", "primitive"))
    with pytest.raises(ValueError):
        rhs_pptt_perturbed(st_, ModelParams("PPTT", alpha=2.0))


# --- perturbation form ------------------------------------------------------


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_zero_is_fixed(model, grid8):
    assert np.abs(PERT[model](State.zeros(grid8)).stacked()).max() == 0


@pytest.mark.parametrize("model", ["TT", "PPTT"])
@pytest.mark.parametrize("d,n", [(2, 8), (2, 16), (3, 8)])
def test_primitive_perturbation_consistency(model, d, n):
    g = make_grid(d, n)
    pert = random_state(g, seed=n + d, amplitude=0.2)
    p = ModelParams(model, "primitive")
    prim = to_primitive(pert)
    a = PRIM[model](prim, p).stacked()
    b = PERT[model](pert).stacked()
    assert np.abs(a - b).max() <= 1e-11 * np.abs(b).max()
    np.testing.assert_allclose(to_perturbation(prim).stacked(), pert.stacked(), atol=1e-15)


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_perturbed_terms_match_convolution(model, grid8):
    X = random_state(grid8, seed=11, amplitude=0.3).stacked()
    fast = perturbed_terms(X, grid8, model)
    ref = oracle.perturbed_terms(X, grid8, model)
    assert fast.keys() == ref.keys()
    for name in ref:
        assert np.abs(fast[name] - ref[name]).max() <= 1e-10 * max(np.abs(ref[name]).max(), 1e-300)
    total = perturbed_nonlinear(X, grid8, model)
    np.testing.assert_allclose(total, sum(ref.values()), atol=1e-14)


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_primitive_terms_match_convolution(model, grid8):
    p = ModelParams(model, "primitive", alpha=1.5, beta_damp=0.7, rho_s=2.0)
    X = random_state(grid8, seed=12, amplitude=0.3).stacked() + steady_state_fields(grid8, p).stacked()
    fast = primitive_terms(X, grid8, p)
    ref = oracle.primitive_terms(X, grid8, p)
    for name in ref:
        assert np.abs(fast[name] - ref[name]).max() <= 1e-10 * max(np.abs(ref[name]).max(), 1e-300)


@pytest.mark.parametrize("model", ["TT", "PPTT"])
@given(seed=st.integers(0, 10**6))
def test_density_tendency_has_zero_mean(model, seed):
    g = make_grid(2, 16)
    st_ = random_state(g, seed, 0.3)
    eta_t = PERT[model](st_).eta.coeffs
    assert abs(eta_t[0, 0]) <= 1e-13 * np.abs(st_.stacked()).max()


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_tendency_is_real(model, grid16):
    out = PERT[model](random_state(grid16, 3, 0.3)).stacked()
    assert max(hermitian_defect(c, 2) for c in out) <= 1e-12


# --- mode matrices ----------------------------------------------------------


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_mode_matrix_at_zero(model):
    M = linear_mode_matrix([0.0, 0.0], model).entries
    expected = np.zeros((3, 3))
    expected[0, 0] = -2
    np.testing.assert_array_equal(M, expected)


def test_tt_mode_single_mode_example(grid16):
    # u = ε e₂ cos(x₁), η = 0: tendency from the linear part equals M(k̂₁) action
    eps = 1e-3
    x, y = grid16.coordinates()
    X = stacked_from_physical(grid16, 0 * x, eps * np.cos(x), 0 * x)
    lin = perturbed_linear(X, grid16, "TT")
    # -(|k|² + k₁²) cos x₁ - e₁·∇ cos x₁  = -2 cos x₁ + sin x₁
    ref = stacked_from_physical(grid16, 0 * x, eps * (-2 * np.cos(x) + np.sin(x)), 0 * x)
    np.testing.assert_allclose(lin, ref, atol=1e-15)
    M = linear_mode_matrix([1.0, 0.0], "TT").entries
    np.testing.assert_allclose(lin[:, 1, 0], M @ X[:, 1, 0], atol=1e-16)


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_linear_part_is_mode_matrix_action(model, grid16):
    X = random_state(grid16, 4, 1.0).stacked()
    lin = perturbed_linear(X, grid16, model)
    np.testing.assert_allclose(apply_modes(mode_matrices(grid16, model), X), lin, atol=1e-12)
    # the linear part is rhs minus nonlinear terms
    full = rhs(State.from_stacked(grid16, X), ModelParams(model)).stacked()
    np.testing.assert_allclose(full - perturbed_nonlinear(X, grid16, model), lin, atol=1e-12)


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_mode_spectrum_stable(model):
    j = np.arange(-32, 33)
    kx, ky = np.meshgrid(j, j, indexing="ij")
    sel = kx**2 + ky**2 <= 32**2
    k = np.stack([kx[sel], ky[sel]]).astype(float)
    from tonertu.models import _mode_entries

    M = _mode_entries(k, model)
    assert np.linalg.eigvals(M).real.max() <= 1e-12
    herm = M + np.conj(np.swapaxes(M, -1, -2))
    assert np.linalg.eigvalsh(herm).max() <= 1e-12


# --- exact propagator ---------------------------------------------------------


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_propagator_identity_at_zero(model, grid8):
    st_ = random_state(grid8, 0)
    np.testing.assert_array_equal(exact_linear_propagator(st_, 0.0, model).stacked(), st_.stacked())


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_propagator_matches_expm(model, grid8):
    import scipy.linalg

    X = random_state(grid8, 2, 1.0).stacked()
    out = LinearPropagator(grid8, model).propagate(X, 0.7)
    Ms = mode_matrices(grid8, model)
    for idx in [(0, 0), (1, 0), (2, 3), (5, 7), (4, 4)]:
        ref = scipy.linalg.expm(0.7 * Ms[idx]) @ X[(slice(None),) + idx]
        np.testing.assert_allclose(out[(slice(None),) + idx], ref, atol=1e-13)


def test_propagator_heat_factor_on_decoupled_mode():
    # with the u-η coupling removed, the PPTT η row reduces to e^{(-|k|² - ik₁)t};
    # at k ⊥ e₁ this is the pure heat factor
    M = linear_mode_matrix([0.0, 3.0], "PPTT").entries.copy()
    M[:2, 2] = 0
    M[2, :2] = 0
    import scipy.linalg

    E = scipy.linalg.expm(0.25 * M)
    assert E[2, 2] == pytest.approx(math.exp(-9 * 0.25), rel=1e-14)


@pytest.mark.parametrize("model", ["TT", "PPTT"])
def test_propagator_semigroup(model, grid16):
    X = random_state(grid16, 9, 1.0).stacked()
    P = LinearPropagator(grid16, model)
    np.testing.assert_allclose(P.propagate(P.propagate(X, 0.3), 0.4), P.propagate(X, 0.7), atol=1e-13)
