"""Brute-force Fourier-space reference computations for small grids.

Fields are held as centered arrays: a coefficient array of shape
``(2R + 1,) * d`` whose entry ``[R + j_1, ..., R + j_d]`` is the coefficient
of mode ``j``. Products are exact linear convolutions summed term by term,
with no FFT involved, and truncated back to the resolved band only when
asked to.
"""

from __future__ import annotations

import itertools
from math import comb

import numpy as np

from .spectral import GridSpec


def centered(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """FFT-ordered coefficients -> centered array with ``R = n/2 - 1``."""
    n, d = grid.n, grid.d
    h = n // 2
    idx = np.r_[n - h + 1 : n, 0:h]  # modes -(h-1) .. h-1
    return coeffs[np.ix_(*([idx] * d))].copy()


def uncentered(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Centered array (any radius) -> FFT-ordered resolved coefficients."""
    n, d = grid.n, grid.d
    h = n // 2
    R = (c.shape[0] - 1) // 2
    keep = min(R, h - 1)
    src = np.arange(R - keep, R + keep + 1)
    dst = np.arange(-keep, keep + 1) % n
    out = np.zeros(grid.shape, dtype=complex)
    out[np.ix_(*([dst] * d))] = c[np.ix_(*([src] * d))]
    return out


def convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact linear convolution of two centered arrays (double loop over ``a``)."""
    d = a.ndim
    ra = (a.shape[0] - 1) // 2
    rb = (b.shape[0] - 1) // 2
    out = np.zeros((2 * (ra + rb) + 1,) * d, dtype=complex)
    nb = b.shape[0]
    for p in itertools.product(range(a.shape[0]), repeat=d):
        ap = a[p]
        if ap == 0:
            continue
        sl = tuple(slice(pi, pi + nb) for pi in p)
        out[sl] += ap * b
    return out


def wavenumbers(c: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    R = (c.shape[0] - 1) // 2
    j = np.arange(-R, R + 1) * grid.k_min
    out = []
    for axis in range(grid.d):
        s = [1] * grid.d
        s[axis] = 2 * R + 1
        out.append(j.reshape(s))
    return out


def deriv(c: np.ndarray, grid: GridSpec, axis: int, order: int = 1) -> np.ndarray:
    return (1j * wavenumbers(c, grid)[axis]) ** order * c


def pad(c: np.ndarray, R: int) -> np.ndarray:
    r = (c.shape[0] - 1) // 2
    if r == R:
        return c
    out = np.zeros((2 * R + 1,) * c.ndim, dtype=complex)
    sl = tuple(slice(R - r, R + r + 1) for _ in range(c.ndim))
    out[sl] = c
    return out


def add(*cs: np.ndarray) -> np.ndarray:
    R = max((c.shape[0] - 1) // 2 for c in cs)
    return sum(pad(c, R) for c in cs)


def product(grid: GridSpec, *factors: np.ndarray) -> np.ndarray:
    """Truncated exact product of FFT-ordered factors."""
    acc = centered(factors[0], grid)
    for f in factors[1:]:
        acc = convolve(acc, centered(f, grid))
    return uncentered(acc, grid)


# ---------------------------------------------------------------------------
# reference nonlinear terms


def _ik(grid, axis):
    return 1j * grid.k_odd[axis]


def perturbed_terms(X: np.ndarray, grid: GridSpec, model: str) -> dict[str, np.ndarray]:
    """Same terms as :func:`tonertu.models.perturbed_terms`, by direct convolution."""
    d = grid.d
    u = X[:d]
    eta = X[d]
    du = [[_ik(grid, j) * u[i] for i in range(d)] for j in range(d)]
    adv = [sum(product(grid, u[j], du[j][i]) for j in range(d)) for i in range(d)]
    usq_c = add(*[convolve(centered(u[j], grid), centered(u[j], grid)) for j in range(d)])
    terms = {name: np.zeros_like(X) for name in ("transport", "cubic", "e1_usq", "ubar_u", "density_flux")}
    for i in range(d):
        terms["transport"][i] = -adv[i]
        terms["cubic"][i] = -uncentered(convolve(usq_c, centered(u[i], grid)), grid)
        terms["ubar_u"][i] = -2 * product(grid, u[0], u[i])
    terms["e1_usq"][0] = -uncentered(usq_c, grid)
    terms["density_flux"][d] = -sum(_ik(grid, j) * product(grid, eta, u[j]) for j in range(d))
    if model == "TT":
        nested = np.zeros_like(X)
        for i in range(d):
            acc = _ik(grid, 0) * adv[i]
            for j in range(d):
                acc = acc + product(grid, u[j], _ik(grid, j) * adv[i])
                acc = acc + product(grid, u[j], _ik(grid, j) * _ik(grid, 0) * u[i])
            nested[i] = acc
        terms["nested"] = nested
    return terms


def primitive_terms(X: np.ndarray, grid: GridSpec, params) -> dict[str, np.ndarray]:
    d = grid.d
    v = X[:d]
    rho = X[d]
    adv = [sum(product(grid, v[j], _ik(grid, j) * v[i]) for j in range(d)) for i in range(d)]
    vsq_c = add(*[convolve(centered(v[j], grid), centered(v[j], grid)) for j in range(d)])
    terms = {name: np.zeros_like(X) for name in ("transport", "activity", "cubic", "density_flux")}
    for i in range(d):
        terms["transport"][i] = -adv[i]
        terms["activity"][i] = params.alpha * v[i]
        terms["cubic"][i] = -params.beta_damp * uncentered(convolve(vsq_c, centered(v[i], grid)), grid)
    terms["density_flux"][d] = -sum(_ik(grid, j) * product(grid, rho, v[j]) for j in range(d))
    if params.is_tt:
        nested = np.zeros_like(X)
        for i in range(d):
            nested[i] = sum(product(grid, v[j], _ik(grid, j) * adv[i]) for j in range(d))
        terms["nested"] = nested
    return terms


# ---------------------------------------------------------------------------
# commutators


def multi_derivative(c: np.ndarray, grid: GridSpec, gamma) -> np.ndarray:
    """Apply ``∂^γ`` (multi-index ``gamma``) to a centered array."""
    out = c
    for axis, g in enumerate(gamma):
        if g:
            out = deriv(out, grid, axis, g)
    return out


def commutator_leibniz(u: list[np.ndarray], v: np.ndarray, grid: GridSpec, gamma) -> np.ndarray:
    """``[∂^γ, u·∇] v`` from the Leibniz expansion, as an exact centered array.

    ``Σ_{0<β≤γ} C(γ,β) ∂^β u_j ∂^{γ-β} ∂_j v``.
    """
    d = grid.d
    uc = [centered(x, grid) for x in u]
    vc = centered(v, grid)
    parts = []
    for beta in itertools.product(*[range(g + 1) for g in gamma]):
        if not any(beta):
            continue
        coef = np.prod([comb(g, b) for g, b in zip(gamma, beta)])
        rest = tuple(g - b for g, b in zip(gamma, beta))
        for j in range(d):
            a = multi_derivative(uc[j], grid, beta)
            b = deriv(multi_derivative(vc, grid, rest), grid, j)
            parts.append(coef * convolve(a, b))
    if not parts:
        return np.zeros_like(vc)
    return add(*parts)
