"""Right-hand sides, steady states and linear mode operators for TT and PPTT.

Two variable sets are supported. The primitive form evolves ``(v, ρ)`` with
general ``α, β``, pressure slope, steady density and alignment direction.
The perturbation form evolves ``(u, η) = (v - e₁, ρ - 1)`` with the
normalization ``α = β = ρ_s = 1`` and ``e = e₁``.

Internally fields are stacked into one complex array ``X`` of shape
``(d + 1, n, ..., n)``: rows ``0..d-1`` are velocity components and row ``d``
is the scalar. All first-order symbols use the Nyquist-free wavenumbers
``grid.k_odd`` so the Nyquist plane is inert under every operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .spectral import (
    GridMismatch,
    GridSpec,
    SpectralScalar,
    SpectralVector,
    to_physical,
    to_spectral,
)

MODELS = ("TT", "PPTT")
FORMS = ("perturbation", "primitive")


class FormMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    model: str = "TT"
    form: str = "perturbation"
    alpha: float = 1.0
    beta_damp: float = 1.0
    pressure_slope: float = 1.0
    rho_s: float = 1.0
    e_dir: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive (ordered phase)")
        if not self.beta_damp > 0:
            raise ValueError("beta_damp must be positive")
        if not self.rho_s > 0:
            raise ValueError("rho_s must be positive")
        if self.e_dir is not None:
            e = np.asarray(self.e_dir, dtype=float)
            object.__setattr__(self, "e_dir", tuple(float(x) for x in e))
            if abs(np.linalg.norm(e) - 1.0) > 1e-12:
                raise ValueError(f"e_dir must be a unit vector, |e| = {np.linalg.norm(e)}")

    @property
    def is_tt(self) -> bool:
        return self.model == "TT"

    def direction(self, d: int) -> np.ndarray:
        if self.e_dir is None:
            e = np.zeros(d)
            e[0] = 1.0
            return e
        if len(self.e_dir) != d:
            raise ValueError(f"e_dir has {len(self.e_dir)} components, grid has d={d}")
        return np.asarray(self.e_dir)

    @property
    def is_normalized(self) -> bool:
        e_ok = self.e_dir is None or (self.e_dir[0] == 1.0 and not any(self.e_dir[1:]))
        return (
            self.alpha == 1.0
            and self.beta_damp == 1.0
            and self.rho_s == 1.0
            and self.pressure_slope == 1.0
            and e_ok
        )

    def with_form(self, form: str) -> "ModelParams":
        return ModelParams(
            self.model, form, self.alpha, self.beta_damp, self.pressure_slope, self.rho_s, self.e_dir
        )


@dataclass(frozen=True, eq=False)
class State:
    """Velocity-like vector and density-like scalar at time ``t``."""

    u: SpectralVector
    eta: SpectralScalar
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.eta.grid:
            raise GridMismatch("velocity and scalar live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.eta.grid

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u.stack(), self.eta.coeffs[None]])

    @classmethod
    def from_stacked(cls, grid: GridSpec, X: np.ndarray, t: float = 0.0) -> "State":
        d = grid.d
        return cls(SpectralVector.from_array(grid, X[:d]), SpectralScalar(grid, X[d]), float(t))

    @classmethod
    def zeros(cls, grid: GridSpec, t: float = 0.0) -> "State":
        return cls.from_stacked(grid, np.zeros((grid.d + 1,) + grid.shape, dtype=complex), t)

    @classmethod
    def constant(cls, grid: GridSpec, velocity, scalar: float, t: float = 0.0) -> "State":
        X = np.zeros((grid.d + 1,) + grid.shape, dtype=complex)
        origin = (0,) * grid.d
        for i, vi in enumerate(velocity):
            X[(i,) + origin] = vi
        X[(grid.d,) + origin] = scalar
        return cls.from_stacked(grid, X, t)

    def with_time(self, t: float) -> "State":
        return State(self.u, self.eta, float(t))


def steady_state(params: ModelParams, d: int = 2) -> tuple[float, np.ndarray]:
    """Ordered steady state ``(ρ_s, v_s) = (c, sqrt(α/β) e)``."""
    return params.rho_s, math.sqrt(params.alpha / params.beta_damp) * params.direction(d)


def steady_state_fields(grid: GridSpec, params: ModelParams) -> State:
    rho, v = steady_state(params, grid.d)
    if params.form == "perturbation":
        return State.zeros(grid)
    return State.constant(grid, v, rho)


# ---------------------------------------------------------------------------
# nonlinear terms


def _grad(grid, A):
    """``out[j] = ∂_j A`` for a stacked array ``A`` (extra leading axis)."""
    return np.stack([1j * k * A for k in grid.k_odd])


def _advect(phys_a, phys_grad_b):
    # (a·∇)b_i = Σ_j a_j ∂_j b_i
    return np.einsum("j...,ji...->i...", phys_a, phys_grad_b)


def _div(grid, F):
    return sum(1j * k * F[j] for j, k in enumerate(grid.k_odd))


def perturbed_terms(X: np.ndarray, grid: GridSpec, model: str) -> dict[str, np.ndarray]:
    """Nonlinear tendencies of the perturbation system, one entry per term.

    Every entry has the stacked shape ``(d + 1, ...)``. Names follow the
    energy-identity numbering used by :mod:`tonertu.diagnostics`:
    ``transport`` ``-u·∇u``, ``cubic`` ``-|u|²u``, ``e1_usq`` ``-e₁|u|²``,
    ``ubar_u`` ``-2ūu``, ``density_flux`` ``-∇·(ηu)`` and, for TT,
    ``nested`` ``(u+e₁)·∇((u+e₁)·∇u) - e₁·∇(e₁·∇u)``.
    """
    d = grid.d
    m = grid.padded_size(3)
    u = X[:d]
    pu = to_physical(u, grid, m)
    pdu = to_physical(_grad(grid, u), grid, m)
    peta = to_physical(X[d], grid, m)
    usq = np.sum(pu**2, axis=0)
    adv = _advect(pu, pdu)

    def vec(phys):
        out = np.zeros_like(X)
        out[:d] = to_spectral(phys, grid)
        return out

    terms = {
        "transport": vec(-adv),
        "cubic": vec(-usq * pu),
        "e1_usq": np.zeros_like(X),
        "ubar_u": vec(-2 * pu[0] * pu),
        "density_flux": np.zeros_like(X),
    }
    terms["e1_usq"][0] = to_spectral(-usq, grid)
    terms["density_flux"][d] = -_div(grid, to_spectral(peta * pu, grid))
    if model == "TT":
        w = -terms["transport"][:d]
        z = w + 1j * grid.k_odd[0] * u
        nested = vec(_advect(pu, to_physical(_grad(grid, z), grid, m)))
        nested[:d] += 1j * grid.k_odd[0] * w
        terms["nested"] = nested
    return terms


def perturbed_nonlinear(X: np.ndarray, grid: GridSpec, model: str) -> np.ndarray:
    """Sum of :func:`perturbed_terms`, with fewer transforms."""
    d = grid.d
    m = grid.padded_size(3)
    u = X[:d]
    pu = to_physical(u, grid, m)
    pdu = to_physical(_grad(grid, u), grid, m)
    peta = to_physical(X[d], grid, m)
    usq = np.sum(pu**2, axis=0)
    adv = _advect(pu, pdu)
    phys = -adv - usq * pu - 2 * pu[0] * pu
    phys[0] -= usq
    out = np.empty_like(X)
    extra = 0.0
    if model == "TT":
        w = to_spectral(adv, grid)
        z = w + 1j * grid.k_odd[0] * u
        phys += _advect(pu, to_physical(_grad(grid, z), grid, m))
        extra = 1j * grid.k_odd[0] * w
    out[:d] = to_spectral(phys, grid) + extra
    out[d] = -_div(grid, to_spectral(peta * pu, grid))
    return out


def primitive_terms(X: np.ndarray, grid: GridSpec, params: ModelParams) -> dict[str, np.ndarray]:
    """Nonlinear (and activity) tendencies of the primitive system."""
    d = grid.d
    m = grid.padded_size(3)
    v = X[:d]
    pv = to_physical(v, grid, m)
    pdv = to_physical(_grad(grid, v), grid, m)
    prho = to_physical(X[d], grid, m)
    vsq = np.sum(pv**2, axis=0)
    adv = _advect(pv, pdv)

    def vec(arr):
        out = np.zeros_like(X)
        out[:d] = arr
        return out

    terms = {
        "transport": vec(-to_spectral(adv, grid)),
        "activity": vec(params.alpha * v),
        "cubic": vec(-params.beta_damp * to_spectral(vsq * pv, grid)),
        "density_flux": np.zeros_like(X),
    }
    terms["density_flux"][d] = -_div(grid, to_spectral(prho * pv, grid))
    if params.is_tt:
        w = to_spectral(adv, grid)
        terms["nested"] = vec(to_spectral(_advect(pv, to_physical(_grad(grid, w), grid, m)), grid))
    return terms


def primitive_nonlinear(X: np.ndarray, grid: GridSpec, params: ModelParams) -> np.ndarray:
    return sum(primitive_terms(X, grid, params).values())


# ---------------------------------------------------------------------------
# linear parts, assembled from derivative operators


def perturbed_linear(X: np.ndarray, grid: GridSpec, model: str) -> np.ndarray:
    d = grid.d
    k = grid.k_odd
    u, eta = X[:d], X[d]
    div_u = sum(1j * k[j] * u[j] for j in range(d))
    lap = -sum(kk**2 for kk in k)
    out = np.empty_like(X)
    for i in range(d):
        ui = -1j * k[0] * u[i] + 1j * k[i] * div_u + lap * u[i] - 1j * k[i] * eta
        if model == "TT":
            ui = ui - k[0] ** 2 * u[i]
        out[i] = ui
    out[0] -= 2 * u[0]
    out[d] = -div_u - 1j * k[0] * eta
    if model == "PPTT":
        out[d] += lap * eta
    return out


def primitive_linear(X: np.ndarray, grid: GridSpec, params: ModelParams) -> np.ndarray:
    """Viscous, pressure and (PPTT) density-diffusion terms of the primitive form."""
    d = grid.d
    k = grid.k_odd
    v, rho = X[:d], X[d]
    div_v = sum(1j * k[j] * v[j] for j in range(d))
    lap = -sum(kk**2 for kk in k)
    out = np.empty_like(X)
    for i in range(d):
        out[i] = 1j * k[i] * div_v + lap * v[i] - params.pressure_slope * 1j * k[i] * rho
    out[d] = lap * rho if params.model == "PPTT" else 0.0
    return out


def _require_perturbation(state: State, params: ModelParams | None, model: str):
    if params is not None:
        if params.form != "perturbation":
            raise FormMismatch("perturbation RHS called with primitive-form parameters")
        if not params.is_normalized:
            raise ValueError("perturbation form requires α = β = ρ_s = 1 and e = e₁")
        if params.model != model:
            raise FormMismatch(f"parameters are for {params.model}, RHS is {model}")


def _require_primitive(params: ModelParams, model: str):
    if params.form != "primitive":
        raise FormMismatch("primitive RHS called with perturbation-form parameters")
    if params.model != model:
        raise FormMismatch(f"parameters are for {params.model}, RHS is {model}")


def _perturbed_rhs(state: State, model: str) -> State:
    X = state.stacked()
    grid = state.grid
    dX = perturbed_linear(X, grid, model) + perturbed_nonlinear(X, grid, model)
    return State.from_stacked(grid, dX, state.t)


def rhs_tt_perturbed(state: State, params: ModelParams | None = None) -> State:
    _require_perturbation(state, params, "TT")
    return _perturbed_rhs(state, "TT")


def rhs_pptt_perturbed(state: State, params: ModelParams | None = None) -> State:
    _require_perturbation(state, params, "PPTT")
    return _perturbed_rhs(state, "PPTT")


def _primitive_rhs(state: State, params: ModelParams) -> State:
    X = state.stacked()
    grid = state.grid
    params.direction(grid.d)
    dX = primitive_linear(X, grid, params) + primitive_nonlinear(X, grid, params)
    return State.from_stacked(grid, dX, state.t)


def rhs_tt_primitive(state: State, params: ModelParams) -> State:
    _require_primitive(params, "TT")
    return _primitive_rhs(state, params)


def rhs_pptt_primitive(state: State, params: ModelParams) -> State:
    _require_primitive(params, "PPTT")
    return _primitive_rhs(state, params)


def rhs(state: State, params: ModelParams) -> State:
    """Dispatch on ``params.model`` and ``params.form``."""
    if params.form == "primitive":
        return _primitive_rhs(state, params)
    _require_perturbation(state, params, params.model)
    return _perturbed_rhs(state, params.model)


def to_perturbation(state: State) -> State:
    """``(v, ρ) -> (v - e₁, ρ - 1)`` for the normalized steady state."""
    X = state.stacked().copy()
    origin = (0,) * state.grid.d
    X[(0,) + origin] -= 1.0
    X[(state.grid.d,) + origin] -= 1.0
    return State.from_stacked(state.grid, X, state.t)


def to_primitive(state: State) -> State:
    X = state.stacked().copy()
    origin = (0,) * state.grid.d
    X[(0,) + origin] += 1.0
    X[(state.grid.d,) + origin] += 1.0
    return State.from_stacked(state.grid, X, state.t)


# ---------------------------------------------------------------------------
# per-mode linear operator


@dataclass(frozen=True, eq=False)
class ModeMatrix:
    k_vec: np.ndarray
    entries: np.ndarray = field(repr=False)


def _mode_entries(k: np.ndarray, model: str) -> np.ndarray:
    """Batched mode matrices; ``k`` has shape ``(d, ...)``, result ``(..., d+1, d+1)``."""
    d = k.shape[0]
    batch = k.shape[1:]
    k2 = np.sum(k**2, axis=0)
    M = np.zeros(batch + (d + 1, d + 1), dtype=complex)
    diag = -k2 - 1j * k[0]
    if model == "TT":
        diag = diag - k[0] ** 2
    for i in range(d):
        for j in range(d):
            M[..., i, j] = -k[i] * k[j]
        M[..., i, i] += diag
        M[..., i, d] = -1j * k[i]
        M[..., d, i] = -1j * k[i]
    M[..., 0, 0] -= 2.0
    M[..., d, d] = -1j * k[0] - (k2 if model == "PPTT" else 0.0)
    return M


def linear_mode_matrix(k_vec, model: str) -> ModeMatrix:
    """Linearization of the perturbation system about ``(0, 0)`` at one wavevector."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    k = np.asarray(k_vec, dtype=float)
    return ModeMatrix(k, _mode_entries(k, model))


def mode_matrices(grid: GridSpec, model: str) -> np.ndarray:
    """All mode matrices of a grid, shape ``grid.shape + (d+1, d+1)``."""
    k = np.stack([np.broadcast_to(kk, grid.shape) for kk in grid.k_odd])
    return _mode_entries(k, model)


def primitive_mode_matrices(grid: GridSpec, params: ModelParams) -> np.ndarray:
    d = grid.d
    k = np.stack([np.broadcast_to(kk, grid.shape) for kk in grid.k_odd])
    k2 = np.sum(k**2, axis=0)
    M = np.zeros(grid.shape + (d + 1, d + 1), dtype=complex)
    for i in range(d):
        for j in range(d):
            M[..., i, j] = -k[i] * k[j]
        M[..., i, i] -= k2
        M[..., i, d] = -1j * params.pressure_slope * k[i]
    if params.model == "PPTT":
        M[..., d, d] = -k2
    return M


def apply_modes(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``(M X)`` mode by mode for ``M`` of shape ``(..., p, p)`` and ``X`` of shape ``(p, ...)``."""
    return np.einsum("...ij,j...->i...", M, X)


class LinearPropagator:
    """Exact flow ``exp(t M(k))`` of the linearized perturbation system.

    Mode matrices are diagonalized once; modes whose eigenvector basis is
    ill-conditioned fall back to :func:`scipy.linalg.expm` on every call.
    """

    def __init__(self, grid: GridSpec, model: str, cond_limit: float = 1e6):
        self.grid = grid
        self.model = model
        Ms = mode_matrices(grid, model)
        self._M = Ms
        flat = Ms.reshape(-1, grid.d + 1, grid.d + 1)
        w, V = np.linalg.eig(flat)
        Vinv = np.linalg.inv(V)
        cond = np.linalg.norm(V, axis=(1, 2)) * np.linalg.norm(Vinv, axis=(1, 2))
        self._bad = np.flatnonzero(~np.isfinite(cond) | (cond > cond_limit))
        self._w, self._V, self._Vinv = w, V, Vinv

    def propagate(self, X: np.ndarray, t: float) -> np.ndarray:
        p = self.grid.d + 1
        x = np.moveaxis(X, 0, -1).reshape(-1, p)
        c = np.einsum("nij,nj->ni", self._Vinv, x)
        c *= np.exp(self._w * t)
        y = np.einsum("nij,nj->ni", self._V, c)
        flat = self._M.reshape(-1, p, p)
        for idx in self._bad:
            y[idx] = scipy.linalg.expm(t * flat[idx]) @ x[idx]
        return np.moveaxis(y.reshape(self.grid.shape + (p,)), -1, 0)


_PROPAGATORS: dict[tuple, LinearPropagator] = {}


def exact_linear_propagator(state: State, t: float, model: str) -> State:
    """Apply ``exp(t M(k))`` to every mode of a perturbation-form state."""
    key = (state.grid, model)
    if key not in _PROPAGATORS:
        _PROPAGATORS.clear()
        _PROPAGATORS[key] = LinearPropagator(state.grid, model)
    prop = _PROPAGATORS[key]
    if t == 0:
        return state
    X = prop.propagate(state.stacked(), t)
    return State.from_stacked(state.grid, X, state.t + t)
