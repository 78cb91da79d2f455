"""Norms, energy ledgers, the hypocoercivity functional and decay exponents.

Conventions
-----------
* ``‖∂^k f‖²`` is computed as ``‖Λ^k f‖²`` (multinomial identity), so
  ``‖f‖²_{H^m} = Σ_{k≤m} ‖Λ^k f‖²``.
* Pair norms follow ``‖(u, η)‖²_X = ‖u‖²_X + ‖η‖²_X``.
* ``L^p`` norms with ``p != 2`` use collocation quadrature on the ``n`` grid,
  with the pointwise Euclidean magnitude for vector fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import ModelParams, State, perturbed_terms
from .spectral import (
    GridSpec,
    NegativeOrderOnNonzeroMean,
    SpectralScalar,
    SpectralVector,
    lambda_multiplier,
    to_physical,
)

NORM_KINDS = ("L2", "L4", "Linf", "Hm", "HdotS", "HmCapHdotNeg")


@dataclass(frozen=True)
class NormRequest:
    kind: str
    m: int | None = None
    s: float | None = None

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"norm kind must be one of {NORM_KINDS}, got {self.kind!r}")
        if self.kind in ("Hm", "HmCapHdotNeg"):
            if self.m is None or int(self.m) != self.m or self.m < 0:
                raise ValueError("Hm norms need an integer m >= 0")
        if self.kind in ("HdotS", "HmCapHdotNeg") and self.s is None:
            raise ValueError(f"{self.kind} needs s")

    @classmethod
    def hm(cls, m: int) -> "NormRequest":
        return cls("Hm", m=m)

    @classmethod
    def hdot(cls, s: float) -> "NormRequest":
        return cls("HdotS", s=s)


def _blocks(x) -> list[np.ndarray]:
    """Coefficient blocks ``(c, ...)``: one per vector or scalar field."""
    if isinstance(x, State):
        return [x.u.stack(), x.eta.coeffs[None]]
    if isinstance(x, SpectralVector):
        return [x.stack()]
    if isinstance(x, SpectralScalar):
        return [x.coeffs[None]]
    if isinstance(x, (tuple, list)):
        return [b for item in x for b in _blocks(item)]
    raise TypeError(f"cannot take a norm of {type(x).__name__}")


def _grid(x) -> GridSpec:
    if isinstance(x, (tuple, list)):
        return _grid(x[0])
    return x.grid


def _weighted_sq(blocks, grid, weight) -> float:
    return grid.volume * float(sum(np.sum(weight * np.abs(b) ** 2) for b in blocks))


def _check_mean(blocks, exclude_mean):
    if exclude_mean:
        return
    for b in blocks:
        for comp in b:
            mean = abs(comp.flat[0])
            if mean > 1e-13 * math.sqrt(float(np.sum(np.abs(comp) ** 2))):
                raise NegativeOrderOnNonzeroMean(
                    f"negative-order norm of a field with mean {mean:.3e}"
                )


def hm_weight(grid: GridSpec, m: int) -> np.ndarray:
    k2 = grid.k_squared
    return sum(k2**j for j in range(int(m) + 1))


def norm(x, req: NormRequest, exclude_mean: bool = False) -> float:
    """Norm of a field, vector, state or tuple of those.

    ``exclude_mean=True`` drops the zero mode for negative orders instead of
    raising :class:`NegativeOrderOnNonzeroMean`.
    """
    grid = _grid(x)
    blocks = _blocks(x)
    if req.kind == "L2":
        return math.sqrt(_weighted_sq(blocks, grid, 1.0))
    if req.kind in ("L4", "Linf"):
        total = 0.0
        for b in blocks:
            mag = np.sqrt(np.sum(to_physical(b, grid) ** 2, axis=0))
            if req.kind == "Linf":
                total += float(mag.max()) ** 2
            else:
                total += math.sqrt(float(np.sum(mag**4)) * grid.cell_volume)
        return math.sqrt(total)
    if req.kind == "Hm":
        return math.sqrt(_weighted_sq(blocks, grid, hm_weight(grid, req.m)))
    s = req.s
    if req.kind == "HdotS":
        if s < 0:
            _check_mean(blocks, exclude_mean)
        return math.sqrt(_weighted_sq(blocks, grid, lambda_multiplier(grid, 2 * s)))
    # HmCapHdotNeg: the negative-order part uses Λ^{-s}
    _check_mean(blocks, exclude_mean)
    neg = _weighted_sq(blocks, grid, lambda_multiplier(grid, -2 * abs(s)))
    return math.sqrt(_weighted_sq(blocks, grid, hm_weight(grid, req.m)) + neg)


def ubar(state: State) -> SpectralScalar:
    """Component of the velocity perturbation along ``e₁``."""
    return state.u[0]


# ---------------------------------------------------------------------------
# energy ledger

# coefficient of each dissipation entry in the energy identity
DISSIPATION_WEIGHTS = {
    "grad_u": 1.0,
    "div_u": 1.0,
    "ubar": 2.0,
    "grad_eta": 1.0,
    "e1_grad_u": 1.0,
    "l4": 1.0,
}

# flux label -> nonlinear term of perturbed_terms
FLUX_TERMS = {
    "I": "transport",
    "II": "cubic",
    "III": "e1_usq",
    "IV": "ubar_u",
    "V": "density_flux",
    "VI": "nested",
}


@dataclass
class OrderLedger:
    """Terms of ``d/dt E_k + Σ w·D = Σ F`` at one derivative order ``k``.

    ``dissipation`` holds the bare squared norms; :data:`DISSIPATION_WEIGHTS`
    gives their coefficients. ``flux`` holds the nonlinear integrals
    ``∫ ∂^k N · ∂^k (u, η)``. At ``k = 0`` the cubic flux is carried as the
    ``l4`` dissipation instead.
    """

    k: int
    energy: float
    dissipation: dict[str, float]
    flux: dict[str, float]
    dEdt: float | None = None

    @property
    def total_dissipation(self) -> float:
        return sum(DISSIPATION_WEIGHTS[name] * v for name, v in self.dissipation.items())

    @property
    def total_flux(self) -> float:
        return sum(self.flux.values())

    @property
    def residual(self) -> float | None:
        if self.dEdt is None:
            return None
        return self.dEdt + self.total_dissipation - self.total_flux


@dataclass
class EnergyLedger:
    t: float
    model: str
    orders: dict[int, OrderLedger] = field(default_factory=dict)

    def flat(self) -> dict[str, float]:
        out = {}
        for k, o in self.orders.items():
            out[f"E{k}"] = o.energy
            out[f"D{k}"] = o.total_dissipation
            out[f"F{k}"] = o.total_flux
            for name, v in o.flux.items():
                out[f"F{k}.{name}"] = v
        return out


def _l4_exact(u: np.ndarray, grid: GridSpec) -> float:
    # quartic integrand of band-limited fields is integrated exactly on 2n points
    m = 2 * grid.n
    mag2 = np.sum(to_physical(u, grid, m) ** 2, axis=0)
    return float(np.sum(mag2**2)) * (grid.box_length / m) ** grid.d


def energy_ledger(
    state: State,
    model: str,
    orders=(0,),
    dEdt: dict[int, float] | None = None,
) -> EnergyLedger:
    """Evaluate every named integral of the ``k``-th order energy identity."""
    grid = state.grid
    d = grid.d
    X = state.stacked()
    u, eta = X[:d], X[d]
    vol = grid.volume
    k2 = grid.k_squared
    k1 = np.broadcast_to(grid.k[0], grid.shape)
    div = sum(kk * u[j] for j, kk in enumerate(grid.k))
    terms = perturbed_terms(X, grid, model)
    ledger = EnergyLedger(state.t, model)
    for k in orders:
        w = lambda_multiplier(grid, 2 * k) if k else np.ones(grid.shape)
        diss = {
            "grad_u": vol * float(np.sum(w * k2 * np.abs(u) ** 2)),
            "div_u": vol * float(np.sum(w * np.abs(div) ** 2)),
            "ubar": vol * float(np.sum(w * np.abs(u[0]) ** 2)),
        }
        if model == "PPTT":
            diss["grad_eta"] = vol * float(np.sum(w * k2 * np.abs(eta) ** 2))
        else:
            diss["e1_grad_u"] = vol * float(np.sum(w * k1**2 * np.abs(u) ** 2))
        if k == 0:
            diss["l4"] = _l4_exact(u, grid)
        flux = {}
        for label, name in FLUX_TERMS.items():
            if name not in terms or (k == 0 and label == "II"):
                continue
            flux[label] = vol * float(np.sum(w * (terms[name] * np.conj(X)).real))
        energy = 0.5 * vol * float(np.sum(w * np.abs(X) ** 2))
        rate = None if dEdt is None else dEdt.get(k)
        ledger.orders[k] = OrderLedger(k, energy, diss, flux, rate)
    return ledger


def energy_rate(state: State, params: ModelParams, k: int) -> float:
    """Exact ``d/dt ½‖∂^k(u, η)‖²`` of the semi-discrete system at ``state``."""
    from .models import rhs

    grid = state.grid
    X = state.stacked()
    dX = rhs(state, params).stacked()
    w = lambda_multiplier(grid, 2 * k) if k else np.ones(grid.shape)
    return grid.volume * float(np.sum(w * (dX * np.conj(X)).real))


def ledger_residuals(ledgers: list[EnergyLedger]) -> list[EnergyLedger]:
    """Fill ``dEdt`` by centered differences along a stored trajectory.

    Endpoints use one-sided differences.
    """
    n = len(ledgers)
    if n < 2:
        raise ValueError("need at least two ledger samples")
    ts = np.array([lg.t for lg in ledgers])
    for k in ledgers[0].orders:
        E = np.array([lg.orders[k].energy for lg in ledgers])
        rates = np.gradient(E, ts)
        for lg, r in zip(ledgers, rates):
            lg.orders[k].dEdt = float(r)
    return ledgers


# ---------------------------------------------------------------------------
# hypocoercivity functional


@dataclass(frozen=True)
class HypoFunctional:
    m: int
    delta0: float
    value: float
    hm_squared: float
    cross_terms: tuple[float, ...]


def cross_term(state: State, k: int) -> float:
    """``∫ ∂^k u · ∂^k ∇η dx`` under the ``Λ^k`` convention."""
    grid = state.grid
    X = state.stacked()
    w = lambda_multiplier(grid, 2 * k) if k else np.ones(grid.shape)
    grad_eta = np.stack([1j * kk * X[grid.d] for kk in grid.k_odd])
    return grid.volume * float(np.sum(w * (X[: grid.d] * np.conj(grad_eta)).real))


def hypo_functional(state: State, m: int = 3, delta0: float = 0.1) -> HypoFunctional:
    if not 0 < delta0 < 1:
        raise ValueError("delta0 must lie in (0, 1)")
    crosses = tuple(cross_term(state, k) for k in range(m))
    hm2 = norm(state, NormRequest.hm(m)) ** 2
    return HypoFunctional(m, delta0, hm2 + delta0 * sum(crosses), hm2, crosses)


# ---------------------------------------------------------------------------
# decay exponents


def beta_exponent(d: int, m: int) -> float:
    """Nonpositive exponent fixing the admissible negative-Sobolev index."""
    a = d / 2 + m - 1
    return (a - math.sqrt(a * a + 8 * m - 2 * d * m - 2 * d)) / 2


@dataclass(frozen=True)
class DecayParams:
    """Negative-Sobolev index ``s`` and target order ``l`` of a decay run.

    ``s = 0`` is accepted only for ``d = m = 3``, where ``β(3, 3) = 0``.
    ``theorem_hypothesis`` records whether ``s >= -β(d, m)`` also holds.
    """

    d: int
    m: int
    s: float
    l: float
    model: str = "PPTT"

    def __post_init__(self):
        errors = decay_param_errors(self.d, self.m, self.s, self.l, self.model)
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def beta(self) -> float:
        return beta_exponent(self.d, self.m)

    @property
    def theorem_hypothesis(self) -> bool:
        return self.s >= -self.beta

    @property
    def expected_slope(self) -> float:
        return -(self.s + self.l) / 2


def decay_param_errors(d, m, s, l, model="PPTT") -> list[str]:
    errors = []
    if d not in (2, 3):
        errors.append("d ∈ {2,3} required")
        return errors
    if int(m) != m or m < 3:
        errors.append("m must be an integer >= 3")
        return errors
    if d == 3 and m == 3:
        if not 0 <= s < d / 2:
            errors.append(f"s must satisfy 0 <= s < d/2 for (d,m) = (3,3), got {s}")
    elif not 0 < s < d / 2:
        errors.append(f"decay lemma hypothesis 0 < s < d/2 violated: s = {s}, d/2 = {d / 2}")
    top = m if model == "PPTT" else m - 1
    if not -s < l <= top:
        errors.append(f"l must satisfy -s < l <= {top} for {model}, got l = {l}")
    return errors
