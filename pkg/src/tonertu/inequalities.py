"""Randomized numerical checks of Sobolev-type inequalities on the torus.

Each inequality is evaluated as a ratio ``LHS / RHS`` on mean-zero random
band-limited fields. Items with constant one (the interpolation inequality)
are asserted; for the others only the ensemble supremum is reported.

Norm conventions: ``L²``-type factors of ``∂^k`` use ``Λ^k``; ``L^∞``
factors of derivative tensors take the largest sup norm over the ``d^k``
components; other ``L^p`` factors use the pointwise Euclidean magnitude of
the tensor. ``L^p`` norms are collocation quadratures.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import dumps_record
from .diagnostics import beta_exponent
from .spectral import (
    GridSpec,
    NegativeOrderOnNonzeroMean,
    SpectralScalar,
    lambda_multiplier,
    to_physical,
    to_spectral,
    truncate,
)

# ---------------------------------------------------------------------------
# random fields


@dataclass(frozen=True)
class Spectrum:
    kind: str = "flat"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("flat", "power", "gaussian"):
            raise ValueError(f"unknown spectrum {self.kind!r}")
        if self.kind != "flat" and self.param is None:
            raise ValueError(f"spectrum {self.kind} needs a parameter")

    @classmethod
    def parse(cls, text) -> "Spectrum":
        """Accept ``"flat"``, ``"power(-1.5)"``, ``"gaussian(4)"`` or a ``Spectrum``."""
        if isinstance(text, Spectrum):
            return text
        text = str(text).strip()
        if "(" in text:
            kind, rest = text.split("(", 1)
            return cls(kind.strip(), float(rest.rstrip(") ")))
        return cls(text)

    def amplitude(self, kmag: np.ndarray) -> np.ndarray:
        if self.kind == "flat":
            return np.ones_like(kmag)
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                return np.where(kmag > 0, np.where(kmag > 0, kmag, 1.0) ** self.param, 0.0)
        return np.exp(-(kmag**2) / (2 * self.param**2))

    def __str__(self):
        return self.kind if self.param is None else f"{self.kind}({self.param:g})"


def random_band_limited(grid: GridSpec, spectrum="flat", seed=0) -> SpectralScalar:
    """Real, mean-zero field with ``|û_k|`` set by ``spectrum`` and random phases."""
    spec = Spectrum.parse(spectrum)
    rng = np.random.default_rng(seed)
    noise = to_spectral(rng.standard_normal(grid.shape), grid)
    mag = np.abs(noise)
    phase = np.where(mag > 0, noise / np.where(mag > 0, mag, 1.0), 0.0)
    coeffs = truncate(phase * spec.amplitude(grid.k_magnitude), grid)
    coeffs[(0,) * grid.d] = 0.0
    return SpectralScalar(grid, coeffs)


def single_mode(grid: GridSpec, mode, amplitude: complex = 1.0) -> SpectralScalar:
    """Real field ``a e^{ik·x} + conj`` built from one integer mode index."""
    mode = tuple(int(j) for j in mode)
    if not any(mode) or any(abs(j) >= grid.n // 2 for j in mode):
        raise ValueError(f"mode {mode} is zero or unresolved")
    coeffs = np.zeros(grid.shape, dtype=complex)
    coeffs[tuple(j % grid.n for j in mode)] += amplitude
    coeffs[tuple(-j % grid.n for j in mode)] += np.conj(amplitude)
    return SpectralScalar(grid, coeffs)


@dataclass(frozen=True)
class TrialEnsemble:
    count: int
    spectrum: Spectrum | str = "flat"
    seed: int = 0
    grid: GridSpec | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.grid is None:
            raise ValueError("an ensemble needs a grid")
        object.__setattr__(self, "spectrum", Spectrum.parse(self.spectrum))

    def trial_seed(self, i: int) -> int:
        return self.seed * 1_000_003 + i

    def fields(self, i: int, nfields: int) -> list[SpectralScalar]:
        s = self.trial_seed(i)
        return [random_band_limited(self.grid, self.spectrum, (s, j)) for j in range(nfields)]

    def doubled(self) -> "TrialEnsemble":
        return TrialEnsemble(2 * self.count, self.spectrum, self.seed, self.grid)


# ---------------------------------------------------------------------------
# norm helpers


def _require_mean_zero(f: SpectralScalar):
    if abs(f.mean) > 1e-13 * max(f.coeff_norm(), 1e-300):
        raise NegativeOrderOnNonzeroMean("inequality requires a mean-zero field")


def hdot(f: SpectralScalar, s: float) -> float:
    if s < 0:
        _require_mean_zero(f)
    w = lambda_multiplier(f.grid, 2 * s)
    return math.sqrt(f.grid.volume * float(np.sum(w * np.abs(f.coeffs) ** 2)))


def hs(f: SpectralScalar, s: float) -> float:
    """Inhomogeneous norm: ``Σ_{j≤s} ‖Λ^j f‖²`` for integer ``s``, else ``‖f‖² + ‖Λ^s f‖²``."""
    if s < 0:
        raise ValueError("inhomogeneous norm needs s >= 0")
    if float(s).is_integer():
        return math.sqrt(sum(hdot(f, j) ** 2 for j in range(int(s) + 1)))
    return math.sqrt(hdot(f, 0) ** 2 + hdot(f, s) ** 2)


def pair(*norms: float) -> float:
    return math.sqrt(sum(x * x for x in norms))


def lp(values: np.ndarray, p: float, cell: float) -> float:
    """``L^p`` quadrature of pointwise magnitudes ``values``."""
    if math.isinf(p):
        return float(np.abs(values).max())
    return (float(np.sum(np.abs(values) ** p)) * cell) ** (1 / p)


def derivative_components(coeffs: np.ndarray, grid: GridSpec, k: int) -> np.ndarray:
    """All ``d^k`` ordered derivatives ``∂_{i1}…∂_{ik}`` stacked on a leading axis."""
    if k == 0:
        return coeffs[None]
    out = []
    for tup in itertools.product(range(grid.d), repeat=k):
        c = coeffs
        for axis in tup:
            c = 1j * grid.k_odd[axis] * c
        out.append(c)
    return np.stack(out)


def derivative_lp(coeffs: np.ndarray, grid: GridSpec, k: int, p: float) -> float:
    """``‖∂^k f‖_{L^p}`` for one field or a stack of fields (leading axis)."""
    if coeffs.ndim == grid.d:
        coeffs = coeffs[None]
    comps = np.concatenate([derivative_components(c, grid, k) for c in coeffs])
    phys = to_physical(comps, grid)
    if math.isinf(p):
        return float(np.abs(phys).max())
    return lp(np.sqrt(np.sum(phys**2, axis=0)), p, grid.cell_volume)


def fine_grid(grid: GridSpec) -> GridSpec:
    return GridSpec(grid.d, 2 * grid.n, grid.box_length, grid.dealias)


def refine(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Coefficients of ``f`` re-expressed on the doubled grid (exact embedding)."""
    fg = fine_grid(grid)
    return to_spectral(to_physical(f, grid, fg.n), fg)


def exact_product(f: np.ndarray, g: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Untruncated product of two resolved fields, on the doubled grid."""
    fg = fine_grid(grid)
    vals = to_physical(f, grid, fg.n) * to_physical(g, grid, fg.n)
    return to_spectral(vals, fg)


# ---------------------------------------------------------------------------
# individual inequalities


def check_interpolation(u: SpectralScalar, s1: float, s: float, s2: float) -> float:
    """``‖u‖_{Ḣ^s} / (‖u‖_{Ḣ^{s1}}^θ ‖u‖_{Ḣ^{s2}}^{1-θ})`` with ``θ = (s2-s)/(s2-s1)``."""
    if not s1 < s < s2:
        raise ValueError(f"need s1 < s < s2, got ({s1}, {s}, {s2})")
    _require_mean_zero(u)
    theta = (s2 - s) / (s2 - s1)
    return hdot(u, s) / (hdot(u, s1) ** theta * hdot(u, s2) ** (1 - theta))


def commutator(u: list[np.ndarray], v: np.ndarray, grid: GridSpec, gamma) -> np.ndarray:
    """``∂^γ(u·∇v) - u·∇∂^γ v`` exactly, as coefficients on the doubled grid."""
    fg = fine_grid(grid)

    def dgamma(c, g):
        for axis, order in enumerate(gamma):
            c = (1j * g.k_odd[axis]) ** order * c
        return c

    adv = sum(exact_product(u[j], 1j * grid.k_odd[j] * v, grid) for j in range(grid.d))
    dv = dgamma(v, grid)
    back = sum(exact_product(u[j], 1j * grid.k_odd[j] * dv, grid) for j in range(grid.d))
    return dgamma(adv, fg) - back


def _gammas(d, k):
    """Ordered index tuples of length ``k`` as multi-indices."""
    for tup in itertools.product(range(d), repeat=k):
        yield tuple(tup.count(axis) for axis in range(d))


def commutator_lp(u, v, grid, k, p) -> float:
    fg = fine_grid(grid)
    comps = np.stack([commutator(u, v, grid, g) for g in _gammas(grid.d, k)])
    phys = to_physical(comps, fg)
    if math.isinf(p):
        return float(np.abs(phys).max())
    return lp(np.sqrt(np.sum(phys**2, axis=0)), p, fg.cell_volume)


def _grad_inf(f: SpectralScalar) -> float:
    return derivative_lp(f.coeffs, f.grid, 1, math.inf)


def _linf(f: SpectralScalar) -> float:
    return float(np.abs(f.physical()).max())


def _item_big_i(fields, k, s1, s2):
    (u,) = fields
    d = u.grid.d
    c = k + d / 2
    if not s1 < c < s2:
        raise ValueError(f"need s1 < k + d/2 < s2, got s1={s1}, k+d/2={c}, s2={s2}")
    theta = (s2 - c) / (s2 - s1)
    lhs = derivative_lp(u.coeffs, u.grid, k, math.inf)
    return lhs / (hdot(u, s1) ** theta * hdot(u, s2) ** (1 - theta))


def _item_big_ii(fields, s1, s, s2):
    (u,) = fields
    return check_interpolation(u, s1, s, s2)


def _item_big_iii(fields, s):
    u, v = fields
    if not s > 0:
        raise ValueError("item (iii) needs s > 0")
    fg = fine_grid(u.grid)
    uv = SpectralScalar(fg, exact_product(u.coeffs, v.coeffs, u.grid))
    rhs = _linf(u) * hdot(v, s) + _linf(v) * hdot(u, s)
    return hdot(uv, s) / rhs


def _item_big_iv(fields, k, p, p1, q1, p2, q2):
    grid = fields[0].grid
    d = grid.d
    for name, x in (("p", p), ("q1", q1), ("q2", q2)):
        if not 1 < x < math.inf:
            raise ValueError(f"item (iv) needs 1 < {name} < ∞, got {x}")
    if abs(1 / p - 1 / p1 - 1 / q1) > 1e-12 or abs(1 / p - 1 / p2 - 1 / q2) > 1e-12:
        raise ValueError("item (iv) needs 1/p = 1/p1 + 1/q1 = 1/p2 + 1/q2")
    u = [f.coeffs for f in fields[:d]]
    v = fields[d].coeffs
    lhs = commutator_lp(u, v, grid, k, p)
    rhs = derivative_lp(np.stack(u), grid, 1, p1) * derivative_lp(v, grid, k, q1)
    rhs += derivative_lp(v, grid, 1, p2) * derivative_lp(np.stack(u), grid, k, q2)
    return lhs / rhs


def _item_big_v(fields, s, p):
    (u,) = fields
    d = u.grid.d
    if not 0 < s < d:
        raise ValueError("item (v) needs 0 < s < d")
    inv_q = 1 / p - s / d
    if not (1 < p and inv_q > 0):
        raise ValueError(f"item (v) needs 1 < p < q < ∞, got p={p}, 1/q={inv_q}")
    q = 1 / inv_q
    _require_mean_zero(u)
    neg = u.coeffs * lambda_multiplier(u.grid, -s)
    cell = u.grid.cell_volume
    return lp(to_physical(neg, u.grid), q, cell) / lp(u.physical(), p, cell)


def _item_big_vi(fields, s):
    (u,) = fields
    d = u.grid.d
    if not 0 < s <= d / 2:
        raise ValueError("item (vi) needs 0 < s <= d/2")
    return lp(u.physical(), d / s, u.grid.cell_volume) / hdot(u, d / 2 - s)


def _item_aux_i(fields, k):
    u, v, w = fields
    d = u.grid.d
    if not k > 1:
        raise ValueError("auxiliary item (i) needs k > 1")
    sigma = (d - 2) * (k + 1) / (2 * (k - 1))
    lhs = _grad_inf(u) * hdot(v, k) * hdot(w, k)
    rhs = (hs(u, sigma) + pair(hdot(v, 0), hdot(w, 0))) * pair(*(hdot(f, k + 1) for f in fields)) ** 2
    return lhs / rhs


def _item_aux_ii(fields, k):
    u, v = fields
    d = u.grid.d
    if not k >= 1:
        raise ValueError("auxiliary item (ii) needs k >= 1")
    sigma = (d - 2) * (k + 1) / (2 * k)
    lhs = _linf(u) * hdot(v, k)
    rhs = (hs(u, sigma) + hdot(v, 0)) * pair(hdot(u, k + 1), hdot(v, k + 1))
    return lhs / rhs


def _item_aux_iii(fields, k):
    u, v = fields
    d = u.grid.d
    if not k >= 1:
        raise ValueError("auxiliary item (iii) needs k >= 1")
    sigma = (d - 2) * (k + 2) / (2 * k)
    lhs = _grad_inf(u) * hdot(v, k)
    rhs = (hs(u, sigma) + hdot(v, 0)) * pair(hdot(u, k + 2), hdot(v, k + 2))
    return lhs / rhs


def _item_aux_iv(fields, k):
    u, v = fields
    d = u.grid.d
    if not k > 1:
        raise ValueError("auxiliary item (iv) needs k > 1")
    b = beta_exponent(d, k)
    lhs = _linf(u) * hdot(v, k) ** 2
    rhs = pair(hdot(u, b), hdot(v, b)) * (hdot(u, k) ** 2 + hdot(v, k + 1) ** 2)
    return lhs / rhs


def _item_aux_v(fields, k):
    u, v = fields
    d = u.grid.d
    if not k > 1:
        raise ValueError("auxiliary item (v) needs k > 1")
    lhs = derivative_lp(u.coeffs, u.grid, 2, 2 * d) * hdot(v, k) ** 2
    rhs = pair(hs(u, 3), hs(v, 3)) * pair(hdot(u, k + 1), hdot(v, k + 1)) ** 2
    return lhs / rhs


def _item_aux_vi(fields):
    u, v, w = fields
    if u.grid.d != 3:
        raise ValueError("auxiliary item (vi) is stated for d = 3")
    lhs = _grad_inf(u) * hdot(v, 2) * hdot(w, 2)
    rhs = pair(*(hs(f, 1) for f in fields)) * pair(*(hdot(f, 3) for f in fields)) ** 2
    return lhs / rhs


# name -> (function, number of scalar fields; "d+1" for a vector plus a scalar)
ITEMS = {
    "big_i": (_item_big_i, 1),
    "big_ii": (_item_big_ii, 1),
    "big_iii": (_item_big_iii, 2),
    "big_iv": (_item_big_iv, "d+1"),
    "big_v": (_item_big_v, 1),
    "big_vi": (_item_big_vi, 1),
    "aux_i": (_item_aux_i, 3),
    "aux_ii": (_item_aux_ii, 2),
    "aux_iii": (_item_aux_iii, 2),
    "aux_iv": (_item_aux_iv, 2),
    "aux_v": (_item_aux_v, 2),
    "aux_vi": (_item_aux_vi, 3),
}

EXACT_CONSTANT = {"big_ii"}


def field_count(name: str, d: int) -> int:
    n = ITEMS[name][1]
    return d + 1 if n == "d+1" else n


def inequality_ratio(name: str, fields, **params) -> float:
    """``LHS / RHS`` of one inequality for concrete fields."""
    if name not in ITEMS:
        raise ValueError(f"unsupported inequality {name!r}")
    fn, _ = ITEMS[name]
    return float(fn(list(fields), **params))


@dataclass
class InequalityReport:
    name: str
    params: dict
    count: int
    max_ratio: float
    argmax_seed: int
    d: int
    n: int
    box_length: float
    spectrum: str
    ratios: list[float] = field(default_factory=list, repr=False)

    def record(self) -> dict:
        out = asdict(self)
        out.pop("ratios")
        return out


def check_ratio(name: str, ensemble: TrialEnsemble, params: dict | None = None) -> InequalityReport:
    """Supremum of ``LHS / RHS`` over an ensemble of random trials."""
    params = dict(params or {})
    grid = ensemble.grid
    nf = field_count(name, grid.d)
    ratios = []
    for i in range(ensemble.count):
        ratios.append(inequality_ratio(name, ensemble.fields(i, nf), **params))
    ratios_arr = np.array(ratios)
    if not np.all(np.isfinite(ratios_arr)):
        raise FloatingPointError(f"{name}: non-finite ratio")
    best = int(np.argmax(ratios_arr))
    report = InequalityReport(
        name,
        params,
        ensemble.count,
        float(ratios_arr[best]),
        ensemble.trial_seed(best),
        grid.d,
        grid.n,
        grid.box_length,
        str(ensemble.spectrum),
        ratios,
    )
    if name in EXACT_CONSTANT and report.max_ratio > 1 + 1e-9:
        raise AssertionError(f"{name} violated: ratio {report.max_ratio!r} > 1")
    return report


def sup_stability(name: str, ensemble: TrialEnsemble, params: dict | None = None, limit: float = 0.1):
    """Compare the supremum at ``count`` and ``2 count`` trials.

    Returns ``(report_n, report_2n, relative_change)`` and warns when the
    change exceeds ``limit``.
    """
    a = check_ratio(name, ensemble, params)
    b = check_ratio(name, ensemble.doubled(), params)
    change = abs(b.max_ratio - a.max_ratio) / a.max_ratio
    if change > limit:
        warnings.warn(
            f"{name} {params}: supremum moved by {change:.1%} when the ensemble doubled",
            stacklevel=2,
        )
    return a, b, change


def box_growth(name: str, ensemble: TrialEnsemble, params: dict | None = None, factors=(1, 2, 4)):
    """Ensemble suprema as the box grows at fixed mode spacing-to-cutoff ratio.

    The grid keeps its points per unit length, so each factor ``f`` uses
    ``n·f`` points on a box of length ``L·f`` and the band limit stays put
    while the lowest resolved wavenumber shrinks. Useful for items whose
    torus constant depends on the infrared.
    """
    g = ensemble.grid
    out = []
    for f in factors:
        grid = GridSpec(g.d, g.n * f, g.box_length * f, g.dealias)
        out.append(check_ratio(name, TrialEnsemble(ensemble.count, ensemble.spectrum, ensemble.seed, grid), params))
    return out


def default_matrix(d: int) -> list[tuple[str, dict]]:
    """Exponent instantiations exercised by ``verify-inequalities``."""
    p_pair = 2 * d / (d - 1)
    rows = [
        ("big_i", {"k": 0, "s1": 0.0, "s2": d / 2 + 1}),
        ("big_i", {"k": 1, "s1": 0.0, "s2": d / 2 + 2}),
        ("big_ii", {"s1": 0.0, "s": 1.0, "s2": 2.0}),
        ("big_ii", {"s1": -0.5, "s": 0.5, "s2": 2.0}),
        ("big_ii", {"s1": 1.0, "s": 2.0, "s2": 3.0}),
        ("big_iii", {"s": 1.0}),
        ("big_iii", {"s": 2.0}),
        ("big_iv", {"k": 1, "p": 2.0, "p1": math.inf, "q1": 2.0, "p2": math.inf, "q2": 2.0}),
        ("big_iv", {"k": 2, "p": 2.0, "p1": math.inf, "q1": 2.0, "p2": math.inf, "q2": 2.0}),
        ("big_iv", {"k": 2, "p": 2.0, "p1": 2.0 * d, "q1": p_pair, "p2": 2.0 * d, "q2": p_pair}),
        ("big_v", {"s": 0.5, "p": 1.5}),
        ("big_vi", {"s": 0.5}),
        ("aux_i", {"k": 2}),
        ("aux_ii", {"k": 1}),
        ("aux_ii", {"k": 2}),
        ("aux_iii", {"k": 1}),
        ("aux_iv", {"k": 2}),
        ("aux_iv", {"k": 3}),
        ("aux_v", {"k": 2}),
    ]
    if d == 3:
        rows.append(("aux_vi", {}))
    return rows


def write_reports(reports, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for r in reports:
            fh.write(dumps_record(r.record()) + "\n")
