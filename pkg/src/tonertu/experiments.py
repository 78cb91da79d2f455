"""Experiment configuration, initial data, runs, decay fits and small-grid oracles.

Configs are INI text with the sections ``model``, ``grid``, ``stepper``,
``init``, ``diagnostics`` and ``output``. Numeric values may be simple
arithmetic in ``pi`` (``L = 400*pi``).
"""

from __future__ import annotations

import ast
import configparser
import itertools
import logging
import math
import operator
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.stats

from . import oracle
from .checkpoint import RecordWriter, write_checkpoint
from .diagnostics import (
    NormRequest,
    decay_param_errors,
    energy_ledger,
    hypo_functional,
    norm,
)
from .inequalities import commutator, fine_grid
from .models import (
    MODELS,
    LinearPropagator,
    ModelParams,
    State,
    _mode_entries,
    perturbed_linear,
    perturbed_terms,
    primitive_terms,
    steady_state_fields,
)
from .spectral import DEALIAS_RULES, GridSpec, to_spectral, truncate
from .timestepper import (
    SCHEMES,
    IMEXStepper,
    StepperConfig,
    cfl_dt,
    h3_norm_stacked,
    integrate,
    make_system,
    plan_steps,
)

log = logging.getLogger(__name__)

INIT_KINDS = ("low_freq_bump", "power_profile", "random_small")
RUN_MODES = ("nonlinear", "linear")


class ConfigError(ValueError):
    """Every violated constraint of a config, one message per entry."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


# ---------------------------------------------------------------------------
# config


@dataclass
class ModelSpec:
    kind: str = "PPTT"
    form: str = "perturbation"
    alpha: float = 1.0
    beta: float = 1.0
    pressure_slope: float = 1.0
    rho_s: float = 1.0

    def params(self) -> ModelParams:
        return ModelParams(self.kind, self.form, self.alpha, self.beta, self.pressure_slope, self.rho_s)


@dataclass
class GridConfig:
    d: int = 2
    n: int = 32
    L: float = 2 * math.pi
    dealias: str = "one-half"

    def grid(self) -> GridSpec:
        return GridSpec(self.d, self.n, self.L, self.dealias)


@dataclass
class StepperSpec:
    scheme: str = "imex-rk2"
    dt: float | None = None
    t_end: float = 1.0
    output_every: int = 1
    output_interval: float | None = None
    safety: float = 0.5
    blowup_factor: float = 1e3
    mode: str = "nonlinear"

    def config(self) -> StepperConfig:
        return StepperConfig(
            self.scheme,
            self.dt,
            self.t_end,
            self.output_every,
            self.output_interval,
            self.safety,
            self.blowup_factor,
        )


@dataclass
class InitSpec:
    kind: str = "low_freq_bump"
    epsilon: float = 1e-3
    a: float | None = None
    k0: float = 1.0
    seed: int = 0


@dataclass
class DiagnosticsSpec:
    m: int = 3
    ledger_orders: tuple[int, ...] = (0,)
    delta0: float = 0.1
    s: float | None = None
    l: tuple[float, ...] = (0.0, 1.0)
    fit_window: tuple[float, float] = (10.0, 100.0)
    fit_tolerance: float = 0.15
    envelope_factor: float = 2.0
    oracle_tolerance: float = 1e-10
    steady_steps: int = 1000
    ineq_count: int = 1000
    ineq_spectrum: str = "flat"


@dataclass
class OutputSpec:
    dir: str = "out"
    series: str = "series.jsonl"
    checkpoint: str = "final.ttlb"

    @property
    def series_path(self) -> Path:
        return Path(self.dir) / self.series

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.dir) / self.checkpoint


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    grid: GridConfig = field(default_factory=GridConfig)
    stepper: StepperSpec = field(default_factory=StepperSpec)
    init: InitSpec = field(default_factory=InitSpec)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        errors = config_errors(self)
        if errors:
            raise ConfigError(errors)


SECTIONS = {
    "model": ModelSpec,
    "grid": GridConfig,
    "stepper": StepperSpec,
    "init": InitSpec,
    "diagnostics": DiagnosticsSpec,
    "output": OutputSpec,
}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}


def eval_number(text: str) -> float:
    """Evaluate numeric literals with ``pi``, ``+ - * / **`` and parentheses."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(f"not a number: {text!r}")

    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except SyntaxError as exc:
        raise ValueError(f"not a number: {text!r}") from exc


def _convert(default, raw: str, name: str):
    raw = raw.strip()
    if name in ("dt", "output_interval", "a", "s"):
        return None if raw in ("", "none", "None") else eval_number(raw)
    if name in ("ledger_orders",):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if name in ("l", "fit_window"):
        vals = tuple(eval_number(x) for x in raw.replace(",", " ").split())
        if name == "fit_window" and len(vals) != 2:
            raise ValueError("fit_window needs two numbers")
        return vals
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        v = eval_number(raw)
        if v != int(v):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    if isinstance(default, float):
        return eval_number(raw)
    return raw


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    """Parse and validate config text; ``overrides`` are ``section.key=value`` strings."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (grid.L)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"parse error: {exc}"]) from exc
    errors = []
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            errors.append(f"override {item!r} is not section.key=value")
            continue
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key.strip(), value)

    cfg = ExperimentConfig()
    for section in cp.sections():
        if section not in SECTIONS:
            errors.append(f"[{section}]: unknown section")
            continue
        obj = getattr(cfg, section)
        for key, raw in cp.items(section):
            if not hasattr(obj, key):
                errors.append(f"{section}.{key}: unknown key")
                continue
            try:
                setattr(obj, key, _convert(getattr(type(obj)(), key), raw, key))
            except (ValueError, ZeroDivisionError) as exc:
                errors.append(f"{section}.{key}: {exc}")
    errors += config_errors(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return parse_config(text, overrides)


def config_errors(cfg: ExperimentConfig) -> list[str]:
    errs = []
    m, g, st, ini, dg = cfg.model, cfg.grid, cfg.stepper, cfg.init, cfg.diagnostics
    if m.kind not in MODELS:
        errs.append(f"model.kind: must be one of {MODELS}, got {m.kind!r}")
    if m.form not in ("perturbation", "primitive"):
        errs.append(f"model.form: must be perturbation or primitive, got {m.form!r}")
    for key in ("alpha", "beta", "rho_s"):
        if not getattr(m, key) > 0:
            errs.append(f"model.{key}: must be positive")
    if m.form == "perturbation" and (m.alpha, m.beta, m.pressure_slope, m.rho_s) != (1, 1, 1, 1):
        errs.append("model: perturbation form requires alpha = beta = pressure_slope = rho_s = 1")
    if g.d not in (2, 3):
        errs.append(f"grid.d: d ∈ {{2,3}} required, got {g.d}")
    if g.n < 8 or g.n % 2:
        errs.append(f"grid.n: must be even and >= 8, got {g.n}")
    if not g.L > 0:
        errs.append("grid.L: must be positive")
    if g.dealias not in DEALIAS_RULES:
        errs.append(f"grid.dealias: must be one of {DEALIAS_RULES}")
    if st.scheme not in SCHEMES:
        errs.append(f"stepper.scheme: must be one of {tuple(SCHEMES)}")
    if st.mode not in RUN_MODES:
        errs.append(f"stepper.mode: must be one of {RUN_MODES}")
    if st.mode == "linear" and m.form != "perturbation":
        errs.append("stepper.mode: linear propagation needs the perturbation form")
    try:
        st.config()
    except ValueError as exc:
        errs.append(f"stepper: {exc}")
    if ini.kind not in INIT_KINDS:
        errs.append(f"init.kind: must be one of {INIT_KINDS}")
    if not ini.epsilon > 0:
        errs.append(f"init.epsilon: must be positive, got {ini.epsilon}")
    if not ini.k0 > 0:
        errs.append("init.k0: must be positive")
    if ini.kind == "power_profile" and ini.a is None:
        errs.append("init.a: power_profile needs a spectral exponent")
    if not 0 < dg.delta0 < 1:
        errs.append("diagnostics.delta0: must lie in (0, 1)")
    if dg.m < 3:
        errs.append("diagnostics.m: must be >= 3")
    if any(k < 0 for k in dg.ledger_orders):
        errs.append("diagnostics.ledger_orders: orders must be >= 0")
    t1, t2 = dg.fit_window
    if not 0 <= t1 < t2:
        errs.append("diagnostics.fit_window: need 0 <= t1 < t2")
    if not dg.fit_tolerance > 0:
        errs.append("diagnostics.fit_tolerance: must be positive")
    if dg.s is not None and g.d in (2, 3):
        for l in dg.l:
            errs += [f"diagnostics.s/l: {e}" for e in decay_param_errors(g.d, dg.m, dg.s, l, m.kind)]
        if ini.kind == "power_profile" and ini.a is not None and 2 * ini.a - 2 * dg.s <= -g.d:
            errs.append(
                f"init.a: power_profile needs 2a - 2s > -d for a finite negative norm (a={ini.a}, s={dg.s})"
            )
    return sorted(set(errs), key=errs.index)


# ---------------------------------------------------------------------------
# initial data


def _random_phases(grid: GridSpec, rng) -> np.ndarray:
    noise = to_spectral(rng.standard_normal(grid.shape), grid)
    mag = np.abs(noise)
    return np.where(mag > 0, noise / np.where(mag > 0, mag, 1.0), 0.0)


def profile_amplitude(grid: GridSpec, spec: InitSpec) -> np.ndarray:
    kmag = grid.k_magnitude
    if spec.kind == "power_profile":
        with np.errstate(divide="ignore"):
            amp = np.where(kmag > 0, np.where(kmag > 0, kmag, 1.0) ** spec.a, 0.0)
        return np.where(kmag <= spec.k0, amp, 0.0)
    if spec.kind == "low_freq_bump":
        return np.exp(-(kmag**2) / (2 * spec.k0**2))
    return np.where(kmag <= spec.k0, 1.0, 0.0)


def make_initial_data(grid: GridSpec, spec: InitSpec, s: float | None = None) -> State:
    """Real mean-zero ``(u, η)`` with ``‖·‖_{H^{max(3, d-2)}} = ε``.

    ``power_profile`` sets ``|û_k| = |k|^a`` for ``|k| <= k0``;
    ``low_freq_bump`` a Gaussian of width ``k0``; ``random_small`` a flat
    profile up to ``k0``. Phases are independent per component and mode.
    """
    if spec.kind not in INIT_KINDS:
        raise ValueError(f"unknown initial-data kind {spec.kind!r}")
    if spec.kind == "power_profile":
        if spec.a is None:
            raise ValueError("power_profile needs a")
        if s is not None and 2 * spec.a - 2 * s <= -grid.d:
            raise ValueError(f"profile a={spec.a} has infinite Ḣ^-{s} norm (need 2a - 2s > -d)")
    p = grid.d + 1
    X = np.zeros((p,) + grid.shape, dtype=complex)
    if spec.epsilon == 0:
        return State.from_stacked(grid, X)
    rng = np.random.default_rng(spec.seed)
    amp = profile_amplitude(grid, spec)
    for i in range(p):
        X[i] = truncate(amp * _random_phases(grid, rng), grid)
        X[i][(0,) * grid.d] = 0.0
    m = max(3, grid.d - 2)
    state = State.from_stacked(grid, X)
    current = norm(state, NormRequest.hm(m))
    if current == 0:
        raise ValueError("initial profile has no resolved modes (increase k0 or n)")
    return State.from_stacked(grid, X * (spec.epsilon / current))


# ---------------------------------------------------------------------------
# time series


@dataclass
class TimeSeriesRecord:
    t: float
    h3: float
    hm: float
    hdot_minus_s: float | None
    hdot_l: dict
    ubar_l2: float
    hypo: float | None
    envelope: dict
    eta_mean: float
    ledger: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "ledger"}
        out.update({f"ledger.{k}": v for k, v in self.ledger.items()})
        return out


def _deviation(state: State, steady: State | None) -> State:
    if steady is None:
        return state
    return State.from_stacked(state.grid, state.stacked() - steady.stacked(), state.t)


def series_record(state: State, cfg: ExperimentConfig, steady: State | None = None) -> TimeSeriesRecord:
    dg = cfg.diagnostics
    dev = _deviation(state, steady)
    t = state.t
    hdot_l, envelope = {}, {}
    hdot_minus_s = None
    if dg.s is not None:
        hdot_minus_s = norm(dev, NormRequest.hdot(-dg.s), exclude_mean=True)
        for l in dg.l:
            v = norm(dev, NormRequest.hdot(l), exclude_mean=True)
            hdot_l[f"{l:g}"] = v
            envelope[f"{l:g}"] = v * (1 + t) ** ((dg.s + l) / 2)
    perturbation = cfg.model.form == "perturbation"
    hypo = hypo_functional(dev, dg.m, dg.delta0).value if perturbation else None
    ledger = {}
    if perturbation and dg.ledger_orders:
        ledger = energy_ledger(dev, cfg.model.kind, dg.ledger_orders).flat()
    return TimeSeriesRecord(
        t=t,
        h3=norm(dev, NormRequest.hm(3)),
        hm=norm(dev, NormRequest.hm(dg.m)),
        hdot_minus_s=hdot_minus_s,
        hdot_l=hdot_l,
        ubar_l2=norm(dev.u[0], NormRequest("L2")),
        hypo=hypo,
        envelope=envelope,
        eta_mean=float(state.eta.mean.real),
        ledger=ledger,
    )


@dataclass
class ExperimentResult:
    records: list[dict]
    final_state: State
    series_path: Path | None
    checkpoint_path: Path | None


def run_experiment(cfg: ExperimentConfig, write: bool = True, initial: State | None = None) -> ExperimentResult:
    """Integrate (or propagate exactly, in linear mode) and emit one record per output step.

    Records are flushed as they are produced, so a run aborted by
    :class:`~tonertu.timestepper.BlowUp` leaves its partial series on disk.
    """
    cfg.validate()
    grid = cfg.grid.grid()
    params = cfg.model.params()
    state = initial if initial is not None else make_initial_data(grid, cfg.init, cfg.diagnostics.s)
    steady = None
    if params.form == "primitive":
        steady = steady_state_fields(grid, params)
        state = State.from_stacked(grid, state.stacked() + steady.stacked(), state.t)

    writer = None
    if write:
        Path(cfg.output.dir).mkdir(parents=True, exist_ok=True)
        writer = RecordWriter(cfg.output.series_path, header={"config": cfg.to_dict()})
    records: list[dict] = []

    def emit(st: State, *_):
        rec = series_record(st, cfg, steady).to_dict()
        records.append(rec)
        if writer is not None:
            writer.write(rec)

    try:
        if cfg.stepper.mode == "linear":
            final = _propagate_linear(state, cfg, emit)
        else:
            final = integrate(state, cfg.stepper.config(), params, emit)
    finally:
        if writer is not None:
            writer.close()
    ckpt = write_checkpoint(final, cfg.output.checkpoint_path) if write else None
    return ExperimentResult(records, final, cfg.output.series_path if write else None, ckpt)


def _propagate_linear(state: State, cfg: ExperimentConfig, emit) -> State:
    st = cfg.stepper
    interval = st.output_interval or (st.dt * st.output_every if st.dt else st.t_end / 100)
    _, nsteps, _ = plan_steps(replace(st.config(), output_interval=None, dt=None), interval)
    prop = LinearPropagator(state.grid, cfg.model.kind)
    X0 = state.stacked()
    out = state
    for i, t in enumerate(np.linspace(0.0, st.t_end, nsteps + 1)):
        out = State.from_stacked(state.grid, prop.propagate(X0, t) if i else X0, state.t + t)
        emit(out)
    return out


# ---------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class DecayFitResult:
    slope: float
    stderr: float
    window: tuple[float, float]
    expected: float
    sharp_expected: float | None
    passed: bool
    sharp_passed: bool | None
    tolerance: float
    l: float
    s: float


def _series_arrays(series, l):
    if isinstance(series, tuple) and len(series) == 2:
        return np.asarray(series[0], float), np.asarray(series[1], float)
    key = f"{l:g}"
    t = np.array([r["t"] for r in series], float)
    v = np.array([r["hdot_l"][key] for r in series], float)
    return t, v


def fit_decay(series, l: float, s: float, window, tolerance: float = 0.15, sharp_expected=None) -> DecayFitResult:
    """Least-squares slope of ``log‖Λ^l(u,η)‖`` against ``log(1+t)`` on ``window``.

    ``series`` is a list of records or a ``(times, values)`` pair. PASS means
    ``slope <= expected + tolerance |expected|`` with ``expected = -(s+l)/2``;
    the sharp check (when a target is given) is two-sided with the same
    relative tolerance.
    """
    t, v = _series_arrays(series, l)
    t1, t2 = window
    sel = (t >= t1 - 1e-9) & (t <= t2 + 1e-9)
    if sel.sum() < 2:
        raise ValueError(f"window {window} holds fewer than two samples")
    if t.min() > t1 + 1e-9 or t.max() < t2 - 1e-9:
        raise ValueError(f"series [{t.min()}, {t.max()}] does not cover window {window}")
    if np.any(v[sel] <= 0):
        raise ValueError("nonpositive norms in the fit window")
    x, y = np.log1p(t[sel]), np.log(v[sel])
    if np.ptp(y) == 0:
        slope, stderr = 0.0, 0.0
    else:
        fit = scipy.stats.linregress(x, y)
        slope, stderr = float(fit.slope), float(fit.stderr)
    expected = -(s + l) / 2
    passed = slope <= expected + tolerance * abs(expected)
    sharp_passed = None
    if sharp_expected is not None:
        sharp_passed = abs(slope - sharp_expected) <= tolerance * abs(sharp_expected)
    return DecayFitResult(
        slope, stderr, (float(t1), float(t2)), expected, sharp_expected, bool(passed), sharp_passed, tolerance, l, s
    )


def envelope_bounded(series, l: float, window, factor: float = 2.0) -> tuple[bool, float]:
    """``max_window envelope <= factor * envelope(t1)``; returns ``(ok, max ratio)``."""
    key = f"{l:g}"
    t1, t2 = window
    pts = [(r["t"], r["envelope"][key]) for r in series if t1 - 1e-9 <= r["t"] <= t2 + 1e-9]
    if not pts:
        raise ValueError("no samples in window")
    start = min(pts)[1]
    ratio = max(e for _, e in pts) / start
    return ratio <= factor, ratio


def quadrature_norms(model: str, d: int, a: float, l: float, k0: float, times, nr: int = 1500, nth: int = 96):
    """Continuum linear norm ``‖Λ^l(u,η)(t)‖`` for ``power_profile`` data, by quadrature.

    With independent random phases per component the expected squared norm
    is ``∫_{|k|<=k0} |k|^{2a+2l} ‖exp(t M(k))‖_F² dk``. The radial integral
    uses a logarithmic trapezoid rule, the angular one a uniform rule.
    """
    if d != 2:
        raise NotImplementedError("quadrature oracle implemented for d = 2")
    r = np.geomspace(1e-6 * k0, k0, nr)
    th = np.linspace(0, 2 * np.pi, nth, endpoint=False)
    R, TH = np.meshgrid(r, th, indexing="ij")
    kv = np.stack([R * np.cos(TH), R * np.sin(TH)])
    M = _mode_entries(kv, model)
    w, V = np.linalg.eig(M)
    Vinv = np.linalg.inv(V)
    weight = r ** (2 * a + 2 * l) * r * r  # |k|^{2a+2l} · r dr, with dr = r dlog r
    out = []
    for t in np.atleast_1d(times):
        E = np.einsum("...ij,...j,...jk->...ik", V, np.exp(w * t), Vinv)
        fro = np.sum(np.abs(E) ** 2, axis=(-2, -1)).mean(axis=1) * 2 * np.pi
        out.append(math.sqrt(np.trapezoid(weight * fro, np.log(r))))
    return np.array(out)


def quadrature_slope(model: str, d: int, a: float, l: float, k0: float, window, samples: int = 91) -> float:
    """Sharp linear decay slope on ``window`` from :func:`quadrature_norms`."""
    t = np.linspace(window[0], window[1], samples)
    v = quadrature_norms(model, d, a, l, k0, t)
    return float(scipy.stats.linregress(np.log1p(t), np.log(v)).slope)


# ---------------------------------------------------------------------------
# small-grid oracle


@dataclass
class OracleReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def worst(self) -> tuple[str, float]:
        return max(self.errors.items(), key=lambda kv: kv[1])


def _rel_err(a, b) -> float:
    scale = max(float(np.abs(b).max()), float(np.abs(a).max()))
    if scale == 0:
        return 0.0
    return float(np.abs(a - b).max()) / scale


def _dense_operator(grid: GridSpec, model: str) -> np.ndarray:
    p = grid.d + 1
    size = p * grid.size
    A = np.zeros((size, size), dtype=complex)
    e = np.zeros(size, dtype=complex)
    for j in range(size):
        e[j] = 1.0
        A[:, j] = perturbed_linear(e.reshape((p,) + grid.shape), grid, model).ravel()
        e[j] = 0.0
    return A


def oracle_smallgrid(cfg: ExperimentConfig, state: State | None = None, dt: float = 1e-2) -> OracleReport:
    """Brute-force comparisons on a small grid.

    * every nonlinear term of both models, in both variable sets, against
      direct Fourier convolution;
    * ``[∂^γ, u·∇]η`` for ``|γ| <= 2`` against its Leibniz expansion;
    * one IMEX-Euler step against a dense assembled solve with the
      convolution remainder;
    * the exact propagator against a dense matrix exponential.
    """
    grid = cfg.grid.grid()
    if grid.n > 16:
        raise ValueError("oracle grids must have n <= 16")
    if state is None:
        state = make_initial_data(grid, replace(cfg.init, kind="random_small", k0=math.inf), None)
        X = state.stacked() * (0.5 / max(np.abs(state.stacked()).max(), 1e-300))
        state = State.from_stacked(grid, X)
    X = state.stacked()
    d = grid.d
    errors: dict[str, float] = {}
    for model in MODELS:
        fast = perturbed_terms(X, grid, model)
        ref = oracle.perturbed_terms(X, grid, model)
        for name in ref:
            errors[f"{model}.perturbed.{name}"] = _rel_err(fast[name], ref[name])
        params = ModelParams(model, "primitive")
        Xp = X + steady_state_fields(grid, params).stacked()
        fast = primitive_terms(Xp, grid, params)
        ref = oracle.primitive_terms(Xp, grid, params)
        for name in ref:
            errors[f"{model}.primitive.{name}"] = _rel_err(fast[name], ref[name])

    fg = fine_grid(grid)
    u = list(X[:d])
    for order in (1, 2):
        for gamma in itertools.product(range(order + 1), repeat=d):
            if sum(gamma) != order:
                continue
            fast = commutator(u, X[d], grid, gamma)
            ref = oracle.uncentered(oracle.commutator_leibniz(u, X[d], grid, gamma), fg)
            errors[f"commutator{gamma}"] = _rel_err(fast, ref)

    model = cfg.model.kind
    A = _dense_operator(grid, model)
    ref_terms = oracle.perturbed_terms(X, grid, model)
    N = sum(ref_terms.values())
    p = d + 1
    dense = np.linalg.solve(np.eye(p * grid.size) - dt * A, (X + dt * N).ravel()).reshape(X.shape)
    stepper = IMEXStepper(make_system(grid, ModelParams(model)), "imex-euler")
    errors["imex_euler_step"] = _rel_err(stepper.step_array(X, dt), dense)
    expm = (scipy.linalg.expm(dt * A) @ X.ravel()).reshape(X.shape)
    errors["linear_propagator"] = _rel_err(LinearPropagator(grid, model).propagate(X, dt), expm)
    return OracleReport(errors, cfg.diagnostics.oracle_tolerance)


# ---------------------------------------------------------------------------
# steady states


@dataclass
class SteadyReport:
    model: str
    steps: int
    max_h3_drift: float
    eta_mean_drift: float


def steady_check(cfg: ExperimentConfig, steps: int | None = None, dt: float | None = None) -> list[SteadyReport]:
    """Integrate the primitive systems from their ordered steady state."""
    grid = cfg.grid.grid()
    steps = cfg.diagnostics.steady_steps if steps is None else steps
    spec = cfg.model
    out = []
    for model in MODELS:
        params = ModelParams(model, "primitive", spec.alpha, spec.beta, spec.pressure_slope, spec.rho_s)
        st = steady_state_fields(grid, params)
        system = make_system(grid, params)
        stepper = IMEXStepper(system, cfg.stepper.scheme)
        h = dt or cfg.stepper.dt or cfl_dt(st, system, cfg.stepper.safety)
        X0 = st.stacked()
        X = X0.copy()
        worst = 0.0
        for _ in range(steps):
            X = stepper.step_array(X, h)
            worst = max(worst, h3_norm_stacked(X - X0, grid))
        mean_drift = abs(X[grid.d].flat[0] - X0[grid.d].flat[0])
        out.append(SteadyReport(model, steps, worst, float(mean_drift)))
    return out

