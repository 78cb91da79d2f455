"""Implicit-explicit Runge-Kutta integration.

The per-mode linear operator is treated implicitly through batched
``(d+1) x (d+1)`` solves; the nonlinear remainder is explicit. Schemes are
written in the additive Butcher form of Ascher, Ruuth and Spiteri, with an
explicit first stage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import (
    ModelParams,
    State,
    apply_modes,
    mode_matrices,
    perturbed_nonlinear,
    primitive_mode_matrices,
    primitive_nonlinear,
)
from .spectral import GridSpec, to_physical

log = logging.getLogger(__name__)


class SolveSingular(ArithmeticError):
    """An implicit mode matrix ``I - c dt M(k)`` is numerically singular."""


class BlowUp(ArithmeticError):
    """The H³ norm left the small-data regime."""


class ObserverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Tableau:
    A: np.ndarray  # implicit
    Ahat: np.ndarray  # explicit
    b: np.ndarray
    bhat: np.ndarray
    order: int

    @property
    def stages(self) -> int:
        return len(self.b)


def _ars222() -> Tableau:
    g = 1 - 1 / math.sqrt(2)
    dl = 1 - 1 / (2 * g)
    A = np.array([[0, 0, 0], [0, g, 0], [0, 1 - g, g]])
    Ahat = np.array([[0, 0, 0], [g, 0, 0], [dl, 1 - dl, 0]])
    return Tableau(A, Ahat, A[-1].copy(), Ahat[-1].copy(), 2)


def _ars343() -> Tableau:
    g = 0.4358665215084590
    b1 = -1.5 * g**2 + 4 * g - 0.25
    b2 = 1.5 * g**2 - 5 * g + 1.25
    A = np.array(
        [[0, 0, 0, 0], [0, g, 0, 0], [0, (1 - g) / 2, g, 0], [0, b1, b2, g]], dtype=float
    )
    Ahat = np.array(
        [
            [0, 0, 0, 0],
            [g, 0, 0, 0],
            [0.3212788860286278, 0.3966543747256017, 0, 0],
            [-0.1058582960718797, 0.5529291480359398, 0.5529291480359398, 0],
        ]
    )
    b = np.array([0, b1, b2, g])
    return Tableau(A, Ahat, b, b.copy(), 3)


SCHEMES: dict[str, Tableau] = {
    "imex-euler": Tableau(
        np.array([[0.0, 0.0], [0.0, 1.0]]),
        np.array([[0.0, 0.0], [1.0, 0.0]]),
        np.array([0.0, 1.0]),
        np.array([1.0, 0.0]),
        1,
    ),
    "imex-rk2": _ars222(),
    "imex-rk3": _ars343(),
}


@dataclass
class StepperConfig:
    scheme: str = "imex-rk2"
    dt: float | None = None  # None: advective CFL estimate
    t_end: float = 1.0
    output_every: int = 1
    output_interval: float | None = None  # output on a fixed time lattice instead
    safety: float = 0.5
    blowup_factor: float = 1e3

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {tuple(SCHEMES)}, got {self.scheme!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if self.output_every < 1:
            raise ValueError("output_every must be >= 1")
        if self.output_interval is not None:
            if not self.output_interval > 0:
                raise ValueError("output_interval must be positive")
            ratio = self.t_end / self.output_interval
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError("t_end must be a multiple of output_interval")


def plan_steps(cfg: StepperConfig, dt_max: float) -> tuple[float, int, int]:
    """``(dt, nsteps, output_every)`` with ``dt <= dt_max`` hitting ``t_end`` exactly.

    With ``output_interval`` set, ``dt`` divides the interval so every output
    time is a step time.
    """
    if cfg.t_end == 0:
        return dt_max, 0, cfg.output_every
    if cfg.output_interval is not None:
        per = max(1, math.ceil(cfg.output_interval / dt_max - 1e-9))
        dt = cfg.output_interval / per
        return dt, per * round(cfg.t_end / cfg.output_interval), per
    nsteps = max(1, math.ceil(cfg.t_end / dt_max - 1e-9))
    return cfg.t_end / nsteps, nsteps, cfg.output_every


@dataclass(frozen=True)
class StepReport:
    t: float
    dt_used: float
    max_u: float
    max_eta: float
    cfl: float


@dataclass
class System:
    """Linear mode matrices plus an explicit remainder on stacked arrays."""

    grid: GridSpec
    params: ModelParams
    matrices: np.ndarray  # grid.shape + (p, p)
    nonlinear: Callable[[np.ndarray], np.ndarray] | None

    @property
    def background_velocity(self) -> np.ndarray:
        if self.params.form == "perturbation":
            return self.params.direction(self.grid.d)
        return np.zeros(self.grid.d)


def make_system(grid: GridSpec, params: ModelParams, nonlinear: bool = True) -> System:
    if params.form == "perturbation":
        if not params.is_normalized:
            raise ValueError("perturbation form requires the normalized parameters")
        M = mode_matrices(grid, params.model)
        fn = (lambda X: perturbed_nonlinear(X, grid, params.model)) if nonlinear else None
    else:
        M = primitive_mode_matrices(grid, params)
        fn = (lambda X: primitive_nonlinear(X, grid, params)) if nonlinear else None
    return System(grid, params, M, fn)


def sobolev_weight(grid: GridSpec, m: int = 3) -> np.ndarray:
    k2 = grid.k_squared
    return sum(k2**j for j in range(m + 1))


def h3_norm_stacked(X: np.ndarray, grid: GridSpec) -> float:
    w = sobolev_weight(grid, 3)
    return math.sqrt(grid.volume * float(np.sum(w * np.abs(X) ** 2)))


class IMEXStepper:
    def __init__(self, system: System, scheme: str = "imex-rk2"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.system = system
        self.scheme = scheme
        self.tableau = SCHEMES[scheme]
        self._solves: dict[tuple[float, float], np.ndarray] = {}
        # channels-first copy of the matrices for cheap broadcasting
        self._Mt = np.moveaxis(system.matrices, (-2, -1), (0, 1))

    @property
    def order(self) -> int:
        return self.tableau.order

    def _solver(self, dt: float, a: float) -> np.ndarray:
        key = (dt, a)
        if key not in self._solves:
            M = self.system.matrices
            p = M.shape[-1]
            S = np.eye(p) - dt * a * M
            try:
                inv = np.linalg.inv(S)
            except np.linalg.LinAlgError as exc:
                raise SolveSingular(f"implicit solve failed at dt={dt}") from exc
            cond = np.linalg.norm(S, axis=(-2, -1)) * np.linalg.norm(inv, axis=(-2, -1))
            worst = float(np.max(cond))
            if not np.isfinite(worst) or worst > 1e12:
                raise SolveSingular(f"mode matrix condition number {worst:.3e} at dt={dt}")
            if len(self._solves) > 8:
                self._solves.clear()
            self._solves[key] = np.moveaxis(inv, (-2, -1), (0, 1))
        return self._solves[key]

    def _lin(self, X):
        return np.sum(self._Mt * X[None], axis=1)

    def step_array(self, X: np.ndarray, dt: float) -> np.ndarray:
        tab = self.tableau
        s = tab.stages
        nl = self.system.nonlinear
        N: list = [None] * s
        L: list = [None] * s
        for i in range(s):
            rhs = X.copy()
            for j in range(i):
                if tab.Ahat[i, j] and N[j] is not None:
                    rhs += dt * tab.Ahat[i, j] * N[j]
                if tab.A[i, j]:
                    rhs += dt * tab.A[i, j] * L[j]
            a = tab.A[i, i]
            U = np.sum(self._solver(dt, a) * rhs[None], axis=1) if a else rhs
            later = tab.Ahat[i + 1 :, i]
            if nl is not None and (np.any(later) or tab.bhat[i]):
                N[i] = nl(U)
            if np.any(tab.A[i + 1 :, i]) or tab.b[i]:
                L[i] = (U - rhs) / (dt * a) if a else self._lin(U)
        out = X.copy()
        for j in range(s):
            if tab.bhat[j] and N[j] is not None:
                out += dt * tab.bhat[j] * N[j]
            if tab.b[j]:
                out += dt * tab.b[j] * L[j]
        return out

    def step(self, state: State, dt: float) -> State:
        if not dt > 0:
            raise ValueError("dt must be positive")
        X = self.step_array(state.stacked(), dt)
        return State.from_stacked(state.grid, X, state.t + dt)

    def report(self, state: State, dt: float) -> StepReport:
        grid = state.grid
        X = state.stacked()
        phys = to_physical(X, grid)
        vel = phys[: grid.d] + self.system.background_velocity.reshape((-1,) + (1,) * grid.d)
        speed = float(np.sqrt(np.sum(vel**2, axis=0)).max())
        max_u = float(np.sqrt(np.sum(phys[: grid.d] ** 2, axis=0)).max())
        return StepReport(state.t, dt, max_u, float(np.abs(phys[grid.d]).max()), speed * grid.k_max * dt)


def cfl_dt(state: State, system: System, safety: float = 0.5) -> float:
    """Largest ``dt`` with ``max|u + v_bg| k_max dt <= safety``."""
    grid = state.grid
    phys = to_physical(state.stacked()[: grid.d], grid)
    vel = phys + system.background_velocity.reshape((-1,) + (1,) * grid.d)
    speed = float(np.sqrt(np.sum(vel**2, axis=0)).max())
    if speed == 0:
        speed = 1.0
    return safety / (speed * grid.k_max)


_STEPPERS: dict[tuple, IMEXStepper] = {}


def _cached_stepper(grid, params, scheme, nonlinear=True) -> IMEXStepper:
    key = (grid, params, scheme, nonlinear)
    if key not in _STEPPERS:
        if len(_STEPPERS) > 4:
            _STEPPERS.clear()
        _STEPPERS[key] = IMEXStepper(make_system(grid, params, nonlinear), scheme)
    return _STEPPERS[key]


def step(state: State, dt: float, params: ModelParams, scheme: str = "imex-rk2") -> State:
    """Advance ``state`` by one IMEX step."""
    return _cached_stepper(state.grid, params, scheme).step(state, dt)


def integrate(
    state: State,
    cfg: StepperConfig,
    params: ModelParams | None = None,
    observer: Callable[[State, StepReport], None] | None = None,
    *,
    stepper: IMEXStepper | None = None,
) -> State:
    """Integrate to ``cfg.t_end``; ``observer`` sees the initial state and every output step.

    The step is shrunk uniformly so that ``t_end`` is hit exactly (see
    :func:`plan_steps`).
    """
    if stepper is None:
        if params is None:
            raise ValueError("either params or stepper is required")
        stepper = _cached_stepper(state.grid, params, cfg.scheme)
    dt = cfg.dt if cfg.dt is not None else cfl_dt(state, stepper.system, cfg.safety)
    dt, nsteps, every = plan_steps(cfg, dt)
    grid = state.grid
    t0 = state.t
    X = state.stacked()
    ceiling = cfg.blowup_factor * max(h3_norm_stacked(X, grid), 1e-300)

    def notify(X, i):
        if observer is None:
            return
        st = State.from_stacked(grid, X, t0 + i * dt)
        try:
            observer(st, stepper.report(st, dt))
        except Exception as exc:
            raise ObserverError(f"observer failed at t={st.t:.6g}: {exc}") from exc

    notify(X, 0)
    for i in range(1, nsteps + 1):
        X = stepper.step_array(X, dt)
        norm = h3_norm_stacked(X, grid)
        if not math.isfinite(norm) or norm > ceiling:
            raise BlowUp(f"H3 norm {norm:.3e} exceeds ceiling {ceiling:.3e} at t={t0 + i * dt:.6g}")
        if i % every == 0 or i == nsteps:
            notify(X, i)
    return State.from_stacked(grid, X, t0 + nsteps * dt)
