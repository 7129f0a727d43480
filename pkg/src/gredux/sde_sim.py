"""Euler-Maruyama ensembles driven by counter-based Brownian increments."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from gredux import rng
from gredux.errors import ConfigError, SimulationError
from gredux.sublinear import ThetaGrid, worst_case_expectation

BLOWUP_NORM = 1e8


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon_T: float
    n_paths: int
    master_seed: int
    initial_state: tuple

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon_T > 0):
            raise ConfigError("dt and horizon_T must be positive")
        if self.dt > self.horizon_T:
            raise ConfigError("dt exceeds the horizon")
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be at least 1")
        object.__setattr__(self, "initial_state", tuple(float(v) for v in np.atleast_1d(self.initial_state)))

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon_T / self.dt)))

    @property
    def step_size(self) -> float:
        return self.horizon_T / self.n_steps


@dataclass(frozen=True)
class SDESystem:
    """``dX = drift(X) dt + diffusion(X) dW`` with an m-dimensional ``W``.

    ``drift`` maps ``(n, d)`` to ``(n, d)``; ``diffusion`` maps ``(n, d)`` to
    ``(n, d, m)``. ``diffusion_jvp`` (scalar noise only) returns
    ``(sigma . grad) sigma`` and switches on the Milstein correction.
    ``slow`` lists the indices of the resolved components.
    """

    drift: Callable
    diffusion: Callable
    noise_dim: int
    slow: tuple | None = None
    diffusion_jvp: Callable | None = None


@dataclass
class PathEnsemble:
    times: np.ndarray
    states: np.ndarray  # (n_paths, n_records, d)
    brownian_increments: np.ndarray | None  # (n_paths, n_steps, m)
    master_seed: int
    path_indices: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.states.shape[2]
        w.writerow(["path", "step", "t"] + [f"x{i}" for i in range(d)])
        for p, idx in enumerate(self.path_indices):
            for k, t in enumerate(self.times):
                w.writerow([int(idx), k, repr(float(t))] + [repr(float(v)) for v in self.states[p, k]])
        return buf.getvalue()


@dataclass(frozen=True)
class StrongErrorReport:
    epsilons: tuple
    errors: tuple
    fitted_slope: float  # nan when undefined
    intercept: float

    def to_csv(self) -> str:
        lines = ["epsilon,error,slope_overall"]
        lines += [f"{e!r},{err!r},{self.fitted_slope!r}" for e, err in zip(self.epsilons, self.errors)]
        return "\n".join(lines) + "\n"


def _march(systems: Sequence[SDESystem], x0s, config: SimConfig, record_every: int,
           keep_increments: bool, stream: int):
    n, N = int(config.n_paths), config.n_steps
    dt = config.step_size
    m = systems[0].noise_dim
    xs = [np.tile(np.asarray(x0, dtype=float), (n, 1)) for x0 in x0s]
    rec_steps = list(range(0, N + 1, record_every))
    if rec_steps[-1] != N:
        rec_steps.append(N)
    records = [np.empty((n, len(rec_steps), x.shape[1])) for x in xs]
    for rec, x in zip(records, xs):
        rec[:, 0] = x
    incs = np.empty((n, N, m)) if keep_increments else None
    j = 1
    for k in range(N):
        dW = rng.brownian_increments(config.master_seed, k, n, m, dt, stream)
        if incs is not None:
            incs[:, k] = dW
        for i, (sys, x) in enumerate(zip(systems, xs)):
            x_new = x + sys.drift(x) * dt + np.einsum("ndm,nm->nd", sys.diffusion(x), dW)
            if sys.diffusion_jvp is not None:
                x_new += 0.5 * sys.diffusion_jvp(x) * (dW[:, :1] ** 2 - dt)
            norms = np.abs(x_new).max(axis=1)
            if not np.all(norms < BLOWUP_NORM):  # also catches NaN
                raise SimulationError("state blew up", step=k + 1)
            xs[i] = x_new
        if j < len(rec_steps) and rec_steps[j] == k + 1:
            for rec, x in zip(records, xs):
                rec[:, j] = x
            j += 1
    times = np.array(rec_steps, dtype=float) * dt
    return [PathEnsemble(times, rec, incs, config.master_seed, np.arange(n)) for rec in records]


def _check_dims(system: SDESystem, x0):
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    b = np.asarray(system.drift(x0))
    s = np.asarray(system.diffusion(x0))
    if b.shape != x0.shape or s.shape != x0.shape + (system.noise_dim,):
        raise ConfigError("drift/diffusion dimensions do not match the initial state")
    if system.diffusion_jvp is not None and system.noise_dim != 1:
        raise ConfigError("the Milstein correction is implemented for scalar noise only")


def simulate(system: SDESystem, config: SimConfig, record_every: int = 1,
             keep_increments: bool = True, stream: int = 0) -> PathEnsemble:
    """Euler-Maruyama (Milstein when ``diffusion_jvp`` is given) ensemble."""
    _check_dims(system, config.initial_state)
    return _march([system], [config.initial_state], config, record_every, keep_increments, stream)[0]


def simulate_coupled(full: SDESystem, reduced: SDESystem, config: SimConfig,
                     reduced_x0=None, record_every: int = 1, stream: int = 0):
    """Simulate both systems on identical Brownian increments.

    The reduced system starts from the slow projection of
    ``config.initial_state`` unless ``reduced_x0`` is given.
    """
    if full.noise_dim != reduced.noise_dim:
        raise ConfigError("full and reduced systems need the same Brownian dimension")
    slow = full.slow if full.slow is not None else tuple(range(len(config.initial_state)))
    x0 = np.asarray(config.initial_state)
    rx0 = x0[list(slow)] if reduced_x0 is None else np.atleast_1d(np.asarray(reduced_x0, float))
    _check_dims(full, x0)
    _check_dims(reduced, rx0)
    if len(slow) != len(rx0):
        raise ConfigError("slow projection and reduced state differ in dimension")
    ef, er = _march([full, reduced], [x0, rx0], config, record_every, True, stream)
    er.brownian_increments = ef.brownian_increments
    return ef, er


def sup_squared_error(full: PathEnsemble, reduced: PathEnsemble, slow: Sequence[int]) -> np.ndarray:
    diff = full.states[:, :, list(slow)] - reduced.states
    return np.max(np.sum(diff**2, axis=2), axis=1)


def fit_loglog(x, y):
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.all(y < 1e-14):
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def strong_error_rate(family: Callable[[float, float], tuple], eps_list: Sequence[float],
                      config: SimConfig, theta_grid: ThetaGrid | Sequence[float],
                      config_for_eps: Callable[[float], SimConfig] | None = None) -> StrongErrorReport:
    """Worst-case strong error ``sup_t |R_eps - R_bar|**2`` across epsilons.

    ``family(eps, theta)`` returns ``(full, reduced)`` :class:`SDESystem`
    pairs. ``config_for_eps`` may refine the step size per epsilon.
    """
    eps = [float(e) for e in eps_list]
    if len(eps) < 3 or max(eps) / min(eps) < 4.0:
        raise ConfigError("need at least 3 epsilons spanning a factor of 4")
    order = np.argsort(eps)[::-1]
    eps = [eps[i] for i in order]
    errors = []
    for e in eps:
        cfg = config if config_for_eps is None else config_for_eps(e)

        def ensemble(theta, e=e, cfg=cfg):
            full, red = family(e, theta)
            ef, er = simulate_coupled(full, red, cfg)
            return sup_squared_error(ef, er, full.slow)

        errors.append(worst_case_expectation(None, ensemble, theta_grid).value)
    slope, intercept = fit_loglog(eps, errors)
    return StrongErrorReport(tuple(eps), tuple(errors), slope, intercept)


def lq_systems(model, sigma_value: float):
    """Uncontrolled full and reduced LQ systems at a fixed noise parameter."""
    from gredux.models import reduce_lq

    A, _, C = model.scaled()
    red = reduce_lq(model)
    sq = np.sqrt(sigma_value)
    m = C.shape[1]
    Cs, Cbar = sq * C, sq * red.C_bar
    full = SDESystem(lambda x: x @ A.T, lambda x: np.broadcast_to(Cs, x.shape + (m,)), m,
                     slow=tuple(range(model.blocks.n_slow)))
    reduced = SDESystem(lambda x: x @ red.A_bar.T, lambda x: np.broadcast_to(Cbar, x.shape + (m,)), m)
    return full, reduced


def triad_limit_system(limit, milstein: bool = True) -> SDESystem:
    """Homogenised triad with scalar multiplicative noise.

    With ``milstein=True`` the scheme keeps ``A1 r2**2 - A2 r1**2`` conserved
    to first order in the step size.
    """
    from gredux.models import triad_limit_diffusion, triad_limit_diffusion_jvp, triad_limit_drift

    return SDESystem(lambda x: triad_limit_drift(limit, x),
                     lambda x: triad_limit_diffusion(limit, x)[..., None], 1,
                     diffusion_jvp=(lambda x: triad_limit_diffusion_jvp(limit, x)) if milstein else None)
