"""Explicit finite differences for G-HJB equations in one and two dimensions.

The equations solved have the form

    v_t + G(a:D2v + <Dv, f1>) + <Dv, b> - |B' Dv|^2 / 2 + l = 0,   v(T) = g,

where ``a`` and ``f1`` are the parameter-free second- and first-order
coefficients multiplying the uncertain parameter (or its square), and ``G``
is the sublinear generator of the parameter interval.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from gredux.errors import ConfigError, OracleError, SolverError
from gredux.sublinear import UncertaintyInterval, g_argmax

CFL = 0.9


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid; ``dims`` holds one ``(lo, hi, n_cells)`` per axis.

    ``dt_pde=None`` picks the largest step allowed by the stability bound.
    """

    dims: tuple
    horizon_T: float
    dt_pde: float | None = None

    def __post_init__(self):
        dims = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.dims)
        if not 1 <= len(dims) <= 2:
            raise ConfigError("finite differences support one or two dimensions")
        for lo, hi, n in dims:
            if not lo < hi or n < 8:
                raise ConfigError(f"bad grid axis ({lo}, {hi}, {n})")
        if not self.horizon_T > 0 or (self.dt_pde is not None and not self.dt_pde > 0):
            raise ConfigError("horizon and time step must be positive")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def axes(self) -> list:
        return [np.linspace(lo, hi, n + 1) for lo, hi, n in self.dims]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / n for lo, hi, n in self.dims])

    def coords(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(tuple((lo, hi, n * factor) for lo, hi, n in self.dims), self.horizon_T)


@dataclass(frozen=True)
class GHJBProblem:
    """Coefficients of a G-HJB equation; all maps act on ``(..., d)`` arrays.

    ``second_order`` returns ``(..., d, d)``; ``param_drift`` (optional) the
    first-order part of the bracket. ``param_power`` is 2 when coefficients
    scale with the square of the uncertain parameter.
    """

    terminal: Callable
    drift: Callable | None = None
    second_order: Callable | None = None
    param_drift: Callable | None = None
    control: np.ndarray | None = None
    running_cost: Callable | None = None
    param_power: int = 1

    def effective_interval(self, theta: UncertaintyInterval) -> UncertaintyInterval:
        return theta.squared() if self.param_power == 2 else theta


@dataclass
class ValueField:
    grid: GridSpec
    times: np.ndarray
    values: np.ndarray  # (n_t, *shape)
    gradient: np.ndarray  # (n_t, *shape, d)
    hessian: np.ndarray  # (n_t, *shape, d, d)
    n_time_steps: int = 0

    def slice_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, self.grid.horizon_T):
            raise KeyError(f"no stored slice at t={t}")
        return i

    def value_at(self, t: float, x, method: str = "cubic") -> float:
        i = self.slice_index(t)
        f = RegularGridInterpolator(self.grid.axes, self.values[i], method=method)
        return float(f(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def to_csv(self) -> str:
        return _field_csv(self.grid, self.times, self.values, "value")


@dataclass
class SigmaStarField:
    grid: GridSpec
    times: np.ndarray
    sigma_star: np.ndarray  # (n_t, *shape)

    def to_csv(self) -> str:
        return _field_csv(self.grid, self.times, self.sigma_star, "sigma_star")


def _field_csv(grid, times, arr, name):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i}" for i in range(grid.ndim)] + [name])
    pts = grid.coords().reshape(-1, grid.ndim)
    for t, a in zip(times, arr):
        for p, v in zip(pts, a.ravel()):
            w.writerow([repr(float(t))] + [repr(float(c)) for c in p] + [repr(float(v))])
    return buf.getvalue()


def _diff(v, axis, h, kind):
    """First differences along ``axis``; three-point one-sided at the edges."""
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    fwd = (v[1:] - v[:-1]) / h
    if kind == "f":
        out[:-1] = fwd
    elif kind == "b":
        out[1:] = fwd
    else:
        out[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    if kind != "f":
        out[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
    if kind != "b":
        out[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    return np.moveaxis(out, 0, axis)


def _diff_upwind2(v, axis, h, kind):
    """Three-point one-sided differences; central or outward one-sided where the stencil would leave the grid."""
    v = np.moveaxis(v, axis, 0)
    out = np.moveaxis(_diff(np.moveaxis(v, 0, axis), axis, h, kind), axis, 0).copy()
    if kind == "f":
        out[:-2] = (-3 * v[:-2] + 4 * v[1:-1] - v[2:]) / (2 * h)
        out[-2] = (v[-1] - v[-3]) / (2 * h)
    else:
        out[2:] = (3 * v[2:] - 4 * v[1:-1] + v[:-2]) / (2 * h)
        out[1] = (v[2] - v[0]) / (2 * h)
    return np.moveaxis(out, 0, axis)


def _diff2(v, axis, h):
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    out[0] = out[1]
    out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def derivatives(v: np.ndarray, h: Sequence[float]):
    """Central gradient and Hessian with the solver's boundary stencils."""
    d = v.ndim
    grad = np.stack([_diff(v, i, h[i], "c") for i in range(d)], axis=-1)
    hess = np.empty(v.shape + (d, d))
    for i in range(d):
        hess[..., i, i] = _diff2(v, i, h[i])
        for j in range(i + 1, d):
            hess[..., i, j] = hess[..., j, i] = _diff(grad[..., i], j, h[j], "c")
    return grad, hess


def _upwind(v, vel, h, diff=None, order=2):
    """``sum_d vel_d * D_d v`` with differences taken in the direction of ``vel``.

    Where ``diff`` (per-axis diffusion coefficient of the equation, ``(..., d)``)
    satisfies ``|vel| h <= 2 diff`` the central difference keeps the stencil
    monotone and is used instead.
    """
    out = np.zeros(v.shape)
    for i in range(v.ndim):
        c = vel[..., i]
        if order == 2:
            term = np.where(c > 0, c * _diff_upwind2(v, i, h[i], "f"), c * _diff_upwind2(v, i, h[i], "b"))
        else:
            term = np.where(c > 0, c * _diff(v, i, h[i], "f"), c * _diff(v, i, h[i], "b"))
        if diff is not None:
            central = np.abs(c) * h[i] <= 2.0 * diff[..., i]
            term = np.where(central, c * _diff(v, i, h[i], "c"), term)
        out += term
    return out


class _Coefficients:
    def __init__(self, problem: GHJBProblem, grid: GridSpec):
        x = grid.coords()
        d = grid.ndim
        self.b = None if problem.drift is None else np.asarray(problem.drift(x), dtype=float)
        self.a = None if problem.second_order is None else np.asarray(problem.second_order(x), dtype=float)
        self.f1 = None if problem.param_drift is None else np.asarray(problem.param_drift(x), dtype=float)
        self.ell = None if problem.running_cost is None else np.asarray(problem.running_cost(x), dtype=float)
        B = problem.control
        self.B = None if B is None else np.atleast_2d(np.asarray(B, dtype=float)).reshape(d, -1)
        self.g = np.asarray(problem.terminal(x), dtype=float)
        if self.g.shape != x.shape[:-1]:
            raise ConfigError("terminal condition has the wrong shape")
        if not np.all(np.isfinite(self.g)):
            raise ConfigError("terminal condition is not finite on the grid")


def _rate(coef: _Coefficients, s_hi: float, h, grad=None) -> float:
    """Largest diagonal coefficient of the explicit update (per unit dt)."""
    d = len(h)
    rate = 0.0
    if coef.a is not None:
        for i in range(d):
            rate += s_hi * np.max(np.abs(coef.a[..., i, i])) / h[i] ** 2
            for j in range(d):
                if j != i:
                    rate += s_hi * np.max(np.abs(coef.a[..., i, j])) / (2 * h[i] * h[j])
    vel = np.zeros(coef.g.shape + (d,))
    if coef.b is not None:
        vel = vel + np.abs(coef.b)
    if coef.f1 is not None:
        vel = vel + 0.5 * s_hi * np.abs(coef.f1)
    if coef.B is not None and grad is not None:
        vel = vel + np.abs((grad @ coef.B) @ coef.B.T)
    rate += float(np.max(np.sum(vel / np.asarray(h), axis=-1)))
    return rate


def _hamiltonian(v, coef: _Coefficients, theta: UncertaintyInterval, h):
    grad, hess = derivatives(v, h)
    out = np.zeros(v.shape)
    diff = None
    if coef.a is not None:
        diff = 0.5 * theta.sigma_lo * np.maximum(np.einsum("...ii->...i", coef.a), 0.0)
        interior = np.zeros(v.shape, dtype=bool)
        interior[tuple(slice(1, -1) for _ in range(v.ndim))] = True
        diff = np.where(interior[..., None], diff, 0.0)
    if coef.b is not None:
        out += _upwind(v, coef.b, h, diff)
    if coef.a is not None or coef.f1 is not None:
        bracket = np.zeros(v.shape)
        if coef.a is not None:
            bracket += np.einsum("...ij,...ij->...", coef.a, hess)
        if coef.f1 is not None:
            bracket += np.einsum("...i,...i->...", coef.f1, grad)
        s = g_argmax(bracket, theta)
        term = np.zeros(v.shape)
        if coef.a is not None:
            term += np.einsum("...ij,...ij->...", coef.a, hess)
        if coef.f1 is not None:
            term += _upwind(v, coef.f1, h, None if diff is None else diff / theta.sigma_lo)
        out += 0.5 * s * term
    if coef.B is not None:
        c = -(grad @ coef.B)
        out += _upwind(v, c @ coef.B.T, h, diff) + 0.5 * np.sum(c * c, axis=-1)
    if coef.ell is not None:
        out += coef.ell
    return out, grad, hess


def solve_ghjb(problem: GHJBProblem, theta: UncertaintyInterval, grid: GridSpec,
               save_times: Sequence[float] = ()) -> ValueField:
    """March the G-HJB equation backward from ``t = T`` with explicit Euler steps."""
    coef = _Coefficients(problem, grid)
    th = problem.effective_interval(theta)
    h = grid.spacing
    g_grad, _ = derivatives(coef.g, h)
    rate = _rate(coef, th.sigma_hi, h, 2.0 * g_grad if coef.B is not None else None)
    dt_max = CFL / rate if rate > 0 else grid.horizon_T
    if grid.dt_pde is not None:
        if grid.dt_pde > dt_max:
            raise ConfigError(f"dt_pde={grid.dt_pde:g} violates the stability bound {dt_max:g}")
        dt_max = grid.dt_pde
    T = grid.horizon_T
    n_t = max(1, int(np.ceil(T / dt_max - 1e-9)))
    dt = T / n_t
    save_steps = {n_t - int(round(t / dt)) for t in save_times} | {0, n_t}
    v = coef.g.copy()
    rec_t, rec_v, rec_g, rec_h = [], [], [], []

    def record(k, v, grad, hess):
        rec_t.append(T - k * dt)
        rec_v.append(v.copy())
        rec_g.append(grad)
        rec_h.append(hess)

    for k in range(n_t):
        H, grad, hess = _hamiltonian(v, coef, th, h)
        if k in save_steps:
            record(k, v, grad, hess)
        if coef.B is not None and rate > 0:
            if dt * _rate(coef, th.sigma_hi, h, grad) > 1.0:
                raise SolverError("stability bound violated by the control drift", step=k)
        v = v + dt * H
        if not np.all(np.isfinite(v)):
            raise SolverError("non-finite value", step=k + 1)
    grad, hess = derivatives(v, h)
    record(n_t, v, grad, hess)
    order = np.argsort(rec_t)
    return ValueField(grid, np.array(rec_t)[order], np.array(rec_v)[order],
                      np.array(rec_g)[order], np.array(rec_h)[order], n_t)


def lq_bracket(problem: GHJBProblem, grid: GridSpec):
    """Bracket map ``(t_index, ValueField) -> array`` of the problem's G argument."""
    x = grid.coords()
    a = None if problem.second_order is None else problem.second_order(x)
    f1 = None if problem.param_drift is None else problem.param_drift(x)

    def bracket(vf: ValueField, i: int):
        out = np.zeros(vf.values[i].shape)
        if a is not None:
            out += np.einsum("...ij,...ij->...", a, vf.hessian[i])
        if f1 is not None:
            out += np.einsum("...i,...i->...", f1, vf.gradient[i])
        return out

    return bracket


def sigma_star_field(vf: ValueField, theta: UncertaintyInterval, bracket: Callable,
                     times: Sequence[float] | None = None) -> SigmaStarField:
    """Maximising interval endpoint per node, from the bracket's sign."""
    idx = range(len(vf.times)) if times is None else [vf.slice_index(t) for t in times]
    idx = list(idx)
    sig = np.array([g_argmax(bracket(vf, i), theta) for i in idx])
    return SigmaStarField(vf.grid, vf.times[idx], sig)


def lq_problem(A, B, C, Q0, Q1, with_control: bool = True) -> GHJBProblem:
    """G-HJB problem of an LQ regulator with value ``1/2 x'Px + c``."""
    A, B, C = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, C))
    Q0, Q1 = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (Q0, Q1))
    CC = C @ C.T
    return GHJBProblem(
        terminal=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, Q1, x),
        drift=lambda x: x @ A.T,
        second_order=lambda x: np.broadcast_to(CC, x.shape[:-1] + CC.shape),
        control=B if with_control else None,
        running_cost=None if not np.any(Q0) else (lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, Q0, x)),
    )


def full_lq_problem(model) -> GHJBProblem:
    A, B, C = model.scaled()
    return lq_problem(A, B, C, model.running_weight(), model.terminal_weight())


def reduced_lq_problem(reduced) -> GHJBProblem:
    return lq_problem(reduced.A_bar, reduced.B_bar, reduced.C_bar, reduced.Q0, reduced.Q1)


def triad_limit_problem(A1: float, A2: float, A3: float, gamma: float = 1.0,
                        terminal: Callable | None = None) -> GHJBProblem:
    """Mean-of-first-component QoI for the homogenised triad (parameter squared)."""
    def drift(x):
        r1, r2 = x[..., 0], x[..., 1]
        return np.stack([A1 * A3 * r1 * r2**2, A2 * A3 * r2 * r1**2], axis=-1)

    def second_order(x):
        s = np.stack([A1 * x[..., 1], A2 * x[..., 0]], axis=-1) / gamma
        return s[..., :, None] * s[..., None, :]

    return GHJBProblem(
        terminal=terminal or (lambda x: x[..., 0].copy()),
        drift=drift,
        second_order=second_order,
        param_drift=lambda x: A1 * A2 * x,
        param_power=2,
    )


@dataclass(frozen=True)
class RiccatiSolution:
    times: np.ndarray
    P: np.ndarray
    c: np.ndarray


def solve_riccati(A, B, Q0, Q1, T: float, sigma: float, C=None, t: float = 0.0,
                  max_step: float = 1e-4) -> RiccatiSolution:
    """RK4 integration of ``P' = -(A'P + PA - PBB'P + Q0)``, ``c' = -sigma/2 tr(CC'P)``."""
    A, B, Q0, Q1 = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q0, Q1))
    C = B if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    BB, CC = B @ B.T, C @ C.T
    n = max(1, int(np.ceil((T - t) / max_step - 1e-9)))
    h = (T - t) / n

    def rhs(P):
        return -(A.T @ P + P @ A - P @ BB @ P + Q0), -0.5 * sigma * np.trace(CC @ P)

    P, c = Q1.copy(), 0.0
    Ps, cs = [P], [c]
    for k in range(n):
        # integrate backward: dP/ds with s = -t
        k1 = rhs(P)
        k2 = rhs(P - 0.5 * h * k1[0])
        k3 = rhs(P - 0.5 * h * k2[0])
        k4 = rhs(P - h * k3[0])
        P = P - h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        c = c - h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)) or np.linalg.norm(P) > 1e8:
            raise OracleError("Riccati solution blew up", step=k + 1)
        Ps.append(P)
        cs.append(c)
    times = T - h * np.arange(n + 1)
    return RiccatiSolution(times[::-1], np.array(Ps[::-1]), np.array(cs[::-1]))


def riccati_value(A, B, Q0, Q1, T: float, sigma_fixed: float, t: float, x, C=None) -> float:
    sol = solve_riccati(A, B, Q0, Q1, T, sigma_fixed, C=C, t=t)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(0.5 * x @ sol.P[0] @ x + sol.c[0])


def lq_riccati_value(model, sigma_fixed: float, t: float, x) -> float:
    """Riccati value of a :class:`MultiscaleLQModel` or :class:`ReducedLQModel`."""
    if hasattr(model, "scaled"):
        A, B, C = model.scaled()
        return riccati_value(A, B, model.running_weight(), model.terminal_weight(),
                             model.horizon_T, sigma_fixed, t, x, C=C)
    return riccati_value(model.A_bar, model.B_bar, model.Q0, model.Q1, model.horizon_T,
                         sigma_fixed, t, x, C=model.C_bar)
