"""Regression solver for second-order BSDEs.

The fully nonlinear equation ``v_t + H(t, x, v, Dv, D2v) = 0``, ``v(T) = g``
is represented along a forward diffusion ``dX = mu dt + s dW`` by

    Y_n = Y_{n+1} + H(t_n, X_n, Y_{n+1}, Z_n, G_n) dt - Z_n . dX_n - 1/2 tr(G_n s s') dt,

which is the time discretisation of ``dY = f ds + Z o dX`` with ``f = -H``.
``Z`` and ``G`` (the Hessian process) are the gradient and Hessian of a
least-squares surrogate of ``Y_{n+1}`` fitted on the step-``n+1`` states.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from gredux.errors import ConfigError, SolverError
from gredux.models import TriadModel, triad_full_drift
from gredux.sde_sim import SDESystem, SimConfig, simulate
from gredux.sublinear import UncertaintyInterval, g_nonlinearity

COND_MAX = 1e10


@dataclass(frozen=True)
class TwoBsdeProblem:
    """``driver(t, x, y, z, S)`` is the generator ``H`` of ``v_t + H = 0``.

    Arrays are batched: ``x`` and ``z`` are ``(n, d)``, ``S`` is ``(n, d, d)``.
    ``max_forward_dt`` caps the forward Euler step (stiff fast variables).
    """

    forward: SDESystem
    driver: Callable
    terminal: Callable
    horizon_T: float
    x0: tuple
    theta: UncertaintyInterval
    max_forward_dt: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not self.horizon_T > 0:
            raise ConfigError("horizon must be positive")


@dataclass(frozen=True)
class ApproximatorSpec:
    family: str = "polynomial"
    degree: int = 2
    ridge: float = 1e-8
    features: Callable | None = None  # x -> (phi, dphi, d2phi) for family="features"

    def __post_init__(self):
        if self.family not in ("polynomial", "features"):
            raise ConfigError(f"unknown approximator family {self.family!r}")
        if self.degree < 1 or self.ridge < 0:
            raise ConfigError("degree must be >= 1 and ridge >= 0")
        if self.family == "features" and self.features is None:
            raise ConfigError("family='features' needs a feature map")

    def n_features(self, dim: int) -> int:
        if self.family == "polynomial":
            return len(monomial_exponents(dim, self.degree))
        return self.features(np.zeros((1, dim)))[0].shape[1]


def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    exps = [e for e in itertools.product(range(degree + 1), repeat=dim) if sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), tuple(-k for k in e)))
    return np.array(exps, dtype=int)


def polynomial_features(z: np.ndarray, exps: np.ndarray):
    """Monomials of ``z`` with first and second derivatives.

    Returns ``phi (n, p)``, ``dphi (n, p, d)``, ``d2phi (n, p, d, d)``.
    """
    n, d = z.shape
    deg = exps.max()
    pw = np.ones((deg + 1, n, d))
    for k in range(1, deg + 1):
        pw[k] = pw[k - 1] * z

    def mono(e):
        out = np.ones(n)
        for i, k in enumerate(e):
            if k < 0:
                return np.zeros(n)
            out = out * pw[k, :, i]
        return out

    p = len(exps)
    phi = np.empty((n, p))
    dphi = np.zeros((n, p, d))
    d2phi = np.zeros((n, p, d, d))
    for j, e in enumerate(exps):
        phi[:, j] = mono(e)
        for i in range(d):
            if e[i] == 0:
                continue
            ei = e.copy()
            ei[i] -= 1
            dphi[:, j, i] = e[i] * mono(ei)
            for k in range(d):
                if ei[k] == 0:
                    continue
                eik = ei.copy()
                eik[k] -= 1
                d2phi[:, j, i, k] = e[i] * ei[k] * mono(eik)
    return phi, dphi, d2phi


@dataclass
class FittedSurrogate:
    coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    spec: ApproximatorSpec
    exps: np.ndarray | None = None

    def _features(self, x):
        if self.spec.family == "polynomial":
            z = (x - self.center) / self.scale
            phi, dphi, d2phi = polynomial_features(z, self.exps)
            return phi, dphi / self.scale, d2phi / np.multiply.outer(self.scale, self.scale)
        return self.spec.features(x)

    def evaluate(self, x):
        phi, dphi, d2phi = self._features(np.atleast_2d(x))
        return (phi @ self.coef, np.einsum("npd,p->nd", dphi, self.coef),
                np.einsum("npde,p->nde", d2phi, self.coef))


def fit_surrogate(x: np.ndarray, y: np.ndarray, spec: ApproximatorSpec) -> FittedSurrogate:
    """Ridge least squares of ``y`` on features of ``x``."""
    if spec.family == "polynomial":
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        exps = monomial_exponents(x.shape[1], spec.degree)
        sur = FittedSurrogate(None, center, scale, spec, exps)
        phi = polynomial_features((x - center) / scale, exps)[0]
    else:
        sur = FittedSurrogate(None, np.zeros(x.shape[1]), np.ones(x.shape[1]), spec)
        phi = spec.features(x)[0]
    gram = phi.T @ phi / len(y)
    norm = np.sqrt(np.maximum(np.diag(gram), 1e-300))
    gs = gram / np.outer(norm, norm)
    if np.linalg.cond(gs) > COND_MAX:
        raise SolverError("rank-deficient regression; increase n_samples or lower the degree")
    rhs = phi.T @ y / len(y)
    sur.coef = np.linalg.solve(gs + spec.ridge * np.eye(len(norm)), rhs / norm) / norm
    return sur


@dataclass
class TwoBsdeSolution:
    y0: float
    z0: np.ndarray
    gamma0: np.ndarray
    surrogates: list  # per step n: surrogate of v(t_{n+1}, .)
    terminal_mismatch: float
    n_samples: int
    n_steps: int
    seed: int
    y0_std_error: float = float("nan")
    times: np.ndarray | None = None
    mean_path: np.ndarray | None = None  # (N+1, d) mean forward state

    def report_csv(self) -> str:
        d = len(self.z0)
        head = ["y0"] + [f"z0_{i}" for i in range(d)] + ["terminal_mismatch", "n_steps", "n_samples", "seed"]
        row = [repr(self.y0)] + [repr(float(z)) for z in self.z0] + [
            repr(self.terminal_mismatch), str(self.n_steps), str(self.n_samples), str(self.seed)]
        return ",".join(head) + "\n" + ",".join(row) + "\n"

    def coefficients_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "kind", "index", "value"])
        for n, s in enumerate(self.surrogates):
            for kind, arr in (("center", s.center), ("scale", s.scale), ("coef", s.coef)):
                for i, v in enumerate(arr):
                    w.writerow([n, kind, i, repr(float(v))])
        return buf.getvalue()


def solve_2bsde(problem: TwoBsdeProblem, approx: ApproximatorSpec = ApproximatorSpec(),
                n_steps: int = 50, n_samples: int = 10_000, seed: int = 0) -> TwoBsdeSolution:
    d = len(problem.x0)
    if n_steps < 2:
        raise ConfigError("n_steps must be at least 2")
    if n_samples < 10 * approx.n_features(d):
        raise ConfigError(f"n_samples must be at least {10 * approx.n_features(d)} for this approximator")
    T = problem.horizon_T
    dt = T / n_steps
    sub = 1
    if problem.max_forward_dt is not None and dt > problem.max_forward_dt:
        sub = int(np.ceil(dt / problem.max_forward_dt - 1e-9))
    cfg = SimConfig(dt / sub, T, n_samples, seed, problem.x0)
    ens = simulate(problem.forward, cfg, record_every=sub, keep_increments=False)
    X = ens.states  # (n, N+1, d)
    if X.shape[1] != n_steps + 1:
        raise SolverError("forward ensemble does not match the time grid")
    t = np.arange(n_steps + 1) * dt

    Y = np.asarray(problem.terminal(X[:, -1]), dtype=float)
    surrogates = [None] * n_steps
    Zs = np.empty((n_samples, n_steps, d))
    Gs = np.empty((n_samples, n_steps, d, d))
    for n in range(n_steps - 1, -1, -1):
        sur = fit_surrogate(X[:, n + 1], Y, approx)
        surrogates[n] = sur
        xn = X[:, n]
        _, Z, G = sur.evaluate(xn)
        s = problem.forward.diffusion(xn)
        corr = 0.5 * np.einsum("nij,nik,njk->n", G, s, s)
        H = problem.driver(t[n], xn, Y, Z, G)
        dX = X[:, n + 1] - xn
        Y = Y + H * dt - np.einsum("nd,nd->n", Z, dX) - corr * dt
        if not np.all(np.isfinite(Y)):
            raise SolverError("non-finite Y", step=n)
        Zs[:, n], Gs[:, n] = Z, G

    y0 = float(Y.mean())
    y0_se = float(Y.std(ddof=1) / np.sqrt(n_samples))

    # forward replay of the fitted processes; its terminal gap measures the fit
    Yf = np.full(n_samples, y0)
    for n in range(n_steps):
        xn = X[:, n]
        s = problem.forward.diffusion(xn)
        corr = 0.5 * np.einsum("nij,nik,njk->n", Gs[:, n], s, s)
        H = problem.driver(t[n], xn, Yf, Zs[:, n], Gs[:, n])
        Yf = Yf - H * dt + np.einsum("nd,nd->n", Zs[:, n], X[:, n + 1] - xn) + corr * dt
    mismatch = float(np.sqrt(np.mean((Yf - problem.terminal(X[:, -1])) ** 2)))
    return TwoBsdeSolution(y0, Zs[:, 0].mean(axis=0), Gs[:, 0].mean(axis=0), surrogates, mismatch,
                           n_samples, n_steps, seed, y0_se, t, X.mean(axis=0))


def sigma_star_series(solution: TwoBsdeSolution, bracket: Callable, theta: UncertaintyInterval):
    """Maximising endpoint along the mean forward path.

    ``bracket(x, z, S)`` evaluates the parameter-free argument of ``G`` on
    batched inputs; the surrogate of step ``n`` supplies ``Dv`` and ``D2v`` at
    ``t_n``. Returns ``(times, sigma_star)`` for ``t_0 .. t_{N-1}``.
    """
    from gredux.sublinear import g_argmax

    out = []
    for n, sur in enumerate(solution.surrogates):
        x = solution.mean_path[n][None, :]
        _, z, S = sur.evaluate(x)
        out.append(float(g_argmax(bracket(x, z, S)[0], theta)))
    return solution.times[:-1].copy(), np.array(out)


def triad_full_bracket(model: TriadModel) -> Callable:
    return lambda x, z, S: S[:, 2, 2] / model.epsilon**2


def _constant_diffusion(C):
    C = np.atleast_2d(C)
    m = C.shape[1]
    return lambda x: np.broadcast_to(C, x.shape + (m,))


def _spread(system: SDESystem, spread) -> SDESystem:
    """Append independent noise ``diag(spread)`` to a forward diffusion.

    The representation holds for any forward diffusion, and isotropic noise
    keeps the regression well conditioned when the model noise is degenerate.
    """
    spread = np.atleast_1d(np.asarray(spread, dtype=float))
    if not np.any(spread):
        return system
    d = len(spread)
    extra = np.diag(spread)

    def diffusion(x):
        base = system.diffusion(x)
        return np.concatenate([base, np.broadcast_to(extra, x.shape[:-1] + (d, d))], axis=-1)

    return SDESystem(system.drift, diffusion, system.noise_dim + d)


def make_lq_driver(model) -> Callable:
    """Generator ``G(CC':S) + <Ax, z> - |B'z|^2/2 + x'Q0x/2`` of an LQ G-HJB equation.

    Accepts a :class:`MultiscaleLQModel` (full system) or a
    :class:`ReducedLQModel`.
    """
    if hasattr(model, "scaled"):
        A, B, C = model.scaled()
        Q0 = model.running_weight()
    else:
        A, B, C, Q0 = model.A_bar, model.B_bar, model.C_bar, model.Q0
    CC = C @ C.T
    theta = model.sigma

    def driver(t, x, y, z, S):
        x = np.atleast_2d(x)
        z = np.atleast_2d(z)
        S = np.asarray(S).reshape(len(z), CC.shape[0], CC.shape[0])
        bracket = np.einsum("ij,nij->n", CC, S)
        bz = z @ B
        out = g_nonlinearity(bracket, theta) + np.einsum("nd,nd->n", x @ A.T, z) - 0.5 * np.sum(bz**2, axis=1)
        if np.any(Q0):
            out = out + 0.5 * np.einsum("ni,ij,nj->n", x, Q0, x)
        return out

    return driver


def make_lq_problem(model, x0, forward_sigma: float | None = None, spread=0.0) -> TwoBsdeProblem:
    """2BSDE problem of an LQ regulator.

    The forward process is the uncontrolled system at ``forward_sigma``
    (default: upper endpoint) plus optional isotropic ``spread`` noise.
    """
    if hasattr(model, "scaled"):
        A, _, C = model.scaled()
        Q1 = model.terminal_weight()
        fast = model.epsilon ** model.fast_scaling_exponent
        max_dt = 0.05 * fast / max(1.0, float(np.max(np.abs(model.blocks.A22))))
    else:
        A, C, Q1 = model.A_bar, model.C_bar, model.Q1
        max_dt = None
    s = model.sigma.sigma_hi if forward_sigma is None else forward_sigma
    fwd = SDESystem(lambda x: x @ A.T, _constant_diffusion(np.sqrt(s) * C), C.shape[1])
    fwd = _spread(fwd, np.broadcast_to(spread, (A.shape[0],)))
    return TwoBsdeProblem(fwd, make_lq_driver(model),
                          lambda x: 0.5 * np.einsum("ni,ij,nj->n", x, Q1, x),
                          model.horizon_T, x0, model.sigma, max_dt)


def make_triad_qoi_problem(model: TriadModel, which: str, T: float, x0,
                           forward_lambda: float | None = None, spread=0.0) -> TwoBsdeProblem:
    """Worst-case mean of the first component at time ``T``.

    Both equations carry the square of the noise level in front of the
    parameter-free bracket, so ``G`` acts with the squared interval.
    """
    x0 = tuple(np.atleast_1d(np.asarray(x0, dtype=float)))
    A1, A2, A3, eps, gam = model.A1, model.A2, model.A3, model.epsilon, model.gamma
    th2 = model.lam.squared()
    lam_f = model.lam.sigma_hi if forward_lambda is None else forward_lambda
    if which == "full":
        if len(x0) != 3:
            raise ConfigError("the full triad problem needs a 3-dimensional initial state")

        def driver(t, x, y, z, S):
            return g_nonlinearity(S[:, 2, 2] / eps**2, th2) + np.einsum("nd,nd->n", z, triad_full_drift(model, x))

        def diffusion(x):
            out = np.zeros(x.shape + (1,))
            out[..., 2, 0] = lam_f / eps
            return out

        fwd = SDESystem(lambda x: triad_full_drift(model, x), diffusion, 1)
        max_dt = 1e-2 * eps**2
    elif which == "limit":
        if len(x0) != 2:
            raise ConfigError("the limit triad problem needs a 2-dimensional initial state")
        lim = model.limit(lam_f)

        def hat_s(x):
            return np.stack([A1 * x[..., 1], A2 * x[..., 0]], axis=-1) / gam

        def driver(t, x, y, z, S):
            s = hat_s(x)
            bracket = np.einsum("ni,nij,nj->n", s, S, s) + A1 * A2 * np.einsum("nd,nd->n", z, x)
            f0 = np.stack([A1 * A3 * x[:, 0] * x[:, 1] ** 2, A2 * A3 * x[:, 1] * x[:, 0] ** 2], axis=-1)
            return g_nonlinearity(bracket, th2) + np.einsum("nd,nd->n", z, f0)

        from gredux.models import triad_limit_drift

        fwd = SDESystem(lambda x: triad_limit_drift(lim, x), lambda x: lam_f * hat_s(x)[..., None], 1)
        max_dt = None
    else:
        raise ConfigError(f"unknown triad problem kind {which!r}")
    fwd = _spread(fwd, np.broadcast_to(spread, (len(x0),)))
    return TwoBsdeProblem(fwd, driver, lambda x: x[:, 0].copy(), T, x0, model.lam, max_dt)
