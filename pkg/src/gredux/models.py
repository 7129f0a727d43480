"""Slow-fast model definitions and their closed-form reductions.

Contains the block-structured linear-quadratic system and its averaged limit,
the bilinear triad model with its homogenised limit, and the scalar pitchfork
example.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from gredux.errors import ConfigError, DomainError, ReductionError
from gredux.sublinear import UncertaintyInterval

HURWITZ_TOL = -1e-10
COND_MAX = 1e12


def _mat(a, rows=None, cols=None, name="matrix"):
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if rows is not None and m.shape[0] != rows or cols is not None and m.shape[1] != cols:
        raise ConfigError(f"{name} has shape {m.shape}, expected ({rows}, {cols})")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class BlockMatrices:
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray

    def __post_init__(self):
        A11 = _mat(self.A11, name="A11")
        ns = A11.shape[0]
        A22 = _mat(self.A22, name="A22")
        nf = A22.shape[0]
        if A11.shape != (ns, ns) or A22.shape != (nf, nf):
            raise ConfigError("A11 and A22 must be square")
        B1 = _mat(self.B1, ns, name="B1")
        C1 = _mat(self.C1, ns, name="C1")
        mats = dict(
            A11=A11, A22=A22, B1=B1, C1=C1,
            A12=_mat(self.A12, ns, nf, "A12"),
            A21=_mat(self.A21, nf, ns, "A21"),
            B2=_mat(self.B2, nf, B1.shape[1], "B2"),
            C2=_mat(self.C2, nf, C1.shape[1], "C2"),
        )
        for k, v in mats.items():
            object.__setattr__(self, k, v)
        if np.max(np.linalg.eigvals(A22).real) >= HURWITZ_TOL:
            raise ConfigError("A22 is not Hurwitz")

    @property
    def n_slow(self) -> int:
        return self.A11.shape[0]

    @property
    def n_fast(self) -> int:
        return self.A22.shape[0]


@dataclass(frozen=True)
class MultiscaleLQModel:
    """Linear-quadratic slow-fast system.

    The fast blocks are scaled by ``eps**(-p/2)`` (couplings, fast control
    and noise) and ``eps**(-p)`` (``A22``), with ``p = fast_scaling_exponent``.
    At a fixed parameter value ``s`` the noise coefficient is ``sqrt(s) * C``.
    """

    blocks: BlockMatrices
    epsilon: float
    fast_scaling_exponent: int = 2
    Q0: np.ndarray | None = None
    Q1: np.ndarray | None = None
    horizon_T: float = 0.1
    sigma: UncertaintyInterval = field(default_factory=lambda: UncertaintyInterval(1.0, 1.0))

    def __post_init__(self):
        if not self.epsilon > 0 or not self.horizon_T > 0:
            raise ConfigError("epsilon and horizon_T must be positive")
        if self.fast_scaling_exponent not in (1, 2):
            raise ConfigError("fast_scaling_exponent must be 1 or 2")
        ns = self.blocks.n_slow
        for name in ("Q0", "Q1"):
            q = getattr(self, name)
            q = np.zeros((ns, ns)) if q is None else _mat(q, ns, ns, name)
            if not np.allclose(q, q.T) or np.min(np.linalg.eigvalsh(q)) < -1e-12:
                raise ConfigError(f"{name} must be symmetric positive semi-definite")
            q = np.array(q)
            q.setflags(write=False)
            object.__setattr__(self, name, q)

    def scaled(self):
        """Return ``(A, B, C)`` of the full system at this epsilon."""
        b = self.blocks
        s = self.epsilon ** (-self.fast_scaling_exponent / 2.0)
        A = np.block([[b.A11, s * b.A12], [s * b.A21, s * s * b.A22]])
        return A, np.vstack([b.B1, s * b.B2]), np.vstack([b.C1, s * b.C2])

    def with_epsilon(self, eps: float) -> "MultiscaleLQModel":
        return replace(self, epsilon=eps)

    def terminal_weight(self) -> np.ndarray:
        """Terminal weight on the full state (slow block only)."""
        n = self.blocks.n_slow + self.blocks.n_fast
        W = np.zeros((n, n))
        W[: self.blocks.n_slow, : self.blocks.n_slow] = self.Q1
        return W

    def running_weight(self) -> np.ndarray:
        n = self.blocks.n_slow + self.blocks.n_fast
        W = np.zeros((n, n))
        W[: self.blocks.n_slow, : self.blocks.n_slow] = self.Q0
        return W


@dataclass(frozen=True)
class ReducedLQModel:
    A_bar: np.ndarray
    B_bar: np.ndarray
    C_bar: np.ndarray
    D_bar: np.ndarray
    Q0: np.ndarray
    Q1: np.ndarray
    horizon_T: float
    sigma: UncertaintyInterval


def reduce_lq(model: MultiscaleLQModel) -> ReducedLQModel:
    b = model.blocks
    if np.linalg.cond(b.A22) > COND_MAX:
        raise ReductionError("A22 is numerically singular")
    K = b.A12 @ np.linalg.inv(b.A22)
    return ReducedLQModel(
        A_bar=b.A11 - K @ b.A21,
        B_bar=b.B1 - K @ b.B2,
        C_bar=b.C1 - K @ b.C2,
        D_bar=np.hstack([np.eye(b.n_slow), -K]),
        Q0=model.Q0,
        Q1=model.Q1,
        horizon_T=model.horizon_T,
        sigma=model.sigma,
    )


def regulator_example(epsilon: float, sigma=(0.8, 1.0), horizon_T: float = 0.1,
                      fast_scaling_exponent: int = 2) -> MultiscaleLQModel:
    """The two-dimensional regulator benchmark.

    Noise enters through the control matrix (``C = B``); the terminal cost is
    ``x1**2``, i.e. ``Q1 = diag(2)`` under the ``1/2 x'Qx`` convention.
    """
    blocks = BlockMatrices(
        A11=[[-2.0]], A12=[[-1.0]], A21=[[1.0]], A22=[[-2.0]],
        B1=[[0.1]], B2=[[2.0]], C1=[[0.1]], C2=[[2.0]],
    )
    return MultiscaleLQModel(blocks, epsilon, fast_scaling_exponent, Q0=[[0.0]], Q1=[[2.0]],
                             horizon_T=horizon_T, sigma=UncertaintyInterval(*sigma))


def _check_triad_coefficients(A1, A2, A3):
    if abs(A1 + A2 + A3) > 1e-12:
        raise ConfigError(f"triad coefficients must sum to zero, got {A1 + A2 + A3:g}")


@dataclass(frozen=True)
class TriadModel:
    A1: float
    A2: float
    A3: float
    lam: UncertaintyInterval
    epsilon: float
    gamma: float = 1.0

    def __post_init__(self):
        _check_triad_coefficients(self.A1, self.A2, self.A3)
        if not self.epsilon > 0 or not self.gamma > 0:
            raise ConfigError("epsilon and gamma must be positive")

    def limit(self, lambda_value: float) -> "TriadLimit":
        return TriadLimit(self.A1, self.A2, self.A3, lambda_value, self.gamma)


@dataclass(frozen=True)
class TriadLimit:
    A1: float
    A2: float
    A3: float
    lambda_value: float
    gamma: float = 1.0

    def __post_init__(self):
        _check_triad_coefficients(self.A1, self.A2, self.A3)
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")


def triad_limit_drift(limit: TriadLimit, r) -> np.ndarray:
    """Drift of the homogenised triad; accepts ``(2,)`` or ``(n, 2)`` input."""
    r = np.asarray(r, dtype=float)
    r1, r2 = r[..., 0], r[..., 1]
    h = 0.5 * limit.lambda_value**2
    return np.stack([limit.A1 * r1 * (limit.A3 * r2**2 + h * limit.A2),
                     limit.A2 * r2 * (limit.A3 * r1**2 + h * limit.A1)], axis=-1)


def triad_limit_diffusion(limit: TriadLimit, r) -> np.ndarray:
    """Coefficient vector multiplying the single scalar Brownian increment."""
    r = np.asarray(r, dtype=float)
    c = limit.lambda_value / limit.gamma
    return np.stack([c * limit.A1 * r[..., 1], c * limit.A2 * r[..., 0]], axis=-1)


def triad_limit_diffusion_jvp(limit: TriadLimit, r) -> np.ndarray:
    """Directional derivative of the diffusion along itself (Milstein term)."""
    r = np.asarray(r, dtype=float)
    c = (limit.lambda_value / limit.gamma) ** 2 * limit.A1 * limit.A2
    return c * r


def triad_limit_drift_split(limit: TriadLimit, r):
    """Split the limit drift into the parameter-free part and ``f1 = lam^2 A1 A2 r``.

    The drift equals ``f0 + f1 / 2``; returns ``(f0, f1 / lam^2)``.
    """
    r = np.asarray(r, dtype=float)
    r1, r2 = r[..., 0], r[..., 1]
    f0 = np.stack([limit.A1 * limit.A3 * r1 * r2**2, limit.A2 * limit.A3 * r2 * r1**2], axis=-1)
    return f0, limit.A1 * limit.A2 * r


def triad_full_drift(model: TriadModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r1, r2, u = x[..., 0], x[..., 1], x[..., 2]
    ie = 1.0 / model.epsilon
    return np.stack([ie * model.A1 * r2 * u,
                     ie * model.A2 * r1 * u,
                     -ie * ie * u + ie * model.A3 * r1 * r2], axis=-1)


def pitchfork_limit_vector_field(theta: float, r):
    return -np.asarray(r) ** 3 + np.asarray(r) * (1.0 - 3.0 * theta)


@dataclass(frozen=True)
class PitchforkModel:
    """Slow cubic drift coupled to a fast Ornstein-Uhlenbeck variable.

    ``dR = (R - U**3) dt``, ``dU = (R - U)/eps dt + sqrt(2 theta/eps) dW``.
    """

    theta: float
    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError("theta must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")

    def drift(self, x):
        r, u = x[..., 0], x[..., 1]
        return np.stack([r - u**3, (r - u) / self.epsilon], axis=-1)

    def diffusion(self, x):
        out = np.zeros(x.shape + (1,))
        out[..., 1, 0] = np.sqrt(2.0 * self.theta / self.epsilon)
        return out


def pitchfork_roots(theta: float) -> np.ndarray:
    """Real roots of ``-r**3 + r(1 - 3 theta)``, ascending."""
    c = 1.0 - 3.0 * theta
    if c > 0:
        s = np.sqrt(c)
        return np.array([-s, 0.0, s])
    return np.array([0.0])


def pitchfork_stable_roots(theta: float) -> np.ndarray:
    roots = pitchfork_roots(theta)
    slope = -3.0 * roots**2 + (1.0 - 3.0 * theta)
    return roots[slope < 0]


def conserved_quantity(A1: float, A2: float, r):
    r = np.asarray(r, dtype=float)
    return A1 * r[..., 1] ** 2 - A2 * r[..., 0] ** 2


def triad_equilibria(A1: float, A2: float, A3: float, lambda_value: float) -> list:
    if not (A1 > 0 and A2 > 0 and A3 < 0):
        raise DomainError("equilibria need A1 > 0, A2 > 0, A3 < 0")
    a = lambda_value * np.sqrt(A1 / (2.0 * abs(A3)))
    b = lambda_value * np.sqrt(A2 / (2.0 * abs(A3)))
    return [np.array([sa * a, sb * b]) for sa in (1.0, -1.0) for sb in (1.0, -1.0)]
