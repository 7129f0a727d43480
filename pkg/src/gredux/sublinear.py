"""The G-nonlinearity and Monte Carlo estimates of sublinear expectations.

A sublinear expectation over a parametrised family is represented as the
maximum of linear expectations, one per parameter value on a finite grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from gredux.errors import ConfigError, InsufficientSamplesError


@dataclass(frozen=True)
class UncertaintyInterval:
    """Closed interval ``[sigma_lo, sigma_hi]`` of admissible parameter values."""

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        lo, hi = float(self.sigma_lo), float(self.sigma_hi)
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0.0 or hi < lo:
            raise ConfigError(f"invalid uncertainty interval [{lo}, {hi}]")
        object.__setattr__(self, "sigma_lo", lo)
        object.__setattr__(self, "sigma_hi", hi)

    @property
    def degenerate(self) -> bool:
        return self.sigma_lo == self.sigma_hi

    def squared(self) -> "UncertaintyInterval":
        return UncertaintyInterval(self.sigma_lo**2, self.sigma_hi**2)

    def contains(self, other: "UncertaintyInterval") -> bool:
        return self.sigma_lo <= other.sigma_lo and other.sigma_hi <= self.sigma_hi


@dataclass(frozen=True)
class ThetaGrid:
    interval: UncertaintyInterval
    n_points: int = 11
    values: tuple = field(init=False)

    def __post_init__(self):
        if int(self.n_points) < 1:
            raise ConfigError("theta grid needs at least one point")
        n = int(self.n_points)
        lo, hi = self.interval.sigma_lo, self.interval.sigma_hi
        if n == 1:
            if not self.interval.degenerate:
                raise ConfigError("a one-point grid needs a degenerate interval")
            vals = (lo,)
        else:
            if self.interval.degenerate:
                raise ConfigError("a degenerate interval admits a single grid point only")
            vals = tuple(float(v) for v in np.linspace(lo, hi, n))
            vals = vals[:-1] + (hi,)
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "values", vals)

    @classmethod
    def single(cls, theta: float) -> "ThetaGrid":
        return cls(UncertaintyInterval(theta, theta), 1)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return self.n_points


@dataclass(frozen=True)
class WorstCaseEstimate:
    value: float
    argmax_theta: float
    per_theta_means: tuple  # of (theta, mean, std_error)
    n_samples: int


def g_nonlinearity(x, theta: UncertaintyInterval):
    """``max_{s in [lo, hi]} s * x / 2``, elementwise for array input."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * x * np.where(x >= 0.0, theta.sigma_hi, theta.sigma_lo)
    return float(out) if out.ndim == 0 else out


def g_argmax(x, theta: UncertaintyInterval):
    """Endpoint attaining the maximum in :func:`g_nonlinearity`; ``x == 0`` maps to the upper endpoint."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0.0, theta.sigma_hi, theta.sigma_lo)
    return float(out) if out.ndim == 0 else out


def worst_case_expectation(
    functional: Callable[[np.ndarray], np.ndarray] | None,
    ensemble_factory: Callable[[float], np.ndarray],
    grid: ThetaGrid | Sequence[float],
) -> WorstCaseEstimate:
    """Estimate the sublinear expectation of ``functional`` over ``grid``.

    ``ensemble_factory(theta)`` returns samples for one parameter value;
    ``functional`` maps them to per-sample real values (``None`` means the
    samples already are the values). Ties in the maximum go to the smallest
    theta.
    """
    thetas = list(grid)
    if not thetas:
        raise ConfigError("empty theta grid")
    rows = []
    n_common = None
    for theta in sorted(thetas):
        samples = ensemble_factory(theta)
        vals = np.asarray(samples if functional is None else functional(samples), dtype=float).ravel()
        if vals.size < 2:
            raise InsufficientSamplesError(f"need at least 2 samples at theta={theta}, got {vals.size}")
        if n_common is None:
            n_common = vals.size
        elif vals.size != n_common:
            raise InsufficientSamplesError("sample counts differ across theta values")
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(vals.size))
        rows.append((float(theta), mean, se))
    best = rows[0]
    for row in rows[1:]:
        if row[1] > best[1]:
            best = row
    return WorstCaseEstimate(best[1], best[0], tuple(rows), int(n_common))
