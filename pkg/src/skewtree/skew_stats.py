"""Skew-normal and skew Brownian motion statistics and samplers.

Skewness is carried by a single parameter with three equivalent views::

    alpha = (1 + delta) / 2,    lambda = delta / sqrt(1 - delta**2)

``delta`` is the canonical internal value. ``alpha`` is the probability that
an excursion of the skew Brownian motion (SBM) from zero is positive, and
``lambda`` is the shape of the skew-normal law of the unit-time marginal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._random import RngLike, make_rng

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SkewParams:
    """Equivalent skewness parameterizations of one SBM law.

    Use :meth:`from_delta`, :meth:`from_alpha` or :meth:`from_lambda`
    rather than the raw constructor.

    Attributes
    ----------
    alpha : float
        Probability of a positive excursion, in (0, 1). The closed
        interval is accepted for the degenerate samplers at 0 and 1.
    delta : float
        Canonical skewness, ``2 * alpha - 1``.
    lam : float
        Skew-normal shape, ``delta / sqrt(1 - delta**2)``.
    """

    alpha: float
    delta: float
    lam: float

    def __post_init__(self):
        if not -1.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [-1, 1], got {self.delta}")
        if abs(self.alpha - (1.0 + self.delta) / 2.0) > 4e-16:
            raise ValueError("alpha and delta are inconsistent")

    @classmethod
    def from_delta(cls, delta: float) -> "SkewParams":
        delta = float(delta)
        if not -1.0 <= delta <= 1.0:
            raise ValueError(f"delta must lie in [-1, 1], got {delta}")
        if abs(delta) == 1.0:
            lam = math.copysign(math.inf, delta)
        else:
            lam = delta / math.sqrt(1.0 - delta * delta)
        return cls(alpha=(1.0 + delta) / 2.0, delta=delta, lam=lam)

    @classmethod
    def from_alpha(cls, alpha: float) -> "SkewParams":
        alpha = float(alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        return cls.from_delta(2.0 * alpha - 1.0)

    @classmethod
    def from_lambda(cls, lam: float) -> "SkewParams":
        lam = float(lam)
        return cls.from_delta(lam / math.sqrt(1.0 + lam * lam))

    @property
    def mu1(self) -> float:
        """Mean of the SBM at unit time, ``delta * sqrt(2/pi)``."""
        return self.delta * _SQRT_2_OVER_PI


@dataclass(frozen=True)
class SbmMoments:
    """Mean, variance, skewness and excess kurtosis of an SBM marginal."""

    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float


def _as_params(params) -> SkewParams:
    if isinstance(params, SkewParams):
        return params
    return SkewParams.from_alpha(params)


def _check_t(t: float) -> float:
    t = float(t)
    if not t > 0.0:
        raise ValueError(f"t must be positive, got {t}")
    return t


def snd_pdf(z, lam: float):
    """Skew-normal density ``2 phi(z) Phi(lam z)``.

    Parameters
    ----------
    z : float or array_like
        Evaluation points.
    lam : float
        Shape parameter; ``lam = 0`` gives the standard normal density.
    """
    if not np.isfinite(lam):
        raise ValueError("lambda must be finite")
    z = np.asarray(z, dtype=float)
    out = 2.0 * _INV_SQRT_2PI * np.exp(-0.5 * z * z) * ndtr(lam * z)
    return out if out.ndim else float(out)


def snd_moments(lam: float) -> tuple[float, float]:
    """Mean and variance of the skew-normal law with shape ``lam``."""
    delta = SkewParams.from_lambda(lam).delta
    return _SQRT_2_OVER_PI * delta, 1.0 - (2.0 / math.pi) * delta * delta


def snd_odd_moment(k: int, lam: float) -> float:
    """Raw moment ``E[Z**(2k+1)]`` of the skew-normal law with shape ``lam``.

    Uses the finite-sum closed form. Even moments of the skew-normal law
    coincide with standard normal ones; see :func:`snd_even_moment`.
    """
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    lam = float(lam)
    if lam == 0.0:
        return 0.0
    total = 0.0
    for j in range(k + 1):
        total += (
            math.factorial(j) * (2.0 * lam) ** (2 * j)
            / (math.factorial(2 * j + 1) * math.factorial(k - j))
        )
    return (
        _SQRT_2_OVER_PI * lam * (1.0 + lam * lam) ** (-k - 0.5)
        * 2.0 ** (-k) * math.factorial(2 * k + 1) * total
    )


def snd_even_moment(k: int) -> float:
    """Raw moment ``E[Z**(2k)]``, equal to the standard normal ``(2k-1)!!``."""
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    return float(math.prod(range(1, 2 * k, 2)))


def sbm_pdf(x, t: float, params):
    """Marginal density of skew Brownian motion at time ``t``.

    The density is ``alpha * sqrt(2/(pi t)) exp(-x^2/2t)`` on ``x >= 0`` and
    the same Gaussian shape weighted by ``1 - alpha`` on ``x < 0``.
    """
    t = _check_t(t)
    p = _as_params(params)
    x = np.asarray(x, dtype=float)
    base = math.sqrt(2.0 / (math.pi * t)) * np.exp(-x * x / (2.0 * t))
    out = np.where(x >= 0.0, p.alpha, 1.0 - p.alpha) * base
    return out if out.ndim else float(out)


def sbm_moments(t: float, params) -> SbmMoments:
    """Closed-form moments of the SBM marginal at time ``t``.

    Skewness and excess kurtosis do not depend on ``t``. The kurtosis is
    obtained from the raw moments ``E[X^3] = 2 mu1`` and ``E[X^4] = 3`` at
    unit time.
    """
    t = _check_t(t)
    m = _as_params(params).mu1
    m2 = m * m
    v1 = 1.0 - m2
    skew = (2.0 * m2 - 1.0) * m / v1**1.5
    kurt = 2.0 * m2 * (2.0 - 3.0 * m2) / (v1 * v1)
    return SbmMoments(mean=math.sqrt(t) * m, variance=t * v1, skewness=skew, excess_kurtosis=kurt)


def sample_sbm_marginal(t: float, params, rng: RngLike = None, size=None):
    """Draw from the SBM marginal at time ``t``.

    A ``N(0, t)`` draw is folded to its absolute value and its sign is
    flipped with probability ``1 - alpha``.
    """
    t = _check_t(t)
    p = _as_params(params)
    gen = make_rng(rng)
    mag = np.abs(gen.standard_normal(size)) * math.sqrt(t)
    flip = gen.random(size) >= p.alpha
    out = np.where(flip, -mag, mag)
    return out if np.ndim(out) else float(out)


def sample_ito_mckean_path(t_grid, delta: float, rng: RngLike = None, n_paths: int | None = None):
    """Simulate ``A_t = sqrt(1 - delta^2) B1_t + delta |B2_t|`` on a grid.

    Parameters
    ----------
    t_grid : array_like
        Strictly increasing times starting at 0.
    delta : float
        Skewness in (-1, 1).
    rng : seed or Generator
    n_paths : int, optional
        Number of independent paths. When omitted a single path of shape
        ``(len(t_grid),)`` is returned, otherwise ``(n_paths, len(t_grid))``.
    """
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
        raise ValueError("t_grid must be one-dimensional and start at 0")
    steps = np.diff(grid)
    if np.any(steps <= 0.0):
        raise ValueError("t_grid must be strictly increasing")
    if not -1.0 < delta < 1.0:
        raise ValueError("delta must lie in (-1, 1)")
    gen = make_rng(rng)
    shape = (1 if n_paths is None else int(n_paths), 2, steps.size)
    incr = gen.standard_normal(shape) * np.sqrt(steps)
    b = np.zeros((shape[0], 2, grid.size))
    np.cumsum(incr, axis=2, out=b[:, :, 1:])
    a = math.sqrt(1.0 - delta * delta) * b[:, 0] + delta * np.abs(b[:, 1])
    return a[0] if n_paths is None else a
