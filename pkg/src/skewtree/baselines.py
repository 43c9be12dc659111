"""Single-asset reference trees.

``remark1``
    Natural-world binomial tree with up-probability ``p`` and multiplicative
    moves ``u = 1 + mu dt + sqrt((1-p)/p) sigma h`` and
    ``d = 1 + mu dt - sqrt(p/(1-p)) sigma h``. The risk-neutral probability
    is ``q = p - theta sqrt(p (1-p)) h`` with ``theta = (mu - r) / sigma``,
    and discounting is by ``1 + r dt`` per step.
``crr``
    Cox-Ross-Rubinstein: moves ``exp(+-sigma h)``,
    ``q = (exp(r dt) - exp(-sigma h)) / (exp(sigma h) - exp(-sigma h))``.
``jr`` / ``remark4``
    Jarrow-Rudd tree with drift: moves ``exp(mu dt +- sigma h)``,
    ``q = (exp((r - mu) dt) - exp(-sigma h)) / (exp(sigma h) - exp(-sigma h))``.
``remark3``
    Moves ``exp(mu dt + sigma (+-c + delta) h)`` with
    ``q = (1 - theta_bar h) / 2``, ``theta_bar = (mu_bar - sigma_bar^2/2 - r) / sigma_bar``.
    ``mu_bar`` and ``sigma_bar`` must be supplied.
``remark5``
    Fully skewed driver: the price depends on ``|zeta|`` with moves
    ``exp(mu dt + sigma (|zeta +- 1| - |zeta|) h)``. At ``zeta = 0`` both
    moves coincide, no up-probability is defined, and the step is valued as
    the discounted common successor value.

Here ``h = sqrt(dt)`` and ``c = sqrt(1 - delta^2)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ArbitrageWarning

KINDS = ("remark1", "crr", "jr", "remark3", "remark4", "remark5")


@dataclass
class BaselineResult:
    price: float
    q_up: float | np.ndarray
    warnings: list = field(default_factory=list)


def _check_q(q, kind: str, notes: list) -> None:
    arr = np.atleast_1d(q)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        msg = f"{kind}: risk-neutral up-probability outside (0, 1): {arr.min():.6g}..{arr.max():.6g}"
        notes.append(msg)
        warnings.warn(msg, ArbitrageWarning, stacklevel=3)


def _binomial(payoff, s0: float, log_up: float, log_down: float, q: float,
              disc: float, n: int) -> float:
    j = np.arange(n + 1)
    s = s0 * np.exp(j * log_up + (n - j) * log_down)
    v = np.asarray(payoff(s), dtype=float)
    for _ in range(n):
        v = disc * (v[:-1] + q * (v[1:] - v[:-1]))
    return float(v[0])


def _jr_q(mu: float, sigma: float, r: float, dt: float) -> float:
    h = math.sqrt(dt)
    return float((np.expm1((r - mu) * dt) - np.expm1(-sigma * h))
                 / (math.exp(-sigma * h) * np.expm1(2.0 * sigma * h)))


def baseline_trees(kind: str, *, s0: float, mu: float = 0.0, sigma: float, r: float = 0.0,
                   p: float = 0.5, delta: float = 0.0, mu_bar: float | None = None,
                   sigma_bar: float | None = None) -> Callable[..., BaselineResult]:
    """Return ``pricer(payoff, maturity, n_steps) -> BaselineResult`` for one tree kind.

    ``payoff`` maps an array of terminal prices to payoffs.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {KINDS}")
    if not s0 > 0.0:
        raise ValueError("s0 must be positive")
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")
    if kind == "remark1" and not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if kind in ("remark3", "remark5") and not -1.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [-1, 1]")
    if kind == "remark3" and (mu_bar is None or sigma_bar is None or sigma_bar == 0.0):
        raise ValueError("remark3 needs mu_bar and a nonzero sigma_bar")

    def pricer(payoff, maturity: float, n_steps: int) -> BaselineResult:
        n = int(n_steps)
        if n < 1 or not maturity > 0.0:
            raise ValueError("need n_steps >= 1 and a positive maturity")
        dt = maturity / n
        h = math.sqrt(dt)
        notes: list = []
        if kind == "remark1":
            theta = (mu - r) / sigma
            q = p - theta * math.sqrt(p * (1.0 - p)) * h
            up = 1.0 + mu * dt + math.sqrt((1.0 - p) / p) * sigma * h
            down = 1.0 + mu * dt - math.sqrt(p / (1.0 - p)) * sigma * h
            if down <= 0.0:
                raise ValueError("remark1 down factor is not positive; use a smaller step")
            _check_q(q, kind, notes)
            price = _binomial(payoff, s0, math.log(up), math.log(down), q, 1.0 / (1.0 + r * dt), n)
            return BaselineResult(price, q, notes)
        if kind == "crr":
            q = float((np.expm1(r * dt) - np.expm1(-sigma * h))
                       / (math.exp(-sigma * h) * np.expm1(2.0 * sigma * h)))
            _check_q(q, kind, notes)
            price = _binomial(payoff, s0, sigma * h, -sigma * h, q, math.exp(-r * dt), n)
            return BaselineResult(price, q, notes)
        if kind in ("jr", "remark4"):
            q = _jr_q(mu, sigma, r, dt)
            _check_q(q, kind, notes)
            price = _binomial(payoff, s0, mu * dt + sigma * h, mu * dt - sigma * h, q,
                              math.exp(-r * dt), n)
            return BaselineResult(price, q, notes)
        if kind == "remark3":
            c = math.sqrt(1.0 - delta * delta)
            theta = (mu_bar - 0.5 * sigma_bar**2 - r) / sigma_bar
            q = 0.5 * (1.0 - theta * h)
            _check_q(q, kind, notes)
            price = _binomial(payoff, s0, mu * dt + sigma * (c + delta) * h,
                              mu * dt + sigma * (-c + delta) * h, q, math.exp(-r * dt), n)
            return BaselineResult(price, q, notes)
        return _remark5(payoff, s0, mu, sigma, r, dt, n, notes)

    pricer.kind = kind
    return pricer


def _remark5(payoff, s0, mu, sigma, r, dt, n, notes) -> BaselineResult:
    h = math.sqrt(dt)
    disc = math.exp(-r * dt)
    # Levels zeta = -n..n in steps of 2; the price only sees |zeta|.
    zeta = np.arange(-n, n + 1, 2)
    v = np.asarray(payoff(s0 * np.exp(mu * n * dt + sigma * h * np.abs(zeta))), dtype=float)
    # Away from 0 the up move lowers or raises |zeta| depending on the side.
    a = (r - mu) * dt
    q_pos = float((np.expm1(a) - np.expm1(-sigma * h)) / (math.exp(-sigma * h) * np.expm1(2 * sigma * h)))
    q_neg = 1.0 - q_pos
    qs = []
    for k in range(n - 1, -1, -1):
        z = np.arange(-k, k + 1, 2)
        q = np.where(z > 0, q_pos, np.where(z < 0, q_neg, 0.5))
        qs.append(q)
        v = disc * (v[:-1] + q * (v[1:] - v[:-1]))
    _check_q(np.array([q_pos, q_neg]), "remark5", notes)
    if n >= 1:
        msg = "remark5: at zeta = 0 both moves coincide, so the step is not risk-neutral"
        notes.append(msg)
        warnings.warn(msg, ArbitrageWarning, stacklevel=3)
    return BaselineResult(float(v[0]), np.array([q_pos, q_neg]), notes)
