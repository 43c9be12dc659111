"""Skew random walks, their ensemble moments and zero-occurrence statistics.

A skew random walk (SRW) ``M`` starts at 0 and moves by +-1. Away from 0
each step is fair; at 0 it moves up with probability ``alpha``. Rescaled by
``sqrt(dt)`` it converges to skew Brownian motion.

Ensembles are simulated in fixed-size blocks of paths, each block with its
own spawned random stream. Per-step statistics are accumulated as exact
integer sums, so the result does not depend on the number of workers or on
the order in which blocks finish.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._random import RngLike, block_sizes, make_rng, seed_sequence, spawn
from .skew_stats import SkewParams, _as_params

BLOCK_PATHS = 16384
HIST_BIN_PP = 0.05
HIST_MAX_PP = 4.17


def default_workers() -> int:
    """Worker count from ``SKEWTREE_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SKEWTREE_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SrwPath:
    """One skew random walk trajectory ``M_0 = 0, ..., M_n``."""

    values: np.ndarray
    alpha: float
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 1 or v.size < 2 or v[0] != 0:
            raise ValueError("a walk must start at 0 and have at least one step")
        if np.any(np.abs(np.diff(v)) != 1):
            raise ValueError("walk increments must be +-1")

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass
class EnsembleMomentReport:
    """Per-step ensemble moments of ``M_k`` and ``dM_k`` against theory.

    Curves are indexed by ``k = 1..n``. Each ``mse_*`` is the root mean
    square difference between an empirical and a theoretical curve.
    """

    alpha: float
    n_paths: int
    empirical_mean: np.ndarray
    empirical_std: np.ndarray
    empirical_dmean: np.ndarray
    empirical_dstd: np.ndarray
    theoretical_mean: np.ndarray
    theoretical_std: np.ndarray
    theoretical_dmean: np.ndarray
    theoretical_dstd: np.ndarray
    mse_mean: float
    mse_std: float
    mse_dmean: float
    mse_dstd: float

    def to_rows(self):
        """Yield ``(k, emp_mean, th_mean, emp_std, th_std, emp_dmean, th_dmean, emp_dstd, th_dstd)``."""
        for i in range(self.empirical_mean.size):
            yield (
                i + 1,
                self.empirical_mean[i], self.theoretical_mean[i],
                self.empirical_std[i], self.theoretical_std[i],
                self.empirical_dmean[i], self.theoretical_dmean[i],
                self.empirical_dstd[i], self.theoretical_dstd[i],
            )


@dataclass
class ZeroOccurrenceStats:
    """Distribution over paths of the percentage of steps with ``M_k = 0``.

    Attributes
    ----------
    rates : ndarray
        Per-path occurrence rate in percent.
    quartiles : tuple of float
        ``(Q1, Q2, Q3)`` of the untruncated rates, in percent.
    hist_edges, hist_freq : ndarray
        Relative-frequency histogram with 0.05 pp bins, truncated at 4.17%.
    """

    rates: np.ndarray
    quartiles: tuple[float, float, float]
    hist_edges: np.ndarray
    hist_freq: np.ndarray


def _step(m: np.ndarray, alpha: float, gen: np.random.Generator) -> np.ndarray:
    """Return the +-1 increments for walks currently at ``m``."""
    p_up = np.where(m == 0, alpha, 0.5)
    return np.where(gen.random(m.size) < p_up, 1, -1).astype(m.dtype)


def generate_srw(n: int, params, rng: RngLike = None) -> SrwPath:
    """Simulate one skew random walk with ``n`` steps."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    p = _as_params(params)
    gen = make_rng(rng)
    m = np.zeros(1, dtype=np.int64)
    values = np.zeros(n + 1, dtype=np.int64)
    # Scalar loop kept simple; batched ensembles use ``simulate_walks``.
    u = gen.random(n)
    for k in range(n):
        up = u[k] < (p.alpha if m[0] == 0 else 0.5)
        m[0] += 1 if up else -1
        values[k + 1] = m[0]
    return SrwPath(values=values, alpha=p.alpha, seed=rng if isinstance(rng, int) else None)


def simulate_walks(n_paths: int, n_steps: int, params, rng: RngLike = None) -> np.ndarray:
    """Simulate a small ensemble and return all paths, shape ``(n_paths, n_steps + 1)``.

    Intended for modest sizes; large ensembles should use the streaming
    reports below.
    """
    p = _as_params(params)
    gen = make_rng(rng)
    out = np.zeros((int(n_paths), int(n_steps) + 1), dtype=np.int64)
    m = np.zeros(int(n_paths), dtype=np.int64)
    for k in range(int(n_steps)):
        m += _step(m, p.alpha, gen)
        out[:, k + 1] = m
    return out


@dataclass
class _Accum:
    sum_m: np.ndarray
    sum_m2: np.ndarray
    sum_dm: np.ndarray
    zeros: np.ndarray


def _run_block(n_paths: int, n_steps: int, alpha: float, gen: np.random.Generator) -> _Accum:
    m = np.zeros(n_paths, dtype=np.int64)
    zeros = np.zeros(n_paths, dtype=np.int64)
    sum_m = np.zeros(n_steps, dtype=np.int64)
    sum_m2 = np.zeros(n_steps, dtype=np.int64)
    sum_dm = np.zeros(n_steps, dtype=np.int64)
    for k in range(n_steps):
        dm = _step(m, alpha, gen)
        m += dm
        sum_dm[k] = dm.sum()
        sum_m[k] = m.sum()
        sum_m2[k] = np.dot(m, m)
        zeros += m == 0
    return _Accum(sum_m, sum_m2, sum_dm, zeros)


def _simulate_ensemble(n_paths, n_steps, params, rng, workers=None) -> _Accum:
    p = _as_params(params)
    sizes = block_sizes(int(n_paths), BLOCK_PATHS)
    gens = spawn(seed_sequence(rng), len(sizes))
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = list(zip(sizes, gens))
    if workers == 1:
        parts = [_run_block(s, n_steps, p.alpha, g) for s, g in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _run_block(job[0], n_steps, p.alpha, job[1]), jobs))
    # Integer sums in block order: exact and independent of scheduling.
    return _Accum(
        sum_m=sum(a.sum_m for a in parts),
        sum_m2=sum(a.sum_m2 for a in parts),
        sum_dm=sum(a.sum_dm for a in parts),
        zeros=np.concatenate([a.zeros for a in parts]),
    )


def srw_theoretical_moments(k, params):
    """Theoretical ``(mean, std, dmean, dstd)`` of ``M_k`` and ``dM_k``.

    These are the SBM-limit curves ``mu1 sqrt(k)``, ``sqrt((1 - mu1^2) k)``,
    ``mu1 (sqrt(k) - sqrt(k-1))`` and ``sqrt(1 - mu1^2 (sqrt(k) - sqrt(k-1))^2)``.
    ``k`` may be an integer or an integer array.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("k must be at least 1")
    kf = k_arr.astype(float)
    m1 = _as_params(params).mu1
    root = np.sqrt(kf)
    dk = root - np.sqrt(kf - 1.0)
    out = (m1 * root, np.sqrt((1.0 - m1 * m1) * kf), m1 * dk, np.sqrt(1.0 - (m1 * dk) ** 2))
    if k_arr.ndim == 0:
        return tuple(float(x) for x in out)
    return out


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def ensemble_moment_report(n_paths: int, n_steps: int, params, rng: RngLike = None,
                           workers: int | None = None) -> EnsembleMomentReport:
    """Simulate an ensemble and compare per-step moments with theory.

    Standard deviations use the population normalization (divide by the
    number of paths).
    """
    if n_paths < 100:
        raise ValueError("n_paths must be at least 100")
    p = _as_params(params)
    acc = _simulate_ensemble(n_paths, int(n_steps), p, rng, workers)
    n = float(n_paths)
    mean = acc.sum_m / n
    std = np.sqrt(np.maximum(acc.sum_m2 / n - mean * mean, 0.0))
    dmean = acc.sum_dm / n
    dstd = np.sqrt(np.maximum(1.0 - dmean * dmean, 0.0))
    k = np.arange(1, int(n_steps) + 1)
    t_mean, t_std, t_dmean, t_dstd = srw_theoretical_moments(k, p)
    return EnsembleMomentReport(
        alpha=p.alpha, n_paths=int(n_paths),
        empirical_mean=mean, empirical_std=std, empirical_dmean=dmean, empirical_dstd=dstd,
        theoretical_mean=t_mean, theoretical_std=t_std,
        theoretical_dmean=t_dmean, theoretical_dstd=t_dstd,
        mse_mean=_rms(mean - t_mean), mse_std=_rms(std - t_std),
        mse_dmean=_rms(dmean - t_dmean), mse_dstd=_rms(dstd - t_dstd),
    )


def zero_occurrence_stats(n_paths: int, n_steps: int, params, rng: RngLike = None,
                          workers: int | None = None) -> ZeroOccurrenceStats:
    """Per-path percentage of steps ``k = 1..n`` at which the walk sits at 0."""
    if n_paths < 1000:
        raise ValueError("n_paths must be at least 1000")
    acc = _simulate_ensemble(n_paths, int(n_steps), params, rng, workers)
    return _zero_stats(acc.zeros, int(n_steps))


def _zero_stats(zero_counts: np.ndarray, n_steps: int) -> ZeroOccurrenceStats:
    rates = 100.0 * zero_counts / n_steps
    q1, q2, q3 = np.percentile(rates, [25, 50, 75])
    edges = np.append(np.arange(0.0, HIST_MAX_PP - 1e-12, HIST_BIN_PP), HIST_MAX_PP)
    counts, _ = np.histogram(rates, bins=edges)
    return ZeroOccurrenceStats(
        rates=rates, quartiles=(float(q1), float(q2), float(q3)),
        hist_edges=edges, hist_freq=counts / rates.size,
    )


class CadlagPath:
    """Right-continuous step function ``t -> sqrt(dt) * M_floor(t/dt)`` on ``[0, n dt]``."""

    def __init__(self, path: SrwPath, dt: float):
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        self.values = np.asarray(path.values)
        self.dt = float(dt)
        self.scale = math.sqrt(self.dt)

    @property
    def horizon(self) -> float:
        return (self.values.size - 1) * self.dt

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > self.horizon * (1.0 + 1e-12)):
            raise ValueError("t outside [0, n dt]")
        x = t_arr / self.dt
        idx = np.floor(x)
        # Grid points k*dt can land a hair below k after division.
        near = np.rint(x)
        idx = np.where(np.abs(x - near) <= 1e-9 * np.maximum(1.0, near), near, idx)
        idx = np.clip(idx.astype(np.int64), 0, self.values.size - 1)
        out = self.scale * self.values[idx]
        return out if out.ndim else float(out)


def embed_cadlag(path: SrwPath, dt: float) -> CadlagPath:
    """Embed a walk as a cadlag process with time step ``dt``."""
    return CadlagPath(path, dt)
