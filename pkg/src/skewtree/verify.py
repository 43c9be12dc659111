"""Invariant suites shared by the ``verify`` command and the acceptance tests."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from ._random import RngLike, make_rng, spawn
from .errors import ArbitrageWarning
from .lattice import (
    BRANCH_MOVES, BRANCHES, DT_DAILY, AssetSpec, BranchQuadruple, LatticeNode, MarketSpec,
    ZeroLevelWarning, _branch_shifts, martingale_residuals, node_asset_prices,
    payoff_rainbow_call, payoff_rainbow_put, price_european, replication_spread,
    risk_neutral_measure,
)
from .skew_stats import SkewParams, sample_ito_mckean_path, sbm_moments, sbm_pdf
from .skew_walk import zero_occurrence_stats

REFERENCE_QUARTILES = (0.41, 0.87, 1.48)
# MSEs of E[M], sqrt Var M, E[dM] and sqrt Var dM against theory, 1e6 walks x 6000 steps.
REFERENCE_MOMENT_MSE = {
    0.5: (3.0e-2, 3.6e-2, 1.0e-3, 8.6e-7),
    0.6: (2.5e-2, 2.4e-2, 3.3e-3, 1.2e-4),
}
REFERENCE_MOMENT_PATHS = 1_000_000


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{flag}] {self.name}: {self.value:.3e} vs tol {self.tolerance:.1e}{extra}"


def random_valid_spec(rng: RngLike, delta_range=(0.02, 0.5), n_steps: int = 1) -> MarketSpec:
    """Random market whose four-branch steps are arbitrage-free.

    Scales are distinct draws from ``+-[0.1, 0.5]``, ``|delta|`` is drawn from
    ``delta_range`` with a random sign and ``r`` from ``[0, 0.05]``. Drifts
    are then chosen so that a random interior probability vector (Dirichlet,
    concentration 4) is the risk-neutral measure of the ``j2 > 0`` geometry;
    the ``j2 < 0`` geometry is its mirror image.
    """
    gen = make_rng(rng)
    while True:
        sig = gen.uniform(0.1, 0.5, 3) * gen.choice([-1.0, 1.0], 3)
        if np.min(np.abs(np.subtract.outer(sig, sig))[np.triu_indices(3, 1)]) > 0.02:
            break
    delta = gen.uniform(*delta_range) * gen.choice([-1.0, 1.0])
    r = gen.uniform(0.0, 0.05)
    dt = DT_DAILY
    q = gen.dirichlet(np.full(4, 4.0))
    x = _branch_shifts(1, delta)
    growth = np.exp(sig[None, :] * x[:, None] * math.sqrt(dt))
    mu = r - np.log(q @ growth) / dt
    s0 = gen.uniform(20.0, 200.0, 3)
    assets = tuple(AssetSpec(float(m), float(s), float(p)) for m, s, p in zip(mu, sig, s0))
    return MarketSpec(assets=assets, delta=float(delta), r=float(r), dt=dt, n_steps=n_steps)


def brute_force_price(payoff, spec: MarketSpec, reference_asset: int = 0) -> float:
    """Sum the payoff over all ``4**n`` branch sequences with their path probabilities."""
    n = spec.n_steps
    table = {s: risk_neutral_measure(s, spec, reference_asset).q.as_array() for s in (1, -1, 0)}
    j1 = np.zeros(1, dtype=np.int64)
    j2 = np.zeros(1, dtype=np.int64)
    w = np.ones(1)
    moves = np.array([BRANCH_MOVES[b] for b in BRANCHES])
    for _ in range(n):
        qrow = np.stack([table[int(s)] for s in np.sign(j2)])  # (paths, 4)
        w = (w[:, None] * qrow).ravel()
        j1 = (j1[:, None] + moves[None, :, 0]).ravel()
        j2 = (j2[:, None] + moves[None, :, 1]).ravel()
    h = math.sqrt(spec.dt)
    drive = h * (spec.c * j1 + spec.delta * np.abs(j2))
    prices = spec.s0 * np.exp(spec.mu * n * spec.dt + spec.sigma * drive[:, None])
    return float(math.exp(-spec.r * spec.dt * n) * np.sum(w * payoff(prices)))


def lattice_suite(n_specs: int = 100, seed: int = 0, max_steps: int = 8) -> list[Check]:
    """Normalization, repricing, replication and brute-force checks over random markets."""
    t0 = time.perf_counter()
    gens = spawn(seed, n_specs)
    norm = repr_res = spread = bf_gap = 0.0
    for gen in gens:
        spec = random_valid_spec(gen)
        for s in (1, -1):
            m = risk_neutral_measure(s, spec)
            norm = max(norm, abs(float(np.sum(m.q.as_array())) - 1.0))
        repr_res = max(repr_res, martingale_residuals(spec).max_residual)
        k = int(gen.integers(1, 20))
        j2 = int(gen.choice([j for j in range(-k, k + 1, 2) if j != 0]))
        j1 = int(gen.choice(np.arange(-k, k + 1, 2)))
        node = LatticeNode(k, j1, j2)
        scale = float(np.mean(node_asset_prices(node, spec)))
        f = BranchQuadruple.from_array(gen.uniform(0.0, scale, 4))
        spread = max(spread, replication_spread(node, f, spec))
        n = int(gen.integers(1, max_steps + 1))
        stepped = spec.with_steps(n)
        strike = float(gen.uniform(0.7, 1.3) * np.mean(spec.s0))
        for pay in (payoff_rainbow_put(strike), payoff_rainbow_call(strike)):
            with warnings.catch_warnings():
                # The collapsed j2 = 0 step is shared by both sides of the comparison.
                warnings.simplefilter("ignore", ZeroLevelWarning)
                warnings.simplefilter("ignore", ArbitrageWarning)
                lat = price_european(pay, stepped).price
            bf = brute_force_price(pay, stepped)
            bf_gap = max(bf_gap, abs(lat - bf) / max(1.0, abs(bf)))
    elapsed = time.perf_counter() - t0
    return [
        Check("probability normalization", norm <= 1e-10, norm, 1e-10),
        Check("asset repricing residual", repr_res <= 1e-9, repr_res, 1e-9),
        Check("replication spread (relative)", spread <= 1e-10, spread, 1e-10),
        Check("lattice vs 4^n brute force", bf_gap <= 1e-10, bf_gap, 1e-10),
        Check("lattice suite runtime [s]", elapsed <= 120.0, elapsed, 120.0),
    ]


def walk_suite(n_paths: int = 100_000, n_steps: int = 6000, seed: int = 0,
               alphas=(0.4, 0.5, 0.6), tol_pp: float = 0.06) -> list[Check]:
    """Zero-occurrence quartiles against the reference values and KS across alphas."""
    t0 = time.perf_counter()
    stats_by_alpha = {a: zero_occurrence_stats(n_paths, n_steps, a, rng=seed + i)
                      for i, a in enumerate(alphas)}
    checks = []
    for a, st in stats_by_alpha.items():
        gap = max(abs(x - y) for x, y in zip(st.quartiles, REFERENCE_QUARTILES))
        q = ", ".join(f"{x:.3f}" for x in st.quartiles)
        checks.append(Check(f"quartiles alpha={a}", gap <= tol_pp, gap, tol_pp, f"Q = {q} %"))
    ks_min = 1.0
    for i, a in enumerate(alphas):
        for b in alphas[i + 1:]:
            p = stats.ks_2samp(stats_by_alpha[a].rates, stats_by_alpha[b].rates).pvalue
            ks_min = min(ks_min, p)
    checks.append(Check("KS p-value across alphas (min)", ks_min >= 0.01, ks_min, 0.01))
    elapsed = time.perf_counter() - t0
    checks.append(Check("walk suite runtime [s]", elapsed <= 300.0, elapsed, 300.0))
    return checks


def sbm_suite(n_paths: int = 1_000_000, delta: float = 0.102, seed: int = 0) -> list[Check]:
    """Ito-McKean marginal moments at t = 1 and half-line density mass."""
    params = SkewParams.from_delta(delta)
    mom = sbm_moments(1.0, params)
    a = sample_ito_mckean_path([0.0, 1.0], delta, rng=seed, n_paths=n_paths)[:, -1]
    se_mean = math.sqrt(mom.variance / n_paths)
    m4 = np.mean((a - a.mean()) ** 4)
    se_var = math.sqrt(max(m4 - a.var() ** 2, 0.0) / n_paths)
    z_mean = abs(a.mean() - mom.mean) / se_mean
    z_var = abs(a.var(ddof=1) - mom.variance) / se_var
    checks = [
        Check("Ito-McKean mean z-score", z_mean <= 4.0, z_mean, 4.0),
        Check("Ito-McKean variance z-score", z_var <= 4.0, z_var, 4.0),
    ]
    for alpha in (0.4, 0.5, 0.55, 0.9, params.alpha):
        mass, _ = integrate.quad(sbm_pdf, 0.0, 12.0, args=(1.0, alpha), epsabs=1e-14, epsrel=1e-13)
        gap = abs(mass - alpha)
        checks.append(Check(f"half-line mass alpha={alpha:.3f}", gap <= 1e-8, gap, 1e-8))
    return checks


SUITES = {"lattice": lattice_suite, "walk": walk_suite, "sbm": sbm_suite}
