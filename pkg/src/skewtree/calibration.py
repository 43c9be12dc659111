"""Calibration of geometric skew Brownian motion to price series.

The model for cumulative log-returns is::

    R_k = (mu - sigma^2 / 2) k dt + sigma sqrt(dt) M_k

with ``M`` a skew random walk. ``sigma`` comes from the variance of daily
log-returns. ``(mu, alpha)`` is then the candidate pair, out of a stratified
ensemble over a search domain, whose simulated return path is closest in
squared error to the observed one. Each candidate gets its own random walk.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from ._random import RngLike, block_sizes, make_rng, seed_sequence, spawn
from .errors import BoundaryWarning
from .skew_walk import _as_params, _step, default_workers, generate_srw

log = logging.getLogger(__name__)

DT_DAILY = 1.0 / 252.0
DEFAULT_MU_BOUNDS = (-0.5, 0.5)
DEFAULT_ALPHA_BOUNDS = (0.45, 0.65)
INDEX_ALPHA_BOUNDS = (0.45, 0.55)
DEFAULT_ENSEMBLE = 20_000
BLOCK_CANDIDATES = 4096


@dataclass(frozen=True)
class PriceSeries:
    """Positive prices on strictly increasing dates with a constant step ``dt``.

    ``meta`` carries free-form annotations such as the ground truth of a
    synthetic fixture.
    """

    dates: tuple
    prices: np.ndarray
    dt: float = DT_DAILY
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "dates", tuple(self.dates))
        if prices.ndim != 1 or prices.size < 2:
            raise ValueError("a price series needs at least two prices")
        if len(self.dates) != prices.size:
            raise ValueError("dates and prices differ in length")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0.0):
            raise ValueError("prices must be finite and positive")
        d = np.asarray(self.dates)
        if np.any(d[1:] <= d[:-1]):
            raise ValueError("dates must be strictly increasing")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return self.prices.size

    def window(self, start: int, stop: int) -> "PriceSeries":
        """Sub-series of prices ``start`` to ``stop - 1``."""
        return PriceSeries(self.dates[start:stop], self.prices[start:stop], self.dt)


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of one ``(mu, alpha)`` fit.

    ``mse`` is the mean over steps of the squared difference between the
    observed and the best candidate cumulative log-return path.
    """

    sigma_star: float
    mu_star: float
    alpha_star: float
    mse: float
    search_domain: tuple[tuple[float, float], tuple[float, float]]
    ensemble_size: int
    seed: int | None
    candidate_index: int
    repeats: int = 1
    domain_adjustments: int = 0


@dataclass
class RollingCalibration:
    """Per-window fits and their trailing-median smoothing.

    Arrays are aligned with ``dates``, the end date of each window. Failed
    windows are NaN.
    """

    dates: tuple
    sigma_hat: np.ndarray
    sigma_star: np.ndarray
    mu_hat: np.ndarray
    alpha_hat: np.ndarray
    mse: np.ndarray
    mu_med: np.ndarray
    alpha_med: np.ndarray
    window: int
    median_window: int


@dataclass
class DeltaSeries:
    """Index-implied skewness ``delta = 2 alpha_med - 1`` per window end date."""

    dates: tuple
    delta_hat: np.ndarray
    alpha_med: np.ndarray
    rolling: RollingCalibration


@dataclass(frozen=True)
class RebuildDiagnostics:
    r2: float | None
    rmse: float | None


@dataclass(frozen=True)
class ConstrainedFit:
    """Least-squares ``(mu, sigma)`` for a fixed ``delta``."""

    mu_hat: float
    sigma_hat: float
    r2: float
    rmse: float


def _seed_of(rng: RngLike) -> int | None:
    return int(rng) if isinstance(rng, (int, np.integer)) else None


def cumulative_log_returns(series: PriceSeries) -> np.ndarray:
    """``R_k = ln(S_k / S_0)`` for ``k = 1..n``."""
    return np.log(series.prices[1:] / series.prices[0])


def estimate_sigma(series: PriceSeries) -> float:
    """Scale estimate ``sqrt(var(daily log-returns) / dt)`` (unbiased variance)."""
    if len(series) - 1 < 30:
        raise ValueError("at least 30 returns are needed to estimate sigma")
    r = np.diff(np.log(series.prices))
    return float(np.std(r, ddof=1) / math.sqrt(series.dt))


def _candidates(domain, n: int, gen: np.random.Generator):
    (mu_lo, mu_hi), (a_lo, a_hi) = domain
    pts = qmc.LatinHypercube(d=2, seed=gen).random(n)
    return mu_lo + pts[:, 0] * (mu_hi - mu_lo), a_lo + pts[:, 1] * (a_hi - a_lo)


def _walk_moments(returns: np.ndarray, alpha: np.ndarray, gen: np.random.Generator):
    """Stream one walk per candidate, returning the sums needed for the SSE."""
    m = np.zeros(alpha.size, dtype=np.int64)
    s_rm = np.zeros(alpha.size)
    s_km = np.zeros(alpha.size, dtype=np.int64)
    s_mm = np.zeros(alpha.size, dtype=np.int64)
    for k, rk in enumerate(returns, start=1):
        m += _step(m, alpha, gen)
        s_rm += rk * m
        s_km += k * m
        s_mm += m * m
    return s_rm, s_km, s_mm


def candidate_walks(n_steps: int, domain, ensemble_size: int, rng: RngLike, repeat: int = 0):
    """Regenerate the candidate ensemble used by :func:`fit_mu_alpha`.

    Returns ``(mu, alpha, walks)`` with ``walks`` of shape
    ``(ensemble_size, n_steps + 1)``. Meant for audits and small sizes.
    """
    first_attempt = seed_sequence(rng).spawn(1)[0]
    cand_ss, walk_ss = first_attempt.spawn(2)
    mu, alpha = _candidates(domain, ensemble_size, make_rng(cand_ss))
    sizes = block_sizes(ensemble_size, BLOCK_CANDIDATES)
    rep_ss = walk_ss.spawn(repeat + 1)[repeat]
    gens = spawn(rep_ss, len(sizes))
    walks = np.zeros((ensemble_size, n_steps + 1), dtype=np.int64)
    start = 0
    for size, gen in zip(sizes, gens):
        a = alpha[start:start + size]
        m = np.zeros(size, dtype=np.int64)
        for k in range(n_steps):
            m += _step(m, a, gen)
            walks[start:start + size, k + 1] = m
        start += size
    return mu, alpha, walks


def _fit_once(returns, dt, sigma_star, domain, ensemble_size, ss, repeats, workers):
    n = returns.size
    k = np.arange(1, n + 1, dtype=float)
    cand_ss, walk_ss = ss.spawn(2)
    mu, alpha = _candidates(domain, ensemble_size, make_rng(cand_ss))
    sizes = block_sizes(ensemble_size, BLOCK_CANDIDATES)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    a = (mu - 0.5 * sigma_star**2) * dt
    b = sigma_star * math.sqrt(dt)
    rr, kr, kk = returns @ returns, k @ returns, k @ k
    sse = np.zeros(ensemble_size)
    for rep_ss in walk_ss.spawn(repeats):
        gens = spawn(rep_ss, len(sizes))

        def job(i):
            sl = slice(starts[i], starts[i] + sizes[i])
            return sl, _walk_moments(returns, alpha[sl], gens[i])

        if workers == 1:
            parts = [job(i) for i in range(len(sizes))]
        else:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(job, range(len(sizes))))
        for sl, (s_rm, s_km, s_mm) in parts:
            aa = a[sl]
            sse[sl] += (
                rr - 2.0 * aa * kr - 2.0 * b * s_rm
                + aa * aa * kk + 2.0 * aa * b * s_km + b * b * s_mm
            )
    sse = np.maximum(sse / repeats, 0.0)
    best = int(np.argmin(sse))
    return mu[best], alpha[best], float(sse[best] / n), best


def fit_mu_alpha(series: PriceSeries, sigma_star: float, domain=None,
                 ensemble_size: int = DEFAULT_ENSEMBLE, rng: RngLike = None,
                 repeats: int = 1, adjust_bounds: int = 0,
                 workers: int | None = None) -> CalibrationResult:
    """Fit ``(mu, alpha)`` by least squares against simulated return paths.

    Parameters
    ----------
    series : PriceSeries
    sigma_star : float
        Scale from :func:`estimate_sigma`.
    domain : ((mu_lo, mu_hi), (alpha_lo, alpha_hi)), optional
        Search box, default ``((-0.5, 0.5), (0.45, 0.65))``.
    ensemble_size : int
        Number of Latin-hypercube candidates, each with its own walk.
    rng : seed or Generator
    repeats : int
        Walks per candidate; the squared error is averaged over them.
    adjust_bounds : int
        How many times to shift the alpha interval by half its width and
        refit when the optimum lands on its edge.
    workers : int, optional
        Threads for candidate blocks. Results do not depend on it.

    Returns
    -------
    CalibrationResult

    Warns
    -----
    BoundaryWarning
        When the final ``alpha_star`` is within one sampling step,
        ``(alpha_hi - alpha_lo) / sqrt(ensemble_size)``, of the domain edge.
    """
    if not sigma_star > 0.0:
        raise ValueError("sigma_star must be positive")
    if ensemble_size < 1000:
        raise ValueError("ensemble_size must be at least 1000")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    domain = (DEFAULT_MU_BOUNDS, DEFAULT_ALPHA_BOUNDS) if domain is None else domain
    (mu_lo, mu_hi), (a_lo, a_hi) = domain
    if not (mu_lo < mu_hi and 0.0 <= a_lo < a_hi <= 1.0):
        raise ValueError(f"invalid search domain {domain}")
    workers = default_workers() if workers is None else max(1, int(workers))
    returns = cumulative_log_returns(series)
    ss = seed_sequence(rng)
    attempts = ss.spawn(adjust_bounds + 1)
    for attempt, att_ss in enumerate(attempts):
        dom = ((mu_lo, mu_hi), (a_lo, a_hi))
        mu, alpha, mse, idx = _fit_once(returns, series.dt, sigma_star, dom,
                                        ensemble_size, att_ss, repeats, workers)
        step = (a_hi - a_lo) / math.sqrt(ensemble_size)
        side = -1 if alpha - a_lo <= step else (1 if a_hi - alpha <= step else 0)
        if side == 0 or attempt == adjust_bounds:
            break
        shift = side * 0.5 * (a_hi - a_lo)
        a_lo, a_hi = max(0.0, a_lo + shift), min(1.0, a_hi + shift)
        log.info("alpha* on domain edge, refitting over [%g, %g]", a_lo, a_hi)
    if side != 0:
        warnings.warn(
            f"alpha*={alpha:.4f} lies on the edge of [{a_lo}, {a_hi}]; "
            "consider widening or shifting the search domain",
            BoundaryWarning, stacklevel=2,
        )
    return CalibrationResult(
        sigma_star=float(sigma_star), mu_star=float(mu), alpha_star=float(alpha), mse=mse,
        search_domain=dom, ensemble_size=int(ensemble_size), seed=_seed_of(rng),
        candidate_index=idx, repeats=repeats, domain_adjustments=attempt,
    )


def reconstruct_chain(series: PriceSeries, mu_hat: float, sigma_hat: float) -> np.ndarray:
    """Recover the integer driver path from observed returns.

    Each step is the sign of the standardized residual
    ``(r_j - (mu - sigma^2/2) dt) / (sigma sqrt(dt))`` with ``sign(0) = 0``,
    so reconstructed chains may contain flat steps.
    """
    if sigma_hat == 0.0:
        raise ValueError("sigma_hat must be nonzero")
    r = np.diff(np.log(series.prices))
    z = (r - (mu_hat - 0.5 * sigma_hat**2) * series.dt) / (sigma_hat * math.sqrt(series.dt))
    chain = np.zeros(r.size + 1, dtype=np.int64)
    np.cumsum(np.sign(z).astype(np.int64), out=chain[1:])
    return chain


def rebuild_price_path(chain, mu_hat: float, sigma_hat: float, s0: float,
                       dt: float = DT_DAILY, reference: PriceSeries | None = None):
    """Rebuild model prices from a driver chain.

    ``S_k = S_{k-1} exp((mu - sigma^2/2) dt + sigma sqrt(dt) (M_k - M_{k-1}))``.

    Returns
    -------
    (PriceSeries, RebuildDiagnostics)
        R-squared and RMSE of prices against ``reference`` when given.
    """
    if not s0 > 0.0:
        raise ValueError("s0 must be positive")
    chain = np.asarray(chain)
    k = np.arange(chain.size)
    log_s = (mu_hat - 0.5 * sigma_hat**2) * dt * k + sigma_hat * math.sqrt(dt) * (chain - chain[0])
    prices = s0 * np.exp(log_s)
    dates = reference.dates if reference is not None else tuple(range(chain.size))
    rebuilt = PriceSeries(dates, prices, dt)
    if reference is None:
        return rebuilt, RebuildDiagnostics(None, None)
    resid = reference.prices - prices
    ss_tot = float(np.sum((reference.prices - reference.prices.mean()) ** 2))
    ss_res = float(resid @ resid)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else (1.0 if ss_res == 0.0 else -math.inf)
    return rebuilt, RebuildDiagnostics(r2=r2, rmse=math.sqrt(ss_res / prices.size))


def _trailing_nanmedian(x: np.ndarray, width: int) -> np.ndarray:
    out = np.full(x.size, np.nan)
    for i in range(x.size):
        chunk = x[max(0, i - width + 1):i + 1]
        if np.any(np.isfinite(chunk)):
            out[i] = np.nanmedian(chunk)
    return out


def rolling_calibration(series: PriceSeries, window: int = 252, median_window: int = 21,
                        domain=None, ensemble_size: int = DEFAULT_ENSEMBLE,
                        rng: RngLike = None, workers: int | None = None) -> RollingCalibration:
    """Moving-window calibration with trailing-median smoothing.

    Every window holds ``window`` daily returns. Its ``sigma_star`` is the
    average of the per-window ``sigma_hat`` values whose end dates fall inside
    the window (only those already available at the start of the series).
    A window whose fit fails is recorded as NaN and the sweep continues.
    """
    n_prices = len(series)
    if window < 30 or n_prices <= window:
        raise ValueError("the series must be longer than the window")
    ends = np.arange(window, n_prices)
    sig_hat = np.array([estimate_sigma(series.window(e - window, e + 1)) for e in ends])
    csum = np.concatenate([[0.0], np.cumsum(sig_hat)])
    sig_star = np.empty_like(sig_hat)
    for i in range(ends.size):
        lo = max(0, i - window + 1)
        sig_star[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    gens = spawn(rng, ends.size)
    mu_hat = np.full(ends.size, np.nan)
    alpha_hat = np.full(ends.size, np.nan)
    mse = np.full(ends.size, np.nan)
    for i, e in enumerate(ends):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BoundaryWarning)
                res = fit_mu_alpha(series.window(e - window, e + 1), sig_star[i], domain,
                                   ensemble_size, gens[i], workers=workers)
        except (ValueError, FloatingPointError) as exc:
            log.warning("window ending %s failed: %s", series.dates[e], exc)
            continue
        mu_hat[i], alpha_hat[i], mse[i] = res.mu_star, res.alpha_star, res.mse
    return RollingCalibration(
        dates=tuple(series.dates[e] for e in ends), sigma_hat=sig_hat, sigma_star=sig_star,
        mu_hat=mu_hat, alpha_hat=alpha_hat, mse=mse,
        mu_med=_trailing_nanmedian(mu_hat, median_window),
        alpha_med=_trailing_nanmedian(alpha_hat, median_window),
        window=window, median_window=median_window,
    )


def estimate_delta_from_index(series: PriceSeries, window: int = 252, median_window: int = 21,
                              alpha_bounds: Sequence[float] = INDEX_ALPHA_BOUNDS,
                              mu_bounds: Sequence[float] = DEFAULT_MU_BOUNDS,
                              ensemble_size: int = DEFAULT_ENSEMBLE, rng: RngLike = None,
                              workers: int | None = None) -> DeltaSeries:
    """Market skewness ``delta_t = 2 alpha_med_t - 1`` from an index series.

    ``alpha`` is searched only inside ``alpha_bounds``, so ``delta`` stays in
    ``[2 lo - 1, 2 hi - 1]``.
    """
    lo, hi = float(alpha_bounds[0]), float(alpha_bounds[1])
    roll = rolling_calibration(series, window, median_window,
                               (tuple(mu_bounds), (lo, hi)), ensemble_size, rng, workers)
    alpha_med = np.clip(roll.alpha_med, lo, hi)
    return DeltaSeries(dates=roll.dates, delta_hat=2.0 * alpha_med - 1.0,
                       alpha_med=alpha_med, rolling=roll)


def fit_mu_sigma_given_delta(series: PriceSeries, delta: float) -> ConstrainedFit:
    """Ordinary least squares of ``R_k`` on ``k dt`` and ``delta sqrt(2 k dt / pi)``.

    No intercept. ``sigma_hat`` is signed. With ``delta = 0`` the second
    regressor vanishes, so only ``mu`` is fitted and ``sigma_hat`` is NaN.
    """
    if not -1.0 < delta < 1.0:
        raise ValueError("delta must lie in (-1, 1)")
    y = cumulative_log_returns(series)
    t = np.arange(1, y.size + 1) * series.dt
    x1 = t
    x2 = delta * np.sqrt(2.0 * t / math.pi)
    if abs(delta) < 1e-12:
        warnings.warn("delta = 0 leaves sigma undetermined; fitting mu only", stacklevel=2)
        coef = np.array([float(x1 @ y / (x1 @ x1)), math.nan])
        fitted = coef[0] * x1
    else:
        design = np.column_stack([x1, x2])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        fitted = design @ coef
    resid = y - fitted
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return ConstrainedFit(mu_hat=float(coef[0]), sigma_hat=float(coef[1]), r2=r2,
                          rmse=math.sqrt(ss_res / y.size))


def _business_dates(n: int, start: str = "2000-01-03") -> tuple:
    days = np.busday_offset(np.datetime64(start), np.arange(n), roll="forward")
    return tuple(str(d) for d in days)


def synthetic_fixture(mu: float, sigma: float, alpha: float, n: int, rng: RngLike = None,
                      s0: float = 100.0, dt: float = DT_DAILY) -> PriceSeries:
    """Model-generated series of ``n`` prices driven by one skew random walk.

    The ground truth (and the walk) is stored in ``meta``.
    """
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    if n < 2:
        raise ValueError("n must be at least 2")
    walk = generate_srw(n - 1, _as_params(alpha), make_rng(rng))
    k = np.arange(n)
    log_s = (mu - 0.5 * sigma**2) * dt * k + sigma * math.sqrt(dt) * walk.values
    meta = {"mu": mu, "sigma": sigma, "alpha": float(alpha), "walk": walk.values,
            "seed": _seed_of(rng)}
    return PriceSeries(_business_dates(n), s0 * np.exp(log_s), dt, meta)
