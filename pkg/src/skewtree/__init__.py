"""Skew Brownian motion statistics, skew random walks, calibration and a
four-branch lattice for pricing claims on three assets with common skewness."""
from .baselines import baseline_trees
from .calibration import (
    CalibrationResult, DeltaSeries, PriceSeries, RollingCalibration, estimate_delta_from_index,
    estimate_sigma, fit_mu_alpha, fit_mu_sigma_given_delta, rebuild_price_path,
    reconstruct_chain, rolling_calibration, synthetic_fixture,
)
from .errors import ArbitrageWarning, BoundaryWarning, DataWarning, DegenerateMarket
from .lattice import (
    ETF_MARKET, AssetSpec, BranchQuadruple, LatticeNode, MarketSpec, PricingResult,
    ZeroLevelWarning, fb_rate, hedging_deltas, martingale_residuals, payoff_rainbow_call,
    payoff_rainbow_put, price_european, price_surface, risk_neutral_measure, rn_probabilities,
)
from .market_data import compute_returns, load_price_csv, write_calibration_csv, write_surface_csv
from .skew_stats import (
    SkewParams, sample_ito_mckean_path, sample_sbm_marginal, sbm_moments, sbm_pdf, snd_pdf,
)
from .skew_walk import (
    SrwPath, embed_cadlag, ensemble_moment_report, generate_srw, simulate_walks,
    srw_theoretical_moments, zero_occurrence_stats,
)

__version__ = "0.1.0"
