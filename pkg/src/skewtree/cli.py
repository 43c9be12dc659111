"""Command-line entry point: ``skewtree <command> [options]``.

Commands are ``simulate``, ``fit``, ``delta-index``, ``price``, ``surface``
and ``verify``. Every run prints its seed and effective configuration first,
so any output can be reproduced by passing the echoed values back.

Market configuration for ``price`` and ``surface`` is resolved as: built-in
three-ETF market, then the JSON file given by ``--config``, then individual
flags (``--delta``, ``--r``, ``--dt``). Later sources win.

Exit codes: 0 success, 1 failed verification, 2 usage or invalid
parameters, 3 unreadable or unusable data, 4 degenerate market.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import lattice as lat
from . import market_data as md
from . import verify as ver
from .errors import DegenerateMarket
from .skew_walk import ensemble_moment_report

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3, 4
FULL_SCALE = 1_000_000
CI_PATHS = 100_000
WORKERS_ENV = "SKEWTREE_WORKERS"


class UsageError(ValueError):
    """Invalid parameter combination detected after argument parsing."""


class DataError(ValueError):
    """Input data that cannot be used."""


def _probability(text: str) -> float:
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return x


def _positive_int(text: str) -> int:
    x = int(text)
    if x < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return x


def _workers(args) -> int:
    if getattr(args, "workers", None) is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    return 1


def _seed(args) -> int:
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % (2**63))
    return args.seed


def _echo(args, **effective) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    cfg.update(effective)
    seed = cfg.get("seed")
    print(f"seed: {seed}" if seed is not None else "seed: none (deterministic command)")
    print("config: " + json.dumps(cfg, sort_keys=True, default=str))


def _print_warnings(caught) -> None:
    seen = set()
    for w in caught:
        text = f"warning: {w.category.__name__}: {w.message}"
        if text not in seen:
            seen.add(text)
            print(text, file=sys.stderr)


def _load(path) -> cal.PriceSeries:
    try:
        return md.load_price_csv(path)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None


def _market(args) -> lat.MarketSpec:
    d = lat.ETF_MARKET.to_dict()
    if args.config:
        try:
            d.update(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config {args.config} is not valid JSON: {exc}") from None
    for key in ("delta", "r", "dt"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    try:
        return lat.MarketSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid market configuration: {exc}") from None


# --------------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    paths = args.paths or (FULL_SCALE if args.full else CI_PATHS)
    seed, workers = _seed(args), _workers(args)
    _echo(args, paths=paths, workers=workers)
    rep = ensemble_moment_report(paths, args.steps, args.alpha, rng=seed, workers=workers)
    if args.out:
        md.write_moment_report_csv(rep, args.out)
        print(f"wrote {args.out}")
    print(f"MSE(E[M])       {rep.mse_mean:.6e}")
    print(f"MSE(sqrt Var M) {rep.mse_std:.6e}")
    print(f"MSE(E[dM])      {rep.mse_dmean:.6e}")
    print(f"MSE(sqrt Var dM) {rep.mse_dstd:.6e}")
    return EXIT_OK


def cmd_fit(args) -> int:
    ensemble = args.ensemble or (FULL_SCALE if args.full else cal.DEFAULT_ENSEMBLE)
    seed, workers = _seed(args), _workers(args)
    domain = (tuple(args.mu_bounds), tuple(args.alpha_bounds))
    _echo(args, ensemble=ensemble, workers=workers)
    series = _load(args.input)
    if args.window is None:
        try:
            sigma = cal.estimate_sigma(series)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        res = cal.fit_mu_alpha(series, sigma, domain, ensemble, rng=seed, repeats=args.repeats,
                               adjust_bounds=args.adjust_bounds, workers=workers)
        print(f"sigma* {res.sigma_star:.10g}")
        print(f"mu*    {res.mu_star:.10g}")
        print(f"alpha* {res.alpha_star:.10g}")
        print(f"MSE    {res.mse:.10g}")
        if args.out:
            out = {k: v for k, v in vars(res).items()}
            Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
            print(f"wrote {args.out}")
        return EXIT_OK
    if len(series) <= args.window:
        raise DataError(f"series has {len(series)} prices; the window needs more than {args.window}")
    roll = cal.rolling_calibration(series, args.window, args.median_window, domain,
                                   ensemble, rng=seed, workers=workers)
    last = len(roll.dates) - 1
    print(f"windows {len(roll.dates)}, last end date {roll.dates[last]}")
    print(f"sigma* {roll.sigma_star[last]:.10g}  mu_med {roll.mu_med[last]:.10g}  "
          f"alpha_med {roll.alpha_med[last]:.10g}  MSE {roll.mse[last]:.10g}")
    if args.out:
        md.write_calibration_csv(roll, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_delta_index(args) -> int:
    ensemble = args.ensemble or (FULL_SCALE if args.full else cal.DEFAULT_ENSEMBLE)
    seed, workers = _seed(args), _workers(args)
    lo, hi = args.alpha_bounds
    if not 0.0 <= lo < hi <= 1.0:
        raise UsageError("alpha bounds must satisfy 0 <= lo < hi <= 1")
    _echo(args, ensemble=ensemble, workers=workers)
    series = _load(args.input)
    if len(series) <= args.window:
        raise DataError(f"series has {len(series)} prices; the window needs more than {args.window}")
    res = cal.estimate_delta_from_index(series, args.window, args.median_window, (lo, hi),
                                        tuple(args.mu_bounds), ensemble, rng=seed, workers=workers)
    finite = res.delta_hat[np.isfinite(res.delta_hat)]
    if finite.size:
        print(f"delta_hat mean {finite.mean():.6f}, last {finite[-1]:.6f}, "
              f"range [{finite.min():.6f}, {finite.max():.6f}]")
    if args.out:
        md.write_delta_csv(res, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _dump_values(layers, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "j1", "j2", "value"])
        for k, layer in enumerate(layers):
            if layer.ndim == 1:
                for a, v in enumerate(layer):
                    w.writerow([k, 2 * a - k, "", md.fmt(v)])
            else:
                for a in range(k + 1):
                    for b in range(k + 1):
                        w.writerow([k, 2 * a - k, 2 * b - k, md.fmt(layer[a, b])])


def cmd_price(args) -> int:
    base = _market(args)
    spec = base.with_steps(args.T)
    s0 = spec.s0
    if args.strike is not None:
        strike = args.strike
    else:
        strike = args.moneyness * (s0.min() if args.kind == "put" else s0.max())
    _echo(args, market=spec.to_dict(), strike=strike)
    if args.constant_payoff:
        def payoff(s):
            return np.full(s.shape[:-1], strike)
        label = f"constant {strike:.10g}"
    elif args.kind == "put":
        payoff, label = lat.payoff_rainbow_put(strike), f"rainbow put K={strike:.10g}"
    else:
        payoff, label = lat.payoff_rainbow_call(strike), f"rainbow call K={strike:.10g}"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = lat.price_european(payoff, spec, keep_values=bool(args.dump),
                                 reference_asset=args.reference_asset)
    d = res.diagnostics
    print(f"{label}, T={spec.n_steps} steps of dt={spec.dt:.10g}")
    print(f"price {res.price:.10g}")
    if args.constant_payoff:
        print(f"expected {strike * math.exp(-spec.r * spec.maturity):.10g}")
    print(f"q range [{d.min_q:.10g}, {d.max_q:.10g}] ({d.method})")
    print(f"worst martingale residual {d.worst_martingale_residual:.3e}")
    print(f"zero-level residual {d.zero_level_residual:.3e}")
    _print_warnings(caught)
    if args.dump:
        _dump_values(res.values, args.dump)
        print(f"wrote {args.dump}")
    return EXIT_OK


def cmd_surface(args) -> int:
    spec = _market(args)
    t0, t1, ts = args.t_range
    m0, m1, mn = args.m_range
    if t0 < 1 or t1 < t0 or ts < 1 or mn < 1 or m1 < m0 or m0 <= 0.0:
        raise UsageError("invalid grid ranges")
    t_days = np.arange(int(t0), int(t1) + 1, int(ts))
    moneyness = np.linspace(m0, m1, int(mn))
    _echo(args, market=spec.to_dict(), t_days=t_days.tolist(), moneyness=moneyness.tolist())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        grid = lat.price_surface(args.kind, spec, t_days, moneyness, args.reference_asset)
    _print_warnings(caught)
    md.write_surface_csv(grid, args.out)
    print(f"{args.kind} surface: {t_days.size} maturities x {moneyness.size} moneyness values")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = _seed(args)
    suites = list(ver.SUITES) if args.suite == "all" else [args.suite]
    paths = args.paths or (FULL_SCALE if args.full else 100_000)
    _echo(args, suites=suites, paths=paths)
    ok = True
    for name in suites:
        if name == "lattice":
            checks = ver.lattice_suite(n_specs=args.specs, seed=seed)
        elif name == "walk":
            checks = ver.walk_suite(n_paths=paths, n_steps=args.steps, seed=seed)
        else:
            checks = ver.sbm_suite(n_paths=max(paths, 10_000), seed=seed)
        print(f"== {name}")
        for c in checks:
            print(c.line())
            ok &= c.passed
    return EXIT_OK if ok else EXIT_FAILED


# --------------------------------------------------------------------------- parser


def _add_common(p, randomized: bool = True) -> None:
    if randomized:
        p.add_argument("--seed", type=int, default=None,
                       help="integer seed (default: fresh entropy, echoed)")
        p.add_argument("--full", action="store_true", help="use 1e6-sized ensembles")
        p.add_argument("--workers", type=_positive_int, default=None,
                       help=f"worker threads (default: ${WORKERS_ENV} or 1)")


def _add_market(p) -> None:
    p.add_argument("--config", help="JSON market file (MarketSpec.to_dict layout)")
    p.add_argument("--delta", type=float, help="override the skewness")
    p.add_argument("--r", type=float, help="override the riskless rate")
    p.add_argument("--dt", type=float, help="override the step size in years")
    p.add_argument("--reference-asset", type=int, choices=(0, 1, 2), default=0,
                   help="asset whose two-state measure prices the j2 = 0 steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skewtree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="skew random walk ensemble moments")
    p.add_argument("--alpha", type=_probability, required=True)
    p.add_argument("--paths", type=_positive_int, default=None)
    p.add_argument("--steps", type=_positive_int, default=6000)
    p.add_argument("--out", help="moment-report CSV")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    for name, helptext in (("fit", "calibrate (mu, alpha) on a price CSV"),
                           ("delta-index", "market skewness from an index price CSV")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("input", help="CSV with header date,price")
        p.add_argument("--median-window", type=_positive_int, default=21)
        p.add_argument("--mu-bounds", type=float, nargs=2, default=list(cal.DEFAULT_MU_BOUNDS))
        p.add_argument("--ensemble", type=_positive_int, default=None)
        p.add_argument("--out")
        _add_common(p)
        if name == "fit":
            p.add_argument("--window", type=_positive_int, default=None,
                           help="rolling window length; omit for a single fit")
            p.add_argument("--alpha-bounds", type=_probability, nargs=2,
                           default=list(cal.DEFAULT_ALPHA_BOUNDS))
            p.add_argument("--repeats", type=_positive_int, default=1)
            p.add_argument("--adjust-bounds", type=int, default=0)
            p.set_defaults(func=cmd_fit)
        else:
            p.add_argument("--window", type=_positive_int, default=252)
            p.add_argument("--alpha-bounds", type=_probability, nargs=2,
                           default=list(cal.INDEX_ALPHA_BOUNDS))
            p.set_defaults(func=cmd_delta_index)

    p = sub.add_parser("price", help="price one rainbow option on the four-branch lattice")
    _add_market(p)
    p.add_argument("--kind", choices=("put", "call"), default="put")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--moneyness", type=float, default=1.0)
    g.add_argument("--strike", type=float)
    p.add_argument("--T", type=_positive_int, default=60, help="maturity in steps")
    p.add_argument("--constant-payoff", action="store_true",
                   help="debug: price the constant payoff K instead")
    p.add_argument("--dump", help="CSV of every node value")
    p.set_defaults(func=cmd_price, seed=None)

    p = sub.add_parser("surface", help="rainbow price surface over maturity and moneyness")
    _add_market(p)
    p.add_argument("--kind", choices=("put", "call"), default="put")
    p.add_argument("--t-range", type=int, nargs=3, default=[10, 100, 10],
                   metavar=("FIRST", "LAST", "STEP"), help="maturities in steps")
    p.add_argument("--m-range", type=float, nargs=3, default=[0.5, 1.5, 11],
                   metavar=("LO", "HI", "COUNT"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surface, seed=None)

    p = sub.add_parser("verify", help="run invariant suites")
    p.add_argument("--suite", choices=(*ver.SUITES, "all"), default="lattice")
    p.add_argument("--paths", type=_positive_int, default=None)
    p.add_argument("--steps", type=_positive_int, default=6000)
    p.add_argument("--specs", type=_positive_int, default=100)
    _add_common(p)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DegenerateMarket as exc:
        print(f"DegenerateMarket: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
