"""Price-series CSV input, return computation and CSV export.

Input files have a ``date,price`` header. Dates are opaque strings ordered
lexically (ISO-8601 sorts correctly). Output files use LF line endings and
10 significant digits so that identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calibration import DT_DAILY, DeltaSeries, PriceSeries, RollingCalibration
from .errors import DataWarning
from .lattice import SurfaceGrid
from .skew_walk import EnsembleMomentReport


@dataclass
class RawSeriesFile:
    """Parsed rows of a price file and what was dropped on the way."""

    path: Path
    rows: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    reordered: bool = False


def read_price_csv(path) -> RawSeriesFile:
    """Parse a ``date,price`` file, dropping rows with missing or non-positive prices.

    Rows are sorted by date when out of order. Duplicate dates raise
    ``ValueError``.
    """
    path = Path(path)
    raw = RawSeriesFile(path=path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "price"]:
            raise ValueError(f"{path}: expected header 'date,price', got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raw.dropped.append((line_no, "wrong number of fields"))
                continue
            date, text = row[0].strip(), row[1].strip()
            if not date:
                raw.dropped.append((line_no, "missing date"))
                continue
            try:
                price = float(text)
            except ValueError:
                raw.dropped.append((line_no, f"unparseable price {text!r}"))
                continue
            if not math.isfinite(price) or price <= 0.0:
                raw.dropped.append((line_no, f"non-positive or missing price {text!r}"))
                continue
            raw.rows.append((date, price))
    dates = [d for d, _ in raw.rows]
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raw.rows.sort(key=lambda r: r[0])
        raw.reordered = True
        dates = [d for d, _ in raw.rows]
    dupes = sorted({a for a, b in zip(dates, dates[1:]) if a == b})
    if dupes:
        raise ValueError(f"{path}: duplicate dates {dupes[:5]}")
    return raw


def load_price_csv(path, dt: float = DT_DAILY) -> PriceSeries:
    """Load a validated :class:`PriceSeries` from a ``date,price`` CSV file.

    Warns
    -----
    DataWarning
        Once per dropped row, and once if the rows had to be sorted.
    """
    raw = read_price_csv(path)
    for line_no, reason in raw.dropped:
        warnings.warn(f"{raw.path}:{line_no}: row dropped ({reason})", DataWarning, stacklevel=2)
    if raw.reordered:
        warnings.warn(f"{raw.path}: rows were not in date order and have been sorted",
                      DataWarning, stacklevel=2)
    if len(raw.rows) < 2:
        raise ValueError(f"{raw.path}: fewer than two valid rows")
    return PriceSeries(tuple(d for d, _ in raw.rows), np.array([p for _, p in raw.rows]), dt)


def compute_returns(series: PriceSeries) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative log-returns ``R_k = ln(S_k / S_0)`` and daily ones ``r_k = R_k - R_{k-1}``.

    Both have one entry per date after the first, with ``r_1 = R_1``.
    """
    big_r = np.log(series.prices[1:] / series.prices[0])
    small_r = np.diff(np.concatenate([[0.0], big_r]))
    return big_r, small_r


def fmt(x) -> str:
    """Format a number with 10 significant digits (integers verbatim)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.10g}"


def _write(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    rows = [[fmt(v) for v in row] for row in rows]
    if not rows:
        raise ValueError("nothing to write")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_price_csv(series: PriceSeries, path) -> None:
    """Write a series in the ``date,price`` input format."""
    _write(path, ["date", "price"], zip(series.dates, series.prices))


def write_surface_csv(grid: SurfaceGrid, path) -> None:
    """Columns ``T_days,moneyness,strike,price,warnings``, one row per cell."""
    if grid.prices.size == 0:
        raise ValueError("empty surface grid")
    _write(path, ["T_days", "moneyness", "strike", "price", "warnings"], grid.rows())


def write_calibration_csv(rolling: RollingCalibration, path) -> None:
    """One row per window end date with the fitted and smoothed parameters."""
    if len(rolling.dates) == 0:
        raise ValueError("empty calibration")
    header = ["date", "sigma_hat", "sigma_star", "mu_hat", "alpha_hat", "mse", "mu_med", "alpha_med"]
    rows = zip(rolling.dates, rolling.sigma_hat, rolling.sigma_star, rolling.mu_hat,
               rolling.alpha_hat, rolling.mse, rolling.mu_med, rolling.alpha_med)
    _write(path, header, ([str(d), *vals] for d, *vals in rows))


def write_delta_csv(delta: DeltaSeries, path) -> None:
    """Columns ``date,alpha_med,delta_hat``."""
    if len(delta.dates) == 0:
        raise ValueError("empty delta series")
    _write(path, ["date", "alpha_med", "delta_hat"],
           ([str(d), a, x] for d, a, x in zip(delta.dates, delta.alpha_med, delta.delta_hat)))


def write_moment_report_csv(report: EnsembleMomentReport, path) -> None:
    """Per-step empirical and theoretical curves of a moment report."""
    header = ["k", "mean", "mean_theory", "std", "std_theory",
              "dmean", "dmean_theory", "dstd", "dstd_theory"]
    _write(path, header, report.to_rows())
