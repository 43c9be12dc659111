import json
import math
import re

import numpy as np
import pytest

from skewtree import cli
from skewtree.calibration import synthetic_fixture
from skewtree.market_data import write_price_csv
from skewtree.verify import REFERENCE_MOMENT_MSE, REFERENCE_MOMENT_PATHS, random_valid_spec


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def value(out, label):
    return float(re.search(rf"^{re.escape(label)}\s+(\S+)", out, re.M).group(1))


def price_file(tmp_path, name, *fixture_args, rng):
    path = tmp_path / name
    write_price_csv(synthetic_fixture(*fixture_args, rng=rng), path)
    return path


# ---------------------------------------------------------------- simulate


@pytest.mark.slow
def test_simulate_matches_reference_magnitudes(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--alpha", 0.5, "--paths", 100_000, "--steps", 6000,
                       "--seed", 11, "--out", tmp_path / "m.csv")
    assert code == 0
    got = [value(out, lab) for lab in ("MSE(E[M])", "MSE(sqrt Var M)", "MSE(E[dM])",
                                       "MSE(sqrt Var dM)")]
    scale = math.sqrt(REFERENCE_MOMENT_PATHS / 100_000)
    ref = [x * scale for x in REFERENCE_MOMENT_MSE[0.5][:3]] + [REFERENCE_MOMENT_MSE[0.5][3] * scale**2]
    for g, r in zip(got, ref):
        assert r / 10 <= g <= r * 10
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 6001


def test_simulate_rejects_alpha_outside_unit_interval(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--alpha", "1.5"])
    assert exc.value.code == cli.EXIT_USAGE
    assert "not in [0, 1]" in capsys.readouterr().err


def test_simulate_is_reproducible_and_echoes(capsys, tmp_path, monkeypatch):
    args = ["simulate", "--alpha", 0.55, "--paths", 3000, "--steps", 200, "--seed", 5]
    code, out, _ = run(capsys, *args, "--out", tmp_path / "a.csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "seed: 5"
    cfg = json.loads(lines[1].removeprefix("config: "))
    assert cfg["alpha"] == 0.55 and cfg["paths"] == 3000 and cfg["workers"] == 1
    run(capsys, *args, "--out", tmp_path / "b.csv")
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    _, out3, _ = run(capsys, *args, "--out", tmp_path / "c.csv")
    assert '"workers": 3' in out3
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_missing_seed_is_drawn_and_echoed(capsys):
    _, out, _ = run(capsys, "simulate", "--alpha", 0.5, "--paths", 100, "--steps", 10)
    seed = int(re.match(r"seed: (\d+)", out).group(1))
    _, again, _ = run(capsys, "simulate", "--alpha", 0.5, "--paths", 100, "--steps", 10,
                      "--seed", seed)
    assert out.splitlines()[2:] == again.splitlines()[2:]


def test_bad_worker_env_is_usage_error(capsys, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    code, _, err = run(capsys, "simulate", "--alpha", 0.5, "--paths", 10, "--steps", 10)
    assert code == cli.EXIT_USAGE and cli.WORKERS_ENV in err


# ---------------------------------------------------------------- fit


@pytest.mark.slow
def test_fit_alpha_typically_in_reference_spread(capsys, tmp_path):
    inside = 0
    for i in range(10):
        path = price_file(tmp_path, f"fx{i}.csv", 0.05, 0.1, 0.6, 6000, rng=1000 + i)
        code, out, _ = run(capsys, "fit", path, "--seed", i, "--ensemble", 20_000)
        assert code == 0
        assert abs(value(out, "sigma*") - 0.1) < 5e-3
        inside += 0.51 <= value(out, "alpha*") <= 0.66
    assert inside >= 6


def test_fit_single_shot_json(capsys, tmp_path):
    path = price_file(tmp_path, "s.csv", 0.05, 0.2, 0.55, 800, rng=3)
    code, out, _ = run(capsys, "fit", path, "--seed", 1, "--ensemble", 2000,
                       "--out", tmp_path / "fit.json")
    assert code == 0
    res = json.loads((tmp_path / "fit.json").read_text())
    assert res["alpha_star"] == pytest.approx(value(out, "alpha*"), rel=1e-9)
    assert 0.45 <= res["alpha_star"] <= 0.65 and -0.5 <= res["mu_star"] <= 0.5


@pytest.mark.slow
def test_fit_rolling_window_csv(capsys, tmp_path):
    path = price_file(tmp_path, "five.csv", 0.05, 0.2, 0.55, 5 * 252, rng=4)
    code, out, _ = run(capsys, "fit", path, "--window", 252, "--seed", 2, "--ensemble", 1000,
                       "--out", tmp_path / "roll.csv")
    assert code == 0 and "windows 1008" in out
    lines = (tmp_path / "roll.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert {"date", "sigma_star", "mu_med", "alpha_med", "mse"} <= set(header)
    assert len(lines) == 1 + 5 * 252 - 252
    rows = np.array([[float(x) for x in ln.split(",")[1:]] for ln in lines[1:]])
    assert np.all(np.isfinite(rows))


def test_fit_data_errors(capsys, tmp_path):
    code, _, err = run(capsys, "fit", tmp_path / "nope.csv")
    assert code == cli.EXIT_DATA and "nope.csv" in err
    short = price_file(tmp_path, "short.csv", 0.05, 0.2, 0.5, 20, rng=0)
    code, _, _ = run(capsys, "fit", short, "--window", 50, "--seed", 0)
    assert code == cli.EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("when,close\n")
    assert run(capsys, "fit", bad, "--seed", 0)[0] == cli.EXIT_DATA


# ---------------------------------------------------------------- delta-index


@pytest.fixture(scope="module")
def delta_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("delta")
    path = tmp / "index.csv"
    # A delta = 0.1 index is driven by a walk with alpha = (1 + delta) / 2.
    write_price_csv(synthetic_fixture(0.05, 0.15, 0.55, 3 * 252, rng=21), path)
    out = tmp / "delta.csv"
    argv = ["delta-index", str(path), "--seed", "3", "--ensemble", "2000", "--out", str(out)]
    assert cli.main(argv) == 0
    rows = [ln.split(",") for ln in out.read_text().splitlines()[1:]]
    return np.array([float(r[2]) for r in rows if r[2] != "nan"])


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="a 252-day window barely informs alpha, so the median "
                   "fit sits at the centre of [0.45, 0.55] and delta_hat stays near 0")
def test_delta_index_recovers_synthetic_delta(delta_run):
    assert abs(delta_run.mean() - 0.1) <= 0.03


@pytest.mark.slow
def test_delta_index_respects_bounds(delta_run):
    assert delta_run.size > 0
    assert np.all(np.abs(delta_run) <= 0.1 + 1e-12)


def test_delta_index_errors(capsys, tmp_path):
    path = price_file(tmp_path, "i.csv", 0.05, 0.15, 0.5, 100, rng=0)
    assert run(capsys, "delta-index", path, "--seed", 0)[0] == cli.EXIT_DATA
    code = run(capsys, "delta-index", path, "--window", 50, "--alpha-bounds", 0.6, 0.4)[0]
    assert code == cli.EXIT_USAGE


# ---------------------------------------------------------------- price


def test_constant_payoff_equals_discounted_strike(capsys):
    code, out, _ = run(capsys, "price", "--constant-payoff", "--strike", 5, "--r", 0.03,
                       "--T", 60)
    assert code == 0
    assert out.splitlines()[0] == "seed: none (deterministic command)"
    assert value(out, "price") == pytest.approx(5 * math.exp(-0.03 * 60 / 252), rel=1e-9)
    assert value(out, "price") == pytest.approx(value(out, "expected"), rel=1e-9)


@pytest.mark.xfail(strict=True, reason="the fitted three-ETF market admits arbitrage and its "
                   "rainbow prices are dominated by amplified rounding noise")
def test_etf_put_is_clean(capsys):
    code, out, err = run(capsys, "price", "--kind", "put", "--moneyness", 1.0, "--T", 60)
    p = value(out, "price")
    assert code == 0 and math.isfinite(p) and p > 0 and "warning" not in err


def test_etf_put_reports_diagnostics(capsys):
    code, out, err = run(capsys, "price", "--T", 5)
    assert code == 0
    assert "ArbitrageWarning" in err and "q range" in out and "worst martingale residual" in out


def test_config_precedence_and_dump(capsys, tmp_path):
    spec = random_valid_spec(8)
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps(spec.to_dict()))
    code, out, _ = run(capsys, "price", "--config", cfg, "--delta", 0.25, "--T", 3,
                       "--dump", tmp_path / "v.csv")
    assert code == 0
    market = json.loads(out.splitlines()[1].removeprefix("config: "))["market"]
    assert market["delta"] == 0.25 and market["r"] == spec.r
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "k,j1,j2,value" and len(lines) == 1 + 1 + 4 + 9 + 16


def test_degenerate_and_invalid_configs(capsys, tmp_path):
    cfg = tmp_path / "d.json"
    cfg.write_text(json.dumps({"assets": [{"mu": 0.1, "sigma": 0.2, "s0": 100.0}] * 3}))
    code, _, err = run(capsys, "price", "--config", cfg)
    assert code == cli.EXIT_DEGENERATE and "DegenerateMarket" in err
    bad = tmp_path / "b.json"
    bad.write_text("{not json")
    assert run(capsys, "price", "--config", bad)[0] == cli.EXIT_DATA
    assert run(capsys, "price", "--delta", 1.5)[0] == cli.EXIT_USAGE


# ---------------------------------------------------------------- surface


def read_surface(path):
    lines = path.read_text().splitlines()
    assert lines[0] == "T_days,moneyness,strike,price,warnings"
    return [ln.split(",") for ln in lines[1:]]


@pytest.mark.slow
def test_default_surface_grid_is_complete(capsys, tmp_path):
    code, out, _ = run(capsys, "surface", "--out", tmp_path / "s.csv")
    assert code == 0
    rows = read_surface(tmp_path / "s.csv")
    assert len(rows) == 110
    assert sorted({int(r[0]) for r in rows}) == list(range(10, 101, 10))
    assert [float(r[1]) for r in rows[:11]] == pytest.approx(np.linspace(0.5, 1.5, 11))


def test_put_surface_monotone_in_moneyness(capsys, tmp_path):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps(random_valid_spec(12).to_dict()))
    code, _, _ = run(capsys, "surface", "--config", cfg, "--t-range", 5, 30, 5,
                     "--out", tmp_path / "s.csv")
    assert code == 0
    prices = np.array([float(r[3]) for r in read_surface(tmp_path / "s.csv")]).reshape(6, 11)
    assert np.all(np.diff(prices, axis=1) >= -1e-9)


def test_single_cell_surface(capsys, tmp_path):
    code, _, _ = run(capsys, "surface", "--kind", "call", "--t-range", 5, 5, 1,
                     "--m-range", 1.0, 1.0, 1, "--out", tmp_path / "one.csv")
    assert code == 0 and len(read_surface(tmp_path / "one.csv")) == 1


def test_surface_rejects_bad_ranges(capsys, tmp_path):
    code = run(capsys, "surface", "--t-range", 10, 5, 1, "--out", tmp_path / "x.csv")[0]
    assert code == cli.EXIT_USAGE and not (tmp_path / "x.csv").exists()


# ---------------------------------------------------------------- verify


@pytest.mark.slow
def test_verify_lattice_passes(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "lattice", "--seed", 0)
    assert code == 0 and "FAIL" not in out and out.count("[PASS]") == 5


@pytest.mark.slow
def test_verify_walk_quartiles(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "walk", "--paths", 100_000, "--seed", 0)
    assert code == 0, out


def test_verify_unknown_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "--suite", "bogus"])
    assert exc.value.code == cli.EXIT_USAGE
