"""Three-asset skew pricing tree on a recombining two-driver lattice.

Each asset follows::

    S_k^i = S_0^i exp(mu_i k dt + sigma_i sqrt(dt) (c j1 + delta |j2|)),   c = sqrt(1 - delta^2)

where ``j1`` and ``j2`` are the levels of two independent +-1 random walks.
One step has four branches ``uu, ud, du, dd`` (first letter moves ``j1``,
second moves ``j2``). The growth of asset ``i`` on branch ``(s1, s2)`` from
level ``j2`` has log-exponent::

    mu_i dt + sigma_i sqrt(dt) (s1 c + delta (|j2 + s2| - |j2|))

which depends on ``j2`` only through its sign, so there are three step
geometries: ``j2 > 0``, ``j2 < 0`` and ``j2 = 0``.

Risk-neutral probabilities
--------------------------
For ``j2 != 0`` the bond plus three assets span the four branches and the
branch probabilities follow from 3x3 determinants (Cramer's rule). Writing
``E_x^i`` for the growth of asset ``i`` without drift and
``G^i = exp((r - mu_i) dt)``, the partial sums ``s1 = q_ud + q_du + q_dd``,
``s2 = q_du + q_dd`` and ``s3 = q_dd`` solve::

    sum_j s_j B_j^i = -(G^i - E_uu^i),   B_1 = E_uu - E_ud, B_2 = E_ud - E_du, B_3 = E_du - E_dd

At ``j2 = 0`` both second-driver moves raise ``|j2|`` by one, so ``uu``
coincides with ``ud`` and ``du`` with ``dd``: the system is singular and
only two price outcomes exist. Three assets cannot in general all be
martingales over a two-outcome step. Pricing therefore collapses that step
to the exact two-state measure of one reference asset, splits each
probability evenly over the coinciding branches (the successor values agree
by the ``j2 -> -j2`` symmetry of the lattice), and reports the martingale
residual left for the other assets.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ArbitrageWarning, DegenerateMarket

BRANCHES = ("uu", "ud", "du", "dd")
BRANCH_MOVES = {"uu": (1, 1), "ud": (1, -1), "du": (-1, 1), "dd": (-1, -1)}
DELTA_MIN = 1e-6
DET_RTOL = 1e-12
PROB_TOL = 1e-12
ZERO_LEVEL_TOL = 1e-9
DT_DAILY = 1.0 / 252.0


class ZeroLevelWarning(UserWarning):
    """The collapsed ``j2 = 0`` step does not reprice every asset."""


@dataclass(frozen=True)
class AssetSpec:
    """Drift ``mu`` (per year), signed scale ``sigma`` (per sqrt year) and spot ``s0``."""

    mu: float
    sigma: float
    s0: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError("mu and sigma must be finite")
        if not self.s0 > 0.0:
            raise ValueError("s0 must be positive")


@dataclass(frozen=True)
class MarketSpec:
    """Three assets sharing one skewness ``delta``, a riskless rate and a step size.

    ``n_steps * dt`` is the maturity. A negative ``r`` is accepted with a
    warning.
    """

    assets: tuple
    delta: float
    r: float = 0.0
    dt: float = DT_DAILY
    n_steps: int = 1

    def __post_init__(self):
        assets = tuple(a if isinstance(a, AssetSpec) else AssetSpec(*a) for a in self.assets)
        object.__setattr__(self, "assets", assets)
        if len(assets) != 3:
            raise ValueError("exactly three assets are required")
        if not -1.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (-1, 1)")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be at least 1")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        if self.r < 0.0:
            warnings.warn(f"negative riskless rate r={self.r}", UserWarning, stacklevel=3)

    @property
    def mu(self) -> np.ndarray:
        return np.array([a.mu for a in self.assets])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([a.sigma for a in self.assets])

    @property
    def s0(self) -> np.ndarray:
        return np.array([a.s0 for a in self.assets])

    @property
    def maturity(self) -> float:
        return self.n_steps * self.dt

    @property
    def c(self) -> float:
        return math.sqrt(1.0 - self.delta * self.delta)

    def with_steps(self, n_steps: int) -> "MarketSpec":
        return replace(self, n_steps=int(n_steps))

    def to_dict(self) -> dict:
        return {
            "assets": [{"mu": a.mu, "sigma": a.sigma, "s0": a.s0} for a in self.assets],
            "delta": self.delta, "r": self.r, "dt": self.dt, "n_steps": self.n_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketSpec":
        assets = tuple(AssetSpec(float(a["mu"]), float(a["sigma"]), float(a["s0"])) for a in d["assets"])
        return cls(assets=assets, delta=float(d["delta"]), r=float(d.get("r", 0.0)),
                   dt=float(d.get("dt", DT_DAILY)), n_steps=int(d.get("n_steps", 1)))


# Fitted three-ETF market used for the rainbow surfaces (SPY, IEV, JPXN).
ETF_MARKET = MarketSpec(
    assets=(AssetSpec(0.32, -0.090, 432.51), AssetSpec(0.31, -0.23, 52.25),
            AssetSpec(-0.069, 2.8, 76.09)),
    delta=0.102, r=0.0, dt=DT_DAILY, n_steps=60,
)


@dataclass(frozen=True)
class LatticeNode:
    """Lattice state after ``k`` steps with driver levels ``j1`` and ``j2``."""

    k: int
    j1: int
    j2: int

    def __post_init__(self):
        k, j1, j2 = self.k, self.j1, self.j2
        if k < 0 or abs(j1) > k or abs(j2) > k or (j1 - k) % 2 or (j2 - k) % 2:
            raise ValueError(f"invalid lattice node {(k, j1, j2)}")

    def successor(self, branch: str) -> "LatticeNode":
        s1, s2 = BRANCH_MOVES[branch]
        return LatticeNode(self.k + 1, self.j1 + s1, self.j2 + s2)


@dataclass(frozen=True)
class BranchQuadruple:
    """One value per branch ``uu, ud, du, dd``; values may be scalars or arrays."""

    uu: object
    ud: object
    du: object
    dd: object

    def __iter__(self) -> Iterator:
        return iter((self.uu, self.ud, self.du, self.dd))

    def __getitem__(self, branch: str):
        return getattr(self, branch)

    def as_array(self) -> np.ndarray:
        return np.array([np.asarray(v, dtype=float) for v in self])

    @classmethod
    def from_array(cls, arr) -> "BranchQuadruple":
        return cls(*(arr[i] for i in range(4)))


@dataclass(frozen=True)
class RiskNeutralMeasure:
    """Branch probabilities for one step geometry, with audit data.

    Attributes
    ----------
    sign : int
        Sign of ``j2`` (+1, -1 or 0).
    q : BranchQuadruple
        Probabilities used for pricing.
    det : float
        Replication determinant (0 for the singular ``j2 = 0`` geometry).
    collapsed : bool
        True when the step was reduced to a two-state measure.
    reference_asset : int or None
        Asset whose two-state measure was used when collapsed.
    residual : ndarray
        Per-asset ``|exp(-r dt) sum_x q_x growth_x - 1|``.
    printed_q_uu : float or None
        ``det(A; B2; B3) / det`` evaluated literally. It differs from
        ``q.uu`` by exactly 1 because the printed form drops the identity
        ``q_uu = 1 - (q_ud + q_du + q_dd)``.
    oracle_gap : float or None
        Largest difference from a direct 4x4 linear solve.
    """

    sign: int
    q: BranchQuadruple
    det: float
    collapsed: bool
    reference_asset: int | None
    residual: np.ndarray
    printed_q_uu: float | None = None
    oracle_gap: float | None = None

    @property
    def arbitrage(self) -> bool:
        q = self.q.as_array()
        return bool(np.any(q < -PROB_TOL) or np.any(q > 1.0 + PROB_TOL))


@dataclass
class PricingDiagnostics:
    min_q: float
    max_q: float
    worst_martingale_residual: float
    zero_level_residual: float
    arbitrage: bool
    method: str
    warnings: list = field(default_factory=list)


@dataclass
class PricingResult:
    """Origin price plus optional node values (``values[k][a, b]`` with ``j1 = 2a - k``, ``j2 = 2b - k``)."""

    price_at_origin: float
    diagnostics: PricingDiagnostics
    values: list | None = None

    @property
    def price(self) -> float:
        return self.price_at_origin


def _node_arrays(k: int):
    levels = np.arange(-k, k + 1, 2)
    return levels


def node_asset_prices(node: LatticeNode, spec: MarketSpec) -> np.ndarray:
    """Prices of the three assets at ``node``."""
    if not isinstance(node, LatticeNode):
        node = LatticeNode(*node)
    a = math.sqrt(spec.dt) * (spec.c * node.j1 + spec.delta * abs(node.j2))
    return spec.s0 * np.exp(spec.mu * node.k * spec.dt + spec.sigma * a)


def _layer_prices(k: int, spec: MarketSpec, delta: float | None = None) -> np.ndarray:
    """Asset prices on the whole layer ``k``, shape ``(k+1, k+1, 3)``."""
    delta = spec.delta if delta is None else delta
    c = math.sqrt(1.0 - delta * delta)
    lv = _node_arrays(k).astype(float)
    drive = math.sqrt(spec.dt) * (c * lv[:, None] + delta * np.abs(lv)[None, :])
    return spec.s0 * np.exp(spec.mu * k * spec.dt + spec.sigma * drive[..., None])


def _branch_shifts(sign: int, delta: float) -> np.ndarray:
    """Driver exponent ``s1 c + delta (|j2 + s2| - |j2|)`` per branch for a ``j2`` sign."""
    c = math.sqrt(1.0 - delta * delta)
    out = np.empty(4)
    for i, b in enumerate(BRANCHES):
        s1, s2 = BRANCH_MOVES[b]
        jump = 1.0 if sign == 0 else float(s2 * sign)
        out[i] = s1 * c + delta * jump
    return out


def _sign(j2: int) -> int:
    return (j2 > 0) - (j2 < 0)


def psi_factors(j2: int, spec: MarketSpec) -> BranchQuadruple:
    """Per-branch growth factors ``exp(mu dt + sigma x sqrt(dt))`` of the three assets from level ``j2``."""
    x = _branch_shifts(_sign(j2), spec.delta)
    g = np.exp(spec.mu[None, :] * spec.dt + spec.sigma[None, :] * x[:, None] * math.sqrt(spec.dt))
    return BranchQuadruple.from_array(g)


def _det3(m: np.ndarray) -> float:
    return float(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def _check_det(det: float, m: np.ndarray, what: str) -> None:
    scale = float(np.prod(np.linalg.norm(m, axis=1)))
    if not np.isfinite(det) or abs(det) <= DET_RTOL * scale:
        raise DegenerateMarket(
            f"{what} determinant {det:.3e} is negligible against its scale {scale:.3e}; "
            "the asset scales are (nearly) collinear or the step geometry is singular"
        )


def _branch_differences(x: np.ndarray, sigma: np.ndarray, h: float) -> np.ndarray:
    """Rows ``E_uu - E_ud``, ``E_ud - E_du``, ``E_du - E_dd`` (columns are assets)."""
    rows = np.empty((3, sigma.size))
    for j in range(3):
        rows[j] = np.exp(sigma * x[j + 1] * h) * np.expm1(sigma * (x[j] - x[j + 1]) * h)
    return rows


def _residuals(q: np.ndarray, spec: MarketSpec, sign: int) -> np.ndarray:
    x = _branch_shifts(sign, spec.delta)
    h = math.sqrt(spec.dt)
    growth = np.exp(spec.sigma[None, :] * x[:, None] * h)  # (4, 3)
    target = np.exp((spec.r - spec.mu) * spec.dt)
    return np.abs(q @ growth / target - 1.0)


def _oracle_q(spec: MarketSpec, sign: int) -> np.ndarray:
    x = _branch_shifts(sign, spec.delta)
    h = math.sqrt(spec.dt)
    a = np.vstack([np.ones(4), np.exp(spec.sigma[:, None] * x[None, :] * h)])
    b = np.concatenate([[1.0], np.exp((spec.r - spec.mu) * spec.dt)])
    return np.linalg.solve(a, b)


def _two_state_up(spec: MarketSpec, asset: int, delta: float) -> float:
    """Up-probability making ``asset`` a martingale on a step with exponents ``sigma (+-c + delta) h``."""
    c = math.sqrt(1.0 - delta * delta)
    s = spec.sigma[asset]
    h = math.sqrt(spec.dt)
    num = np.expm1((spec.r - spec.mu[asset]) * spec.dt) - np.expm1(s * (delta - c) * h)
    den = math.exp(s * (delta - c) * h) * np.expm1(2.0 * s * c * h)
    if den == 0.0:
        raise DegenerateMarket(f"asset {asset} has zero scale; its two-state step is singular")
    return float(num / den)


def _refine(q: np.ndarray, spec: MarketSpec, x: np.ndarray, h: float, sweeps: int = 2) -> np.ndarray:
    """Iterative refinement of ``q`` on the system written in ``expm1`` form.

    Rows are ``sum_x q_x = 1`` and ``sum_x q_x (E_x^i - 1) = exp((r - mu_i) dt) - 1``,
    which avoids the cancellation of the raw growth factors against the
    bond row. Cramer's rule alone is not backward stable when the scales are
    close; a couple of LU correction sweeps bring the repricing residual down
    to rounding level.
    """
    a = np.vstack([np.ones(4), np.expm1(spec.sigma[:, None] * x[None, :] * h)])
    b = np.concatenate([[1.0], np.expm1((spec.r - spec.mu) * spec.dt)])
    for _ in range(sweeps):
        q = q + np.linalg.solve(a, b - a @ q)
    return q


@lru_cache(maxsize=256)
def _measure_cached(spec: MarketSpec, sign: int, reference_asset: int) -> RiskNeutralMeasure:
    h = math.sqrt(spec.dt)
    if sign == 0 or abs(spec.delta) < DELTA_MIN:
        delta = spec.delta if abs(spec.delta) >= DELTA_MIN else 0.0
        qu = _two_state_up(spec, reference_asset, delta)
        q = np.array([qu / 2.0, qu / 2.0, (1.0 - qu) / 2.0, (1.0 - qu) / 2.0])
        geom = sign if abs(spec.delta) >= DELTA_MIN else 0
        res = _residuals(q, replace(spec, delta=delta), geom)
        return RiskNeutralMeasure(sign, BranchQuadruple.from_array(q), 0.0, True,
                                  reference_asset, res)
    x = _branch_shifts(sign, spec.delta)
    rows = _branch_differences(x, spec.sigma, h)
    a = np.expm1((spec.r - spec.mu) * spec.dt) - np.expm1(spec.sigma * x[0] * h)
    det = _det3(rows)
    _check_det(det, rows, "replication")
    s = np.empty(3)
    for j in range(3):
        m = rows.copy()
        m[j] = -a
        s[j] = _det3(m) / det
    q = np.array([1.0 - s[0], s[0] - s[1], s[1] - s[2], s[2]])
    printed = np.vstack([a, rows[1], rows[2]])
    q = _refine(q, spec, x, h)
    oracle = _oracle_q(spec, sign)
    return RiskNeutralMeasure(
        sign, BranchQuadruple.from_array(q), det, False, None, _residuals(q, spec, sign),
        printed_q_uu=_det3(printed) / det, oracle_gap=float(np.max(np.abs(q - oracle))),
    )


def risk_neutral_measure(sign: int, spec: MarketSpec, reference_asset: int = 0) -> RiskNeutralMeasure:
    """Risk-neutral measure for the step geometry of ``j2`` with the given sign.

    The ``j2 = 0`` geometry (and every geometry when ``|delta| < 1e-6``) is
    collapsed to the two-state measure of ``reference_asset``.
    """
    if reference_asset not in (0, 1, 2):
        raise ValueError("reference_asset must be 0, 1 or 2")
    return _measure_cached(spec.with_steps(1), _sign(sign), reference_asset)


def rn_probabilities(j2: int, spec: MarketSpec) -> BranchQuadruple:
    """Risk-neutral branch probabilities ``(q_uu, q_ud, q_du, q_dd)`` from level ``j2``.

    Raises
    ------
    DegenerateMarket
        For ``j2 = 0`` (two coinciding branch pairs), for ``|delta| < 1e-6``
        and when the replication determinant is negligible.

    Warns
    -----
    ArbitrageWarning
        When a probability lies outside [0, 1].
    """
    if abs(spec.delta) < DELTA_MIN:
        raise DegenerateMarket("|delta| below 1e-6: the two drivers are indistinguishable; "
                               "use the two-state (delta = 0) tree")
    if j2 == 0:
        raise DegenerateMarket("at j2 = 0 the branches uu/ud and du/dd coincide, so the "
                               "four-branch replication system is singular")
    m = risk_neutral_measure(_sign(j2), spec)
    if m.arbitrage:
        warnings.warn(f"risk-neutral probabilities {tuple(m.q)} leave [0, 1]",
                      ArbitrageWarning, stacklevel=2)
    return m.q


def hedging_deltas(node: LatticeNode, successor_values: BranchQuadruple, spec: MarketSpec) -> np.ndarray:
    """Asset holdings that make the hedged portfolio branch-independent.

    Solves ``sum_i D_i (psi_x^i - psi_y^i) = f_x - f_y`` over consecutive
    branch pairs by Cramer's rule, where ``psi_x^i`` is the successor price of
    asset ``i`` on branch ``x``.
    """
    if not isinstance(node, LatticeNode):
        node = LatticeNode(*node)
    if abs(spec.delta) < DELTA_MIN or node.j2 == 0:
        raise DegenerateMarket("hedging needs four distinct successor states (j2 != 0, delta != 0)")
    s = node_asset_prices(node, spec)
    x = _branch_shifts(_sign(node.j2), spec.delta)
    h = math.sqrt(spec.dt)
    rows = _branch_differences(x, spec.sigma, h) * (s * np.exp(spec.mu * spec.dt))[None, :]
    f = np.asarray(successor_values.as_array(), dtype=float)
    fd = f[:3] - f[1:]
    det = _det3(rows)
    _check_det(det, rows, "hedging")
    out = np.empty(3)
    for i in range(3):
        m = rows.copy()
        m[:, i] = fd
        out[i] = _det3(m) / det
    return out


def successor_asset_prices(node: LatticeNode, spec: MarketSpec) -> BranchQuadruple:
    """Asset price triples at the four successors of ``node``."""
    return BranchQuadruple(*(node_asset_prices(node.successor(b), spec) for b in BRANCHES))


def replication_spread(node: LatticeNode, successor_values: BranchQuadruple, spec: MarketSpec,
                       deltas: np.ndarray | None = None) -> float:
    """Relative spread of ``sum_i D_i S^i - f`` across the four branches."""
    if deltas is None:
        deltas = hedging_deltas(node, successor_values, spec)
    prices = successor_asset_prices(node, spec).as_array()
    f = successor_values.as_array()
    port = prices @ deltas - f
    scale = max(np.max(np.abs(port)), np.max(np.abs(f)), np.max(np.abs(prices * deltas)))
    return float((port.max() - port.min()) / scale) if scale > 0 else 0.0


def payoff_rainbow_put(strike: float) -> Callable[[np.ndarray], np.ndarray]:
    """``max(0, K - min_i S_T^i)`` as a function of price triples (last axis)."""
    if not strike > 0.0:
        raise ValueError("strike must be positive")
    k = float(strike)

    def payoff(s):
        return np.maximum(0.0, k - np.min(s, axis=-1))

    payoff.strike = k
    return payoff


def payoff_rainbow_call(strike: float) -> Callable[[np.ndarray], np.ndarray]:
    """``max(0, max_i S_T^i - K)`` as a function of price triples (last axis)."""
    if not strike > 0.0:
        raise ValueError("strike must be positive")
    k = float(strike)

    def payoff(s):
        return np.maximum(0.0, np.max(s, axis=-1) - k)

    payoff.strike = k
    return payoff


def _measure_table(spec: MarketSpec, reference_asset: int):
    if abs(spec.delta) < DELTA_MIN:
        m = risk_neutral_measure(0, spec, reference_asset)
        return {1: m, -1: m, 0: m}
    return {s: risk_neutral_measure(s, spec, reference_asset) for s in (1, -1, 0)}


def _backward(spec: MarketSpec, terminal: np.ndarray, table, keep_values: bool):
    """Induct ``terminal`` (shape ``(n+1, n+1, ...)``) back to the origin.

    Uses ``f = disc (f_dd + q_uu (f_uu - f_dd) + q_ud (f_ud - f_dd) + q_du (f_du - f_dd))``,
    which equals the plain four-term expectation when the probabilities sum
    to one and keeps constants exact.
    """
    disc = math.exp(-spec.r * spec.dt)
    q = {s: table[s].q.as_array() for s in (1, -1, 0)}
    v = terminal
    layers = [v] if keep_values else None
    extra = (None,) * (terminal.ndim - 2)
    for k in range(spec.n_steps - 1, -1, -1):
        signs = np.sign(np.arange(-k, k + 1, 2))
        qk = np.array([q[s] for s in signs])  # (k+1, 4)
        f_uu, f_ud, f_du, f_dd = v[1:, 1:], v[1:, :-1], v[:-1, 1:], v[:-1, :-1]
        col = (None, slice(None)) + extra
        v = disc * (f_dd + qk[:, 0][col] * (f_uu - f_dd) + qk[:, 1][col] * (f_ud - f_dd)
                    + qk[:, 2][col] * (f_du - f_dd))
        if keep_values:
            layers.append(v)
    if keep_values:
        layers.reverse()
    return v, layers


def _diagnostics(used, method: str) -> PricingDiagnostics:
    qs = np.concatenate([m.q.as_array() for m in used])
    full = [m.residual for m in used if not m.collapsed]
    worst = float(max((r.max() for r in full), default=0.0))
    zero_res = float(max((m.residual.max() for m in used if m.collapsed), default=0.0))
    arb = any(m.arbitrage for m in used)
    notes = []
    if arb:
        notes.append("arbitrage: risk-neutral probabilities outside [0, 1]")
    if zero_res > ZERO_LEVEL_TOL:
        notes.append(f"zero-level: collapsed j2=0 step leaves martingale residual {zero_res:.3e}")
    return PricingDiagnostics(min_q=float(qs.min()), max_q=float(qs.max()),
                              worst_martingale_residual=worst, zero_level_residual=zero_res,
                              arbitrage=arb, method=method, warnings=notes)


def _emit(diag: PricingDiagnostics, stacklevel: int = 3) -> None:
    for note in diag.warnings:
        cat = ArbitrageWarning if note.startswith("arbitrage") else ZeroLevelWarning
        warnings.warn(note, cat, stacklevel=stacklevel)


def _terminal_line(n: int, spec: MarketSpec) -> np.ndarray:
    """Asset prices after ``n`` two-state steps, shape ``(n+1, 3)`` indexed by ``(j1 + n) / 2``."""
    lv = _node_arrays(n).astype(float)
    return spec.s0 * np.exp(spec.mu * n * spec.dt + spec.sigma * math.sqrt(spec.dt) * lv[:, None])


def _induct(payoff, spec: MarketSpec, keep_values: bool, reference_asset: int):
    table = _measure_table(spec, reference_asset)
    n = spec.n_steps
    if abs(spec.delta) < DELTA_MIN:
        terminal = np.asarray(payoff(_terminal_line(n, spec)), dtype=float)
        disc = math.exp(-spec.r * spec.dt)
        qu = table[0].q.uu + table[0].q.ud
        v = terminal
        layers = [v] if keep_values else None
        for _ in range(n):
            v = disc * (v[:-1] + qu * (v[1:] - v[:-1]))
            if keep_values:
                layers.append(v)
        if keep_values:
            layers.reverse()
        return v[0], layers, _diagnostics([table[0]], "two-state")
    terminal = np.asarray(payoff(_layer_prices(n, spec)), dtype=float)
    v, layers = _backward(spec, terminal, table, keep_values)
    used = [table[0]] + ([table[1], table[-1]] if n > 1 else [])
    return v[0, 0], layers, _diagnostics(used, "four-branch")


def price_european(payoff: Callable[[np.ndarray], np.ndarray], spec: MarketSpec,
                   keep_values: bool = False, reference_asset: int = 0) -> PricingResult:
    """Price a European claim on the three assets by backward induction.

    Parameters
    ----------
    payoff : callable
        Maps price triples, shape ``(..., 3)``, to payoffs of shape ``(...)``.
    spec : MarketSpec
        Market and lattice size (``n_steps`` steps of ``dt``).
    keep_values : bool
        Keep every layer of node values in the result.
    reference_asset : int
        Asset whose two-state measure prices the singular ``j2 = 0`` steps.
        With ``|delta| < 1e-6`` every step is priced this way on a
        one-driver lattice (node values then indexed by ``j1`` only).

    Warns
    -----
    ArbitrageWarning
        When a probability in use leaves [0, 1].
    ZeroLevelWarning
        When the collapsed ``j2 = 0`` step fails to reprice some asset.
    """
    v, layers, diag = _induct(payoff, spec, keep_values, reference_asset)
    _emit(diag)
    return PricingResult(price_at_origin=float(v), diagnostics=diag, values=layers)


@dataclass
class SurfaceGrid:
    """Prices over maturities (rows, in days) and moneyness (columns)."""

    kind: str
    t_days: np.ndarray
    moneyness: np.ndarray
    strikes: np.ndarray
    prices: np.ndarray
    cell_warnings: list

    def rows(self):
        """Yield ``(T_days, moneyness, strike, price, warnings)`` in row-major order."""
        for i, t in enumerate(self.t_days):
            for j, m in enumerate(self.moneyness):
                yield int(t), float(m), float(self.strikes[j]), float(self.prices[i, j]), self.cell_warnings[i][j]


def price_surface(kind: str, spec: MarketSpec, t_days: Sequence[int], moneyness: Sequence[float],
                  reference_asset: int = 0) -> SurfaceGrid:
    """Rainbow put or call prices over a maturity by moneyness grid.

    Put strikes are ``M * min(S0)`` and call strikes ``M * max(S0)``. Each
    maturity ``T`` (in steps of ``spec.dt``) gets its own lattice with
    ``n_steps = T``; all strikes share that lattice. Failed maturities are
    NaN with the error text in ``cell_warnings``.
    """
    if kind not in ("put", "call"):
        raise ValueError("kind must be 'put' or 'call'")
    t_arr = np.asarray(t_days, dtype=int)
    m_arr = np.asarray(moneyness, dtype=float)
    if t_arr.size == 0 or m_arr.size == 0:
        raise ValueError("empty surface grid")
    if np.any(t_arr < 1):
        raise ValueError("maturities must be at least one step")
    base = spec.s0.min() if kind == "put" else spec.s0.max()
    strikes = m_arr * base
    prices = np.full((t_arr.size, m_arr.size), np.nan)
    notes = [[""] * m_arr.size for _ in t_arr]

    def payoff(s):
        if kind == "put":
            return np.maximum(0.0, strikes - np.min(s, axis=-1)[..., None])
        return np.maximum(0.0, np.max(s, axis=-1)[..., None] - strikes)

    seen = {}
    for i, t in enumerate(t_arr):
        try:
            v, _, diag = _induct(payoff, spec.with_steps(int(t)), False, reference_asset)
            prices[i] = v
            text = ";".join(diag.warnings)
            for note in diag.warnings:
                seen.setdefault(note.split(":")[0], diag)
        except DegenerateMarket as exc:
            text = f"DegenerateMarket: {exc}"
        notes[i] = [text] * m_arr.size
    for diag in seen.values():
        _emit(diag)
    return SurfaceGrid(kind=kind, t_days=t_arr, moneyness=m_arr, strikes=strikes,
                       prices=prices, cell_warnings=notes)


def fb_rate(asset1, asset2, form: str = "derived") -> float:
    """Riskless rate implied by two assets with a common skewness.

    Parameters
    ----------
    asset1, asset2 : (mu, sigma)
    form : {"derived", "printed"}
        ``"derived"`` is ``(mu2 s1 - mu1 s2 + s1 s2 (s2 - s1) / 2) / (s1 - s2)``,
        the zero-beta rate for instantaneous drifts ``mu_i + s_i^2 / 2``.
        ``"printed"`` replaces ``s1 s2 (s2 - s1)`` with ``s2^2 - s1^2``.
    """
    (m1, s1), (m2, s2) = asset1, asset2
    gap = s1 - s2
    if abs(gap) <= DET_RTOL * max(abs(s1), abs(s2), 1.0):
        raise DegenerateMarket("the two scales coincide; the implied rate diverges")
    if form == "derived":
        return (m2 * s1 - m1 * s2 + 0.5 * s1 * s2 * (s2 - s1)) / gap
    if form == "printed":
        return (m2 * s1 - m1 * s2 + 0.5 * (s2 * s2 - s1 * s1)) / gap
    raise ValueError("form must be 'derived' or 'printed'")


@dataclass
class MartingaleReport:
    """Per-geometry residuals ``|exp(-r dt) sum_x q_x growth_x^i - 1|`` for each asset."""

    positive: np.ndarray
    negative: np.ndarray
    zero: np.ndarray
    max_residual: float
    zero_level_max: float
    arbitrage: bool


def martingale_residuals(spec: MarketSpec, reference_asset: int = 0) -> MartingaleReport:
    """Audit how well each step measure reprices each asset.

    ``max_residual`` covers the full-rank ``j2 != 0`` geometries; the
    collapsed ``j2 = 0`` step is reported separately in ``zero_level_max``.
    """
    table = _measure_table(spec, reference_asset)
    full = [table[s] for s in (1, -1) if not table[s].collapsed]
    return MartingaleReport(
        positive=table[1].residual, negative=table[-1].residual, zero=table[0].residual,
        max_residual=float(max((m.residual.max() for m in full), default=0.0)),
        zero_level_max=float(table[0].residual.max()),
        arbitrage=any(m.arbitrage for m in table.values()),
    )
