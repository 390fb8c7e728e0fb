"""Numerical checks of the incentive properties of the cooperative settlement.

Everything here prices outcomes through :func:`settle_matrix` and
:func:`effective_bid_matrix`, the same path the simulator uses.

Monte Carlo experiments share one engine: draw standard noise for every
consumer's load, the cooperative forecast and the real-time price, build
announcements / loads / prices for each grid point with a scenario builder,
then settle and average consumer 0's relative price ``P / (l_r * p_d)``.
All grid points reuse the same noise draws (common random numbers), so the
curves are smooth and their differences are much tighter than the quoted
per-point standard errors.

With ``noise_points`` set, the noise is discrete: a symmetric grid on
``[-noise_span, noise_span]`` weighted by the normal density. The same
distribution can then be integrated exactly by enumeration, which is the
oracle for the Monte Carlo path.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bidding import effective_bid_matrix
from .exceptions import ValidationError
from .market_data import PRICE_FLOOR
from .settlement import DEVIATION_TOL, REDUCER_CASES, CONTRIBUTOR_CASES, settle_matrix

log = logging.getLogger(__name__)

HALF_NORMAL = np.sqrt(np.pi / 2)
CHUNK = 20_000
MAX_ENUMERATION = 2_000_000
SIGMAS = 3.0


# ---------------------------------------------------------------------------
# populations and noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationSpec:
    """A homogeneous cooperative seen from consumer 0.

    Loads are ``mean_load * (1 + s * z)`` with ``s = load_mape * sqrt(pi/2)``
    so that ``load_mape`` is the mean absolute relative error.
    ``own_load_mape`` overrides it for consumer 0. The forecast is
    ``sum(mean_load) * (1 + forecast_sd * z)`` and the real-time price is
    ``max(p_d + price_sd * z, PRICE_FLOOR)``. ``others_bias`` is the relative
    bias of the other consumers' announcements.
    """

    num_consumers: int = 20
    mean_load: float = 10.0
    load_mape: float = 0.05
    own_load_mape: float | None = None
    forecast_sd: float = 0.0
    consumer_rho: float = 0.5
    others_rho: float = 0.5
    others_bias: float = 0.0
    p_d: float = 30.0
    price_sd: float = 5.0
    noise_points: int | None = None
    noise_span: float = 3.0

    def __post_init__(self):
        if self.num_consumers < 2:
            raise ValidationError("a population needs consumer 0 and at least one other consumer")
        if not self.mean_load > 0:
            raise ValidationError("mean_load must be positive")
        for name in ("load_mape", "forecast_sd", "price_sd"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.own_load_mape is not None and self.own_load_mape < 0:
            raise ValidationError("own_load_mape must be non-negative")
        for name in ("consumer_rho", "others_rho"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if not self.others_bias > -1:
            raise ValidationError("others_bias must exceed -1 so announcements stay non-negative")
        if not self.p_d > 0:
            raise ValidationError("p_d must be positive")
        if self.noise_points is not None and (self.noise_points < 2 or self.noise_points % 2 == 0):
            raise ValidationError("noise_points must be an odd integer >= 3 so the grid is centred on 0")
        if not self.noise_span > 0:
            raise ValidationError("noise_span must be positive")

    @property
    def load_sigma(self) -> np.ndarray:
        s = np.full(self.num_consumers, self.load_mape * HALF_NORMAL)
        if self.own_load_mape is not None:
            s[0] = self.own_load_mape * HALF_NORMAL
        return s

    @property
    def means(self) -> np.ndarray:
        return np.full(self.num_consumers, self.mean_load)

    @property
    def confidence(self) -> np.ndarray:
        rho = np.full(self.num_consumers, self.others_rho)
        rho[0] = self.consumer_rho
        return rho

    def noise_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Discrete standard-normal support and weights (requires ``noise_points``)."""
        if self.noise_points is None:
            raise ValidationError("noise_points is not set; the noise is continuous")
        z = np.linspace(-self.noise_span, self.noise_span, self.noise_points)
        w = np.exp(-0.5 * z * z)
        return z, w / w.sum()

    def noise_dims(self) -> tuple[bool, bool, bool]:
        """Which noise sources are active: (per-consumer load, forecast, price)."""
        return bool(np.any(self.load_sigma > 0)), self.forecast_sd > 0, self.price_sd > 0


@dataclass(frozen=True)
class Noise:
    """Standard noise for D draws: ``load`` (D, N), ``forecast`` (D,), ``price`` (D,), ``weight`` (D,)."""

    load: np.ndarray
    forecast: np.ndarray
    price: np.ndarray
    weight: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.price.shape[0]


def sample_noise(pop: PopulationSpec, rng: np.random.Generator, draws: int) -> Noise:
    n = pop.num_consumers
    if pop.noise_points is None:
        load = rng.standard_normal((draws, n))
        fc = rng.standard_normal(draws)
        price = rng.standard_normal(draws)
    else:
        z, w = pop.noise_grid()
        load = rng.choice(z, size=(draws, n), p=w)
        fc = rng.choice(z, size=draws, p=w)
        price = rng.choice(z, size=draws, p=w)
    return Noise(load, fc, price)


def enumerate_noise(pop: PopulationSpec) -> Noise:
    """Every point of the discrete noise grid with its probability.

    Inactive sources (zero scale) are pinned at 0 so the enumeration only
    spans dimensions that matter.
    """
    z, w = pop.noise_grid()
    load_on, fc_on, price_on = pop.noise_dims()
    n = pop.num_consumers
    axes = [(z, w) if load_on else (np.zeros(1), np.ones(1))] * n
    axes.append((z, w) if fc_on else (np.zeros(1), np.ones(1)))
    axes.append((z, w) if price_on else (np.zeros(1), np.ones(1)))
    total = int(np.prod([a[0].size for a in axes]))
    if total > MAX_ENUMERATION:
        raise ValidationError(
            f"enumeration would need {total} points; use fewer consumers or fewer noise_points"
        )
    pts = np.array(list(itertools.product(*(a[0] for a in axes))))
    wts = np.prod(np.array(list(itertools.product(*(a[1] for a in axes)))), axis=1)
    return Noise(pts[:, :n], pts[:, n], pts[:, n + 1], wts)


# ---------------------------------------------------------------------------
# scenario builders: (pop, noise, grid value) -> (announced, realtime, forecast, p_r, rho)
# ---------------------------------------------------------------------------

def _loads(pop: PopulationSpec, noise: Noise, shift=None) -> np.ndarray:
    mu = pop.means if shift is None else pop.means + shift
    return np.maximum(mu + pop.means * pop.load_sigma * noise.load, 0.0)


def _price(pop: PopulationSpec, noise: Noise) -> np.ndarray:
    return np.maximum(pop.p_d + pop.price_sd * noise.price, PRICE_FLOOR)


def _others_announced(pop: PopulationSpec, draws: int) -> np.ndarray:
    return np.tile(pop.means * (1.0 + pop.others_bias), (draws, 1))


def truthful_builder(pop: PopulationSpec, noise: Noise, bias: float):
    """Consumer 0 announces ``mean_load + bias``; the others announce per ``others_bias``."""
    la = _others_announced(pop, noise.size)
    la[:, 0] = max(pop.mean_load + bias, 0.0)
    lf = pop.means.sum() * (1.0 + pop.forecast_sd * noise.forecast)
    return la, _loads(pop, noise), lf, _price(pop, noise), pop.confidence


def dominant_builder(pop: PopulationSpec, noise: Noise, rho: float):
    """Consumer 0 announces truthfully and relies on the forecast with weight ``rho``."""
    la = _others_announced(pop, noise.size)
    la[:, 0] = pop.mean_load
    lf = pop.means.sum() * (1.0 + pop.forecast_sd * noise.forecast)
    conf = pop.confidence
    conf[0] = rho
    return la, _loads(pop, noise), lf, _price(pop, noise), conf


def biased_builder(pop: PopulationSpec, noise: Noise, point):
    """Bids below the expected loads by ``aggregate_bias`` in total, ``indiv_bias`` of it by consumer 0.

    The forecast equals the announced total, so the effective bids are the
    announcements and ``E[Delta] = aggregate_bias``, ``E[delta_0] = indiv_bias``.
    """
    aggregate_bias, indiv_bias = point
    n = pop.num_consumers
    bids = pop.means - (aggregate_bias - indiv_bias) / (n - 1)
    bids[0] = pop.mean_load - indiv_bias
    if np.any(bids < 0):
        raise ValidationError("bias too large: an effective bid would be negative")
    la = np.tile(bids, (noise.size, 1))
    lf = np.full(noise.size, bids.sum())
    return la, _loads(pop, noise), lf, _price(pop, noise), pop.confidence


def relative_price(pop: PopulationSpec, announced, realtime, forecast, p_r, rho,
                   tol: float = DEVIATION_TOL) -> np.ndarray:
    """Consumer 0's ``P / (l_r * p_d)`` per draw; NaN where its load is zero."""
    effective, _ = effective_bid_matrix(announced, rho, forecast)
    p_d = np.full(p_r.shape, pop.p_d)
    pay = settle_matrix(effective, realtime, p_d, p_r, tol).payments[:, 0]
    denom = realtime[:, 0] * pop.p_d
    return np.divide(pay, denom, out=np.full(pay.shape, np.nan), where=denom > 0)


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCResult:
    """Expected relative price per grid point with standard errors."""

    x: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    draws: int
    warnings: tuple[str, ...] = ()

    @property
    def argmin(self) -> int:
        return int(np.argmin(self.value))

    def at(self, x: float) -> int:
        """Index of the grid point closest to ``x``."""
        return int(np.argmin(np.abs(self.x - x)))


@dataclass(frozen=True)
class MCSurface:
    """Expected relative price over ``aggregate`` (rows) by ``individual`` (columns)."""

    aggregate: np.ndarray
    individual: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    draws: int
    warnings: tuple[str, ...] = ()

    def row(self, i: int) -> MCResult:
        return MCResult(self.individual, self.value[i], self.stderr[i], self.draws, self.warnings)


def _run_mc(pop: PopulationSpec, builder: Callable, points: list, draws: int, seed: int,
            target_se: float | None):
    if draws < 2:
        raise ValidationError("draws must be >= 2")
    rng = np.random.default_rng(seed)
    G = len(points)
    total = np.zeros(G)
    total_sq = np.zeros(G)
    used = np.zeros(G, dtype=np.int64)
    done = 0
    while done < draws:
        size = min(CHUNK, draws - done)
        noise = sample_noise(pop, rng, size)
        for g, point in enumerate(points):
            rel = relative_price(pop, *builder(pop, noise, point))
            ok = ~np.isnan(rel)
            dev = rel[ok] - 1.0  # centred sums keep the variance accurate
            total[g] += dev.sum()
            total_sq[g] += (dev * dev).sum()
            used[g] += ok.sum()
        done += size

    mean_dev = total / used
    var = np.maximum(total_sq / used - mean_dev ** 2, 0.0) * used / np.maximum(used - 1, 1)
    stderr = np.sqrt(var / used)
    warnings = []
    if np.any(used < draws):
        warnings.append(f"{int(draws - used.min())} draws had zero load for consumer 0 and were dropped")
    if target_se is not None and stderr.max() > target_se:
        need = int(np.ceil(draws * (stderr.max() / target_se) ** 2))
        warnings.append(
            f"standard error {stderr.max():.3g} exceeds the target {target_se:.3g}; about {need} draws are needed"
        )
    for w in warnings:
        log.warning(w)
    return 1.0 + mean_dev, stderr, tuple(warnings)


def expected_price_mc(announce_bias, pop: PopulationSpec = PopulationSpec(), draws: int = 100_000,
                      seed: int = 0, target_se: float | None = None) -> MCResult:
    """Expected relative price of consumer 0 against its announcement bias (MWh)."""
    grid = np.asarray(announce_bias, dtype=float).reshape(-1)
    value, se, warn = _run_mc(pop, truthful_builder, list(grid), draws, seed, target_se)
    return MCResult(grid, value, se, draws, warn)


def dominant_strategy_check(rho_grid, pop: PopulationSpec = PopulationSpec(others_bias=0.1),
                            draws: int = 100_000, seed: int = 0,
                            target_se: float | None = None) -> MCResult:
    """Expected relative price of a truthful consumer 0 against its own confidence."""
    grid = np.asarray(rho_grid, dtype=float).reshape(-1)
    if np.any((grid < 0) | (grid > 1)):
        raise ValidationError("rho_grid values must lie in [0, 1]")
    value, se, warn = _run_mc(pop, dominant_builder, list(grid), draws, seed, target_se)
    return MCResult(grid, value, se, draws, warn)


def biased_coop_mc(aggregate_bias, indiv_bias, pop: PopulationSpec = PopulationSpec(),
                   draws: int = 100_000, seed: int = 0, target_se: float | None = None) -> MCSurface:
    """Expected relative price over expected aggregate and individual deviations (MWh)."""
    rows = np.asarray(aggregate_bias, dtype=float).reshape(-1)
    cols = np.asarray(indiv_bias, dtype=float).reshape(-1)
    points = [(a, d) for a in rows for d in cols]
    value, se, warn = _run_mc(pop, biased_builder, points, draws, seed, target_se)
    shape = (rows.size, cols.size)
    return MCSurface(rows, cols, value.reshape(shape), se.reshape(shape), draws, warn)


def bias_grid(pop: PopulationSpec = PopulationSpec(), span: float = 0.2, steps: int = 9) -> np.ndarray:
    """Announcement biases from ``-span`` to ``+span`` of the mean load, always including 0."""
    if steps < 3 or steps % 2 == 0:
        raise ValidationError("steps must be odd and >= 3")
    return pop.mean_load * np.linspace(-span, span, steps)


def exact_expectation(pop: PopulationSpec, builder: Callable, points) -> np.ndarray:
    """Exact expected relative price over the discrete noise grid, by enumeration."""
    noise = enumerate_noise(pop)
    out = []
    for point in points:
        rel = relative_price(pop, *builder(pop, noise, point))
        if np.any(np.isnan(rel)):
            raise ValidationError("consumer 0 has zero load at some grid point; the expectation is undefined")
        out.append(float(np.dot(noise.weight, rel)))
    return np.array(out)


# ---------------------------------------------------------------------------
# contracts
# ---------------------------------------------------------------------------

def truthful_contract(result: MCResult, sigmas: float = SIGMAS) -> dict:
    """Checks for the truthfulness curve; keys map to booleans."""
    zero = result.at(0.0)
    return {
        "argmin_near_zero": abs(result.argmin - zero) <= 1,
        "zero_within_se_of_min": result.value[zero] <= result.value.min() + sigmas * result.stderr[zero],
        "zero_at_least_one": result.value[zero] >= 1.0 - sigmas * result.stderr[zero],
    }


def dominant_contract(result: MCResult, sigmas: float = SIGMAS) -> dict:
    lo, hi = result.at(0.0), result.at(1.0)
    se = np.maximum(result.stderr[:-1], result.stderr[1:])
    return {
        "full_reliance_no_worse": result.value[hi] <= result.value[lo] + sigmas * result.stderr[lo],
        "non_increasing": bool(np.all(np.diff(result.value) <= sigmas * se)),
    }


def feedback_contract(surface: MCSurface) -> dict:
    """Ordering in the individual bias on every row with non-zero aggregate bias.

    For ``E[Delta] > 0`` every negative individual bias must price below the
    unbiased point and every positive one above it; for ``E[Delta] < 0`` the
    other way round. Common random numbers make the point estimates
    comparable directly. Returns ``{aggregate_bias: passed}``.
    """
    out = {}
    zero = int(np.argmin(np.abs(surface.individual)))
    for i, a in enumerate(surface.aggregate):
        if a == 0:
            continue
        v = surface.value[i]
        below, above = v[:zero], v[zero + 1:]
        if a < 0:
            below, above = above, below
        out[float(a)] = bool(np.all(below < v[zero]) and np.all(above > v[zero]))
    return out


# ---------------------------------------------------------------------------
# expectation decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpectedPriceDecomposition:
    """Summary probabilities and the eight-cell split of consumer 0's expected relative price.

    Cells are keyed by ``(price_up, aggregate_up, individual_up)`` where
    ``price_up`` means ``p_r >= p_d`` and the others mean a strictly
    positive deviation. ``contributor_sums`` holds the expected contributor
    deviation total given ``Delta > 0`` and given ``Delta < 0``.
    """

    prob_price_up: float
    prob_load_up: float
    prob_indiv_up: float
    mean_price_gap: float
    contributor_sums: tuple[float, float]
    constant_term: float
    cell_probability: dict = field(default_factory=dict)
    cell_mean: dict = field(default_factory=dict)
    direct: float = float("nan")

    def __post_init__(self):
        for name in ("prob_price_up", "prob_load_up", "prob_indiv_up"):
            if not -1e-12 <= getattr(self, name) <= 1 + 1e-12:
                raise ValidationError(f"{name} must be a probability")
        if self.mean_price_gap < 0:
            raise ValidationError("mean_price_gap must be non-negative")

    @property
    def partitioned(self) -> float:
        return float(sum(self.cell_probability[k] * self.cell_mean[k] for k in self.cell_probability))

    @property
    def expected_relative_price(self) -> float:
        return self.direct


def decompose_expected_price(pop: PopulationSpec, bias: float = 0.0) -> ExpectedPriceDecomposition:
    """Enumerate the discrete noise grid for the truthfulness scenario and split it into eight cells."""
    noise = enumerate_noise(pop)
    la, lr, lf, pr, rho = truthful_builder(pop, noise, bias)
    effective, _ = effective_bid_matrix(la, rho, lf)
    batch = settle_matrix(effective, lr, np.full(pr.shape, pop.p_d), pr)
    denom = lr[:, 0] * pop.p_d
    if np.any(denom <= 0):
        raise ValidationError("consumer 0 has zero load at some grid point")
    rel = batch.payments[:, 0] / denom
    w = noise.weight

    up = batch.price_up
    agg_up = batch.aggregate_deviation > DEVIATION_TOL
    agg_down = batch.aggregate_deviation < -DEVIATION_TOL
    ind_up = batch.individual_deviation[:, 0] > DEVIATION_TOL
    s_sum = np.where(batch.contributors, batch.individual_deviation, 0.0).sum(axis=1)

    def prob(mask):
        return float(w[mask].sum())

    def cond(values, mask):
        p = w[mask].sum()
        return float(np.dot(w[mask], values[mask]) / p) if p > 0 else 0.0

    cell_p, cell_m = {}, {}
    for key in itertools.product((True, False), repeat=3):
        mask = (up == key[0]) & (agg_up == key[1]) & (ind_up == key[2])
        cell_p[key] = prob(mask)
        cell_m[key] = cond(rel, mask)

    return ExpectedPriceDecomposition(
        prob_price_up=prob(up),
        prob_load_up=prob(agg_up),
        prob_indiv_up=prob(ind_up),
        mean_price_gap=cond(pr - pop.p_d, up),
        contributor_sums=(cond(s_sum, agg_up), cond(s_sum, agg_down)),
        constant_term=pop.p_d,
        cell_probability=cell_p,
        cell_mean=cell_m,
        direct=float(np.dot(w, rel)),
    )


# ---------------------------------------------------------------------------
# deterministic sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """Price-vs-deviation sweep for consumer i against one aggregate counterparty.

    ``aggregate_deviation`` lists the counterparty's fixed deviations, i.e.
    the aggregate deviation when consumer i is exactly on its bid; along the
    sweep the aggregate is that value plus ``delta``. ``base_effective`` is
    consumer i's effective bid and ``counterparty_effective`` the rest of
    the cooperative's.
    """

    aggregate_deviation: tuple[float, ...]
    individual_deviation: np.ndarray
    rpd_scenarios: tuple[float, ...]
    base_effective: float = 10.0
    counterparty_effective: float = 100.0
    p_d: float = 30.0

    def __post_init__(self):
        grid = np.array(self.individual_deviation, dtype=float).reshape(-1)
        grid.setflags(write=False)
        object.__setattr__(self, "individual_deviation", grid)
        object.__setattr__(self, "aggregate_deviation", tuple(float(x) for x in self.aggregate_deviation))
        object.__setattr__(self, "rpd_scenarios", tuple(float(x) for x in self.rpd_scenarios))
        if grid.size < 2 or not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
            raise ValidationError("individual_deviation must be a finite, strictly increasing grid")
        if not self.aggregate_deviation or not np.all(np.isfinite(self.aggregate_deviation)):
            raise ValidationError("aggregate_deviation must be non-empty and finite")
        if not self.rpd_scenarios or not np.all(np.isfinite(self.rpd_scenarios)):
            raise ValidationError("rpd_scenarios must be non-empty and finite")
        if not self.p_d > 0:
            raise ValidationError("p_d must be positive")
        if any(self.p_d + r <= 0 for r in self.rpd_scenarios):
            raise ValidationError("every scenario needs p_d + rpd > 0")
        if self.base_effective < 0 or self.counterparty_effective < 0:
            raise ValidationError("effective bids must be non-negative")
        if any(self.counterparty_effective + d < 0 for d in self.aggregate_deviation):
            raise ValidationError("a counterparty deviation would make its real-time load negative")


@dataclass(frozen=True)
class SweepCurve:
    """One (aggregate deviation, RPD) curve; skipped grid points hold NaN."""

    background: float
    rpd: float
    delta: np.ndarray
    relative_price: np.ndarray
    skipped: np.ndarray
    cases: np.ndarray

    @property
    def deviation(self) -> np.ndarray:
        """Relative price deviation ``|P / (l_r p_d) - 1|``."""
        return np.abs(self.relative_price - 1.0)

    def role(self) -> np.ndarray:
        """'R' reducer, 'C' contributor, 'B' balanced, '-' skipped, per grid point."""
        out = np.full(self.delta.shape, "B", dtype="<U1")
        out[np.isin(self.cases, REDUCER_CASES)] = "R"
        out[np.isin(self.cases, CONTRIBUTOR_CASES)] = "C"
        out[self.skipped] = "-"
        return out


def price_deviation_sweep(spec: SweepSpec) -> list[SweepCurve]:
    curves = []
    delta = spec.individual_deviation
    lr_i = spec.base_effective + delta
    skipped = lr_i <= 0
    if np.any(skipped):
        log.info("sweep: %d grid points give non-positive load and are skipped", int(skipped.sum()))
    keep = ~skipped
    rows = int(keep.sum())
    for background in spec.aggregate_deviation:
        for rpd in spec.rpd_scenarios:
            rel = np.full(delta.shape, np.nan)
            cases = np.zeros(delta.shape, dtype=np.int8)
            if rows:
                le = np.tile([spec.base_effective, spec.counterparty_effective], (rows, 1))
                lr = np.column_stack([lr_i[keep], np.full(rows, spec.counterparty_effective + background)])
                batch = settle_matrix(le, lr, np.full(rows, spec.p_d), np.full(rows, spec.p_d + rpd))
                rel[keep] = batch.payments[:, 0] / (lr_i[keep] * spec.p_d)
                cases[keep] = batch.cases[:, 0]
            curves.append(SweepCurve(background, rpd, delta, rel, skipped, cases))
    return curves


def find_discontinuities(curve: SweepCurve, factor: float = 5.0, atol: float = 1e-9) -> list[int]:
    """Grid intervals ``k -> k+1`` where the curve jumps as consumer i's role flips.

    A jump is a step whose size exceeds ``factor`` times the largest
    neighbouring step within an unchanged role (plus ``atol``).
    """
    role = curve.role()
    y = curve.relative_price
    steps = np.abs(np.diff(y))
    out = []
    for k in range(len(steps)):
        if role[k] == role[k + 1] or "-" in (role[k], role[k + 1]):
            continue
        if {role[k], role[k + 1]} != {"R", "C"} and "B" not in (role[k], role[k + 1]):
            continue
        nearby = [steps[j] for j in (k - 1, k + 1)
                  if 0 <= j < len(steps) and role[j] == role[j + 1] and role[j] != "-"]
        local = max(nearby) if nearby else 0.0
        if steps[k] > factor * local + atol:
            out.append(k)
    return out


def reducer_to_contributor_jumps(curve: SweepCurve, **kw) -> list[int]:
    role = curve.role()
    return [k for k in find_discontinuities(curve, **kw) if {role[k], role[k + 1]} == {"R", "C"}]


def default_sweep(step: float = 0.3, points: int = 27) -> SweepSpec:
    """Balanced, over-consuming and under-consuming aggregates crossed with up/flat/down prices.

    The grid is ``step * (-points .. points)``; the default step keeps the
    aggregate crossing at ``delta = -5`` or ``+5`` between grid points.
    """
    grid = step * np.arange(-points, points + 1)
    return SweepSpec(
        aggregate_deviation=(0.0, 5.0, -5.0),
        individual_deviation=grid,
        rpd_scenarios=(10.0, 0.0, -10.0),
    )
