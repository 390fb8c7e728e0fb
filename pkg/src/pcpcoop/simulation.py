"""Multi-round simulation of the cooperative against individual real-time pricing.

A round runs the daily procedure over the horizon. Each consumer announces a
noisy copy of its true load for the next day at 11:00. The cooperative
combines the announcements with its own day-ahead forecast into effective
bids, and each hour is settled both ways:

* PCP: cooperative settlement of the effective bids.
* RTP: every consumer settles its own announcement alone.

After the hour-11 settlement each consumer compares its average price under
both schemes over the trailing 24 hours and moves its confidence halfway
toward 1 (cooperative cheaper) or 0 (cooperative dearer).

The aggregate forecast depends only on the true aggregate load, which is the
same in every round, so it is computed once per scenario and shared.
"""
from __future__ import annotations

import csv
import gzip
import io
import logging
import os
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_bytes, csv_bytes
from .bidding import effective_bid_matrix
from .exceptions import HorizonError, ValidationError
from .forecast import DAY, REFIT_HOUR, day_ahead_forecasts, mape
from .market_data import (
    HourlyPriceSeries,
    LoadProfile,
    ScenarioConfig,
    load_matrix,
    load_price_csv,
    load_profiles_csv,
    synth_loads,
    synth_prices,
)
from .settlement import settle_matrix, total_payment

log = logging.getLogger(__name__)

SCHEMES = ("PCP", "RTP")
PERCENTILES = (5, 25, 50, 75, 95)
# Relative gap below which the two 24-hour averages count as a tie.
TIE_RTOL = 1e-12
HALF_NORMAL = np.sqrt(np.pi / 2)

# Spawn-key tags that keep the data streams apart from the round streams.
PRICE_TAG = 0x7072
LOAD_TAG = 0x6C64


def child_seed(seed: int, *key: int) -> int:
    """A stable 32-bit integer seed derived from ``seed`` and a spawn key."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def agent_rng(seed: int, round_index: int, consumer_id: str) -> np.random.Generator:
    key = zlib.crc32(consumer_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(round_index, key)))


def round_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(round_index,)))


@dataclass
class ConsumerAgent:
    profile: LoadProfile
    mape_target: float
    confidence: float
    rng_stream: np.random.Generator

    def __post_init__(self):
        if not 0 <= self.mape_target < 1:
            raise ValidationError("mape_target must lie in [0, 1)")
        if not 0 <= self.confidence <= 1:
            raise ValidationError("confidence must lie in [0, 1]")

    @property
    def sigma(self) -> float:
        """Relative noise sd whose mean absolute value is ``mape_target``."""
        return self.mape_target * HALF_NORMAL


def announce(agent: ConsumerAgent, hour: int) -> float:
    """One noisy announcement of the agent's true load at ``hour``."""
    loads = agent.profile.loads
    if not 0 <= hour < loads.size:
        raise ValidationError(f"hour {hour} outside the profile (0..{loads.size - 1})")
    eps = agent.sigma * agent.rng_stream.standard_normal()
    return max(float(loads[hour]) * (1.0 + eps), 0.0)


def announce_block(agent: ConsumerAgent, start: int, hours: int = DAY) -> np.ndarray:
    """Announcements for ``hours`` consecutive hours.

    Draws the same stream as calling :func:`announce` hour by hour.
    """
    loads = agent.profile.loads
    if start < 0 or start + hours > loads.size:
        raise ValidationError("announcement block outside the profile")
    eps = agent.sigma * agent.rng_stream.standard_normal(hours)
    return np.maximum(loads[start:start + hours] * (1.0 + eps), 0.0)


def update_confidence(agent: ConsumerAgent, pcp_avg_24h: float, rtp_avg_24h: float) -> float:
    """Next confidence value; the agent itself is not modified."""
    rho = agent.confidence
    if abs(pcp_avg_24h - rtp_avg_24h) <= TIE_RTOL * max(abs(pcp_avg_24h), abs(rtp_avg_24h)):
        return rho
    if pcp_avg_24h < rtp_avg_24h:
        return (rho + 1.0) / 2.0
    return rho / 2.0


# ---------------------------------------------------------------------------
# scenario data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioData:
    """Horizon slice of prices, true loads and the cooperative forecast.

    ``loads`` is (T, N); ``p_d``, ``p_r`` and ``forecasts`` are (T,).
    """

    timestamps: np.ndarray
    p_d: np.ndarray
    p_r: np.ndarray
    loads: np.ndarray
    forecasts: np.ndarray
    consumer_ids: tuple[str, ...]

    def __post_init__(self):
        T, N = self.loads.shape
        if T % DAY or T == 0:
            raise HorizonError("the horizon must be a positive number of whole days")
        for name in ("p_d", "p_r", "forecasts", "timestamps"):
            if getattr(self, name).shape[0] != T:
                raise ValidationError(f"{name} does not cover the horizon")
        if len(self.consumer_ids) != N:
            raise ValidationError("one consumer id per load column is required")

    @property
    def hours(self) -> int:
        return self.loads.shape[0]

    @property
    def num_consumers(self) -> int:
        return self.loads.shape[1]

    @property
    def days(self) -> int:
        return self.hours // DAY

    @property
    def forecast_mape(self) -> float:
        return mape(self.loads.sum(axis=1), self.forecasts)


def load_inputs(config: ScenarioConfig) -> tuple[HourlyPriceSeries, list[LoadProfile]]:
    """Prices and profiles for the scenario, read from disk or synthesised."""
    hours = config.total_hours
    if config.prices_path is None:
        prices = synth_prices(hours, config.mean_da, config.rt_sigma,
                              seed=child_seed(config.rng_seed, PRICE_TAG))
        profiles = synth_loads(config.num_consumers, hours,
                               seed=child_seed(config.rng_seed, LOAD_TAG), noise=config.load_noise)
        return prices, profiles
    prices = load_price_csv(config.prices_path)
    if len(prices) < hours:
        raise HorizonError(
            f"{config.prices_path} has {len(prices)} hours; warmup + horizon needs {hours}"
        )
    profiles = load_profiles_csv(config.loads_path, prices)
    if len(profiles) < config.num_consumers:
        raise ValidationError(
            f"{config.loads_path} has {len(profiles)} consumers; the scenario asks for {config.num_consumers}"
        )
    return prices, profiles[:config.num_consumers]


def prepare_data(config: ScenarioConfig, prices: HourlyPriceSeries | None = None,
                 profiles: Sequence[LoadProfile] | None = None) -> ScenarioData:
    """Check coverage, then build the horizon slice and its day-ahead forecasts."""
    if prices is None or profiles is None:
        prices, profiles = load_inputs(config)
    hours = config.total_hours
    if len(prices) < hours:
        raise HorizonError(f"price data has {len(prices)} hours; warmup + horizon needs {hours}")
    loads = load_matrix(profiles)
    if loads.shape[0] < hours:
        raise HorizonError(f"load data has {loads.shape[0]} hours; warmup + horizon needs {hours}")
    stamps = prices.timestamps[:hours]
    hod = (stamps - stamps.astype("datetime64[D]")).astype(int)
    warm = config.warmup_hours
    if hod[warm] != 0:
        raise HorizonError("the horizon must start at midnight; adjust warmup_hours or the data start")
    loads = loads[:hours]
    forecasts = day_ahead_forecasts(loads.sum(axis=1), hod, warm, hours,
                                    window=config.forecast_window, issue_hour=REFIT_HOUR)
    return ScenarioData(
        timestamps=stamps[warm:],
        p_d=np.asarray(prices.day_ahead[warm:hours], dtype=float),
        p_r=np.asarray(prices.real_time[warm:hours], dtype=float),
        loads=np.ascontiguousarray(loads[warm:]),
        forecasts=forecasts,
        consumer_ids=tuple(p.consumer_id for p in profiles),
    )


# ---------------------------------------------------------------------------
# one round
# ---------------------------------------------------------------------------

@dataclass
class RoundState:
    """Mutable state of one round; filled in day by day by :func:`run_day`."""

    data: ScenarioData
    agents: list[ConsumerAgent]
    balance_tolerance: float = 1e-9
    deviation_tolerance: float = 1e-9
    pcp: np.ndarray = field(init=False)
    rtp: np.ndarray = field(init=False)
    confidence_by_day: np.ndarray = field(init=False)
    pending: np.ndarray = field(init=False)
    days_done: int = field(init=False, default=0)

    def __post_init__(self):
        T, N = self.data.loads.shape
        if len(self.agents) != N:
            raise ValidationError("one agent per consumer is required")
        self.pcp = np.full((T, N), np.nan)
        self.rtp = np.full((T, N), np.nan)
        self.confidence_by_day = np.full((self.data.days, N), np.nan)
        self.pending = self._announce_day(0)

    def _announce_day(self, day: int) -> np.ndarray:
        start = day * DAY
        return np.column_stack([announce_block(a, start) for a in self.agents])

    @property
    def confidences(self) -> np.ndarray:
        return np.array([a.confidence for a in self.agents])


def new_round(data: ScenarioData, round_index: int, seed: int, mape_range=(0.02, 0.20),
              mape_levels=None, confidences=None, balance_tolerance: float = 1e-9,
              deviation_tolerance: float = 1e-9) -> tuple[RoundState, np.ndarray]:
    """Agents with permuted MAPE levels and uniform initial confidence.

    Returns the state and the rank of each agent's MAPE level (0 = lowest).
    ``mape_levels`` and ``confidences`` override the random draws, in agent order.
    """
    N = data.num_consumers
    rng = round_rng(seed, round_index)
    rank = rng.permutation(N)
    rho0 = rng.uniform(0.0, 1.0, N)
    if mape_levels is None:
        levels = np.linspace(mape_range[0], mape_range[1], N)[rank]
    else:
        levels = np.broadcast_to(np.asarray(mape_levels, dtype=float), (N,))
        rank = np.argsort(np.argsort(levels, kind="stable"), kind="stable")
    if confidences is not None:
        rho0 = np.broadcast_to(np.asarray(confidences, dtype=float), (N,))
    agents = [
        ConsumerAgent(
            profile=LoadProfile(cid, data.loads[:, i]),
            mape_target=float(levels[i]),
            confidence=float(rho0[i]),
            rng_stream=agent_rng(seed, round_index, cid),
        )
        for i, cid in enumerate(data.consumer_ids)
    ]
    state = RoundState(data, agents, balance_tolerance, deviation_tolerance)
    return state, rank


def run_day(state: RoundState, day: int) -> None:
    """Settle one day under both schemes, then run the 11:00 step for the next day.

    Days must be run in order. The whole day is settled before anything is
    recorded, so a failure never leaves a partly settled day behind.
    """
    if day != state.days_done:
        raise ValidationError(f"day {day} requested but day {state.days_done} is next")
    data = state.data
    hours = slice(day * DAY, (day + 1) * DAY)
    announced = state.pending
    rho = state.confidences
    actual = data.loads[hours]
    p_d, p_r = data.p_d[hours], data.p_r[hours]

    effective, _ = effective_bid_matrix(announced, rho, data.forecasts[hours])
    batch = settle_matrix(effective, actual, p_d, p_r, state.deviation_tolerance, state.balance_tolerance)
    rtp = total_payment(announced, actual, p_d[:, None], p_r[:, None])

    state.pcp[hours] = batch.payments
    state.rtp[hours] = rtp
    state.confidence_by_day[day] = rho
    state.days_done = day + 1

    # 11:00 step: the trailing 24 settled hours are 12:00 yesterday to 11:00 today.
    if day >= 1:
        window = slice(day * DAY - (DAY - REFIT_HOUR - 1), day * DAY + REFIT_HOUR + 1)
        load_sum = data.loads[window].sum(axis=0)
        pcp_sum = state.pcp[window].sum(axis=0)
        rtp_sum = state.rtp[window].sum(axis=0)
        for i, agent in enumerate(state.agents):
            if load_sum[i] > 0:
                agent.confidence = update_confidence(agent, pcp_sum[i] / load_sum[i], rtp_sum[i] / load_sum[i])
    if day + 1 < data.days:
        state.pending = state._announce_day(day + 1)


def run_round(state: RoundState) -> RoundState:
    for day in range(state.days_done, state.data.days):
        run_day(state, day)
    return state


def relative_prices(payments: np.ndarray, loads: np.ndarray, p_d: np.ndarray) -> np.ndarray:
    """``payment / (l_r * p_d)``, NaN where the true load is zero."""
    denom = loads * p_d[:, None]
    return np.divide(payments, denom, out=np.full(payments.shape, np.nan), where=denom > 0)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    bucket: int
    mape: float
    scheme: str
    count: int
    median: float
    std: float
    p5: float
    p25: float
    p75: float
    p95: float


@dataclass(frozen=True)
class SimulationReport:
    """Aggregated outcome of all rounds.

    ``bucket_mape`` is the mean MAPE level of each bucket. ``relative_prices``
    maps ``(scheme, bucket)`` to the raw samples when they were kept, and
    ``confidence_traces`` is (days, buckets), averaged over consumers and rounds.
    """

    config: ScenarioConfig
    bucket_mape: np.ndarray
    summary: tuple[SummaryRow, ...]
    confidence_traces: np.ndarray
    overall_confidence: np.ndarray
    sample_counts: dict
    relative_prices: dict | None
    forecast_mape: float

    @property
    def total_samples(self) -> int:
        return int(sum(self.sample_counts.values()))

    def row(self, scheme: str, bucket: int) -> SummaryRow:
        for r in self.summary:
            if r.scheme == scheme and r.bucket == bucket:
                return r
        raise KeyError((scheme, bucket))

    def terminal_confidence(self, fraction: float = 0.25) -> np.ndarray:
        """Mean confidence per bucket over the last ``fraction`` of days."""
        days = self.confidence_traces.shape[0]
        tail = max(1, int(round(days * fraction)))
        return self.confidence_traces[-tail:].mean(axis=0)


def _summarise(samples: np.ndarray) -> dict:
    if samples.size == 0:
        nan = float("nan")
        return dict(count=0, median=nan, std=nan, p5=nan, p25=nan, p75=nan, p95=nan)
    p5, p25, p50, p75, p95 = np.percentile(samples, PERCENTILES)
    return dict(count=int(samples.size), median=float(p50), std=float(samples.std()),
                p5=float(p5), p25=float(p25), p75=float(p75), p95=float(p95))


def bucket_of_rank(num_consumers: int, num_buckets: int) -> np.ndarray:
    """Bucket index for each MAPE rank; buckets are contiguous and near-equal in size."""
    out = np.empty(num_consumers, dtype=int)
    for b, ranks in enumerate(np.array_split(np.arange(num_consumers), num_buckets)):
        out[ranks] = b
    return out


def run_scenario(config: ScenarioConfig, prices: HourlyPriceSeries | None = None,
                 profiles: Sequence[LoadProfile] | None = None, keep_samples: bool | None = None,
                 progress: Callable[[int, int], None] | None = None) -> SimulationReport:
    """Run ``config.num_rounds`` independent rounds and aggregate them."""
    data = prepare_data(config, prices, profiles)
    keep = config.write_samples if keep_samples is None else keep_samples
    N, B = data.num_consumers, min(config.num_buckets, data.num_consumers)
    levels = np.linspace(config.mape_range[0], config.mape_range[1], N)
    rank_bucket = bucket_of_rank(N, B)
    bucket_mape = np.array([levels[rank_bucket == b].mean() for b in range(B)])
    members = np.bincount(rank_bucket, minlength=B)

    chunks = {(s, b): [] for s in SCHEMES for b in range(B)}
    traces = np.zeros((data.days, B))
    overall = np.zeros(data.days)
    for m in range(config.num_rounds):
        state, rank = new_round(data, m, config.rng_seed, config.mape_range,
                                balance_tolerance=config.balance_tolerance,
                                deviation_tolerance=config.deviation_tolerance)
        run_round(state)
        bucket = rank_bucket[rank]
        for scheme, pay in zip(SCHEMES, (state.pcp, state.rtp)):
            rel = relative_prices(pay, data.loads, data.p_d)
            for b in range(B):
                block = rel[:, bucket == b].ravel()
                chunks[(scheme, b)].append(block[~np.isnan(block)])
        for b in range(B):
            traces[:, b] += state.confidence_by_day[:, bucket == b].sum(axis=1)
        overall += state.confidence_by_day.mean(axis=1)
        if progress is not None:
            progress(m + 1, config.num_rounds)
        log.debug("round %d of %d done", m + 1, config.num_rounds)

    traces /= members[None, :] * config.num_rounds
    overall /= config.num_rounds

    rows, counts, samples = [], {}, {} if keep else None
    for b in range(B):
        for scheme in SCHEMES:
            merged = np.concatenate(chunks.pop((scheme, b)))
            stats = _summarise(merged)
            counts[(scheme, b)] = stats["count"]
            rows.append(SummaryRow(bucket=b, mape=float(bucket_mape[b]), scheme=scheme, **stats))
            if keep:
                samples[(scheme, b)] = merged
    return SimulationReport(
        config=config,
        bucket_mape=bucket_mape,
        summary=tuple(rows),
        confidence_traces=traces,
        overall_confidence=overall,
        sample_counts=counts,
        relative_prices=samples,
        forecast_mape=data.forecast_mape,
    )


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

SUMMARY_HEADER = ("bucket", "scheme", "median", "std", "p5", "p25", "p75", "p95", "mape", "count")
CONFIDENCE_HEADER = ("day", "bucket", "mean_rho")


def summary_csv(report: SimulationReport) -> bytes:
    rows = [
        (r.bucket, r.scheme,
         *(f"{getattr(r, k):.6f}" for k in ("median", "std", "p5", "p25", "p75", "p95")),
         f"{r.mape:.6f}", r.count)
        for r in report.summary
    ]
    return csv_bytes(SUMMARY_HEADER, rows)


def confidence_csv(report: SimulationReport) -> bytes:
    """Per-bucket traces plus an ``all`` row per day for the population mean."""
    rows = []
    for day in range(report.confidence_traces.shape[0]):
        for b in range(report.confidence_traces.shape[1]):
            rows.append((day, b, f"{report.confidence_traces[day, b]:.6f}"))
        rows.append((day, "all", f"{report.overall_confidence[day]:.6f}"))
    return csv_bytes(CONFIDENCE_HEADER, rows)


def samples_csv_gz(report: SimulationReport) -> bytes:
    if report.relative_prices is None:
        raise ValidationError("the report was produced without raw samples")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("scheme", "bucket", "relative_price"))
    for (scheme, b), values in sorted(report.relative_prices.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        writer.writerows((scheme, b, f"{v:.6f}") for v in values.tolist())
    # mtime=0 keeps the archive bytes reproducible.
    return gzip.compress(buf.getvalue().encode("utf-8"), mtime=0)


def write_report(report: SimulationReport, out_dir) -> list[str]:
    """Write summary.csv, confidence.csv and, with samples, samples.csv.gz. Returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    outputs = [("summary.csv", summary_csv), ("confidence.csv", confidence_csv)]
    if report.relative_prices is not None:
        outputs.append(("samples.csv.gz", samples_csv_gz))
    for name, render in outputs:
        path = os.path.join(out_dir, name)
        atomic_write_bytes(path, render(report))
        written.append(path)
    return written
