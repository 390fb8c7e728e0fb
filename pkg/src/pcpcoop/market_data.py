"""Hourly price series and consumer load profiles: CSV ingestion, validation and synthesis.

Units are $/MWh for prices and MWh per hour for loads, so that every
payment (load x price) comes out in dollars.

CSV schemas
-----------
prices:  ``timestamp,day_ahead,real_time``  (one row per hour)
loads:   ``timestamp,consumer_id,load_mwh`` (long format, one row per consumer-hour)

Timestamps are ISO-8601 at hour resolution. Numbers are written with six
decimals so files round-trip byte-for-byte.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import datetime as dt
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    AlignmentError,
    GapError,
    ParseError,
    ValidationError,
)

PRICE_HEADER = ("timestamp", "day_ahead", "real_time")
LOAD_HEADER = ("timestamp", "consumer_id", "load_mwh")

# p_r floor for synthetic prices; normal noise can otherwise cross zero.
PRICE_FLOOR = 0.01
DEFAULT_START = np.datetime64("2015-02-01T00", "h")
ONE_HOUR = np.timedelta64(1, "h")

# Day-ahead shape by hour of day, normalised to mean 1 below.
_DIURNAL = np.array([
    0.78, 0.74, 0.72, 0.71, 0.72, 0.78, 0.90, 1.02, 1.08, 1.10, 1.11, 1.12,
    1.12, 1.11, 1.10, 1.10, 1.13, 1.22, 1.28, 1.25, 1.17, 1.06, 0.95, 0.85,
])
DIURNAL_TEMPLATE = _DIURNAL / _DIURNAL.mean()


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _hours(timestamps) -> np.ndarray:
    return _frozen(np.asarray(timestamps, dtype="datetime64[h]"), dtype="datetime64[h]")


def format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "h")) + ":00:00"


def missing_hours(timestamps: np.ndarray) -> list[np.datetime64]:
    """Hours absent between the first and last timestamp of a sorted array."""
    gaps = []
    steps = np.diff(timestamps).astype(int)
    for i in np.flatnonzero(steps > 1):
        start = timestamps[i]
        gaps.extend(start + ONE_HOUR * k for k in range(1, steps[i]))
    return gaps


@dataclass(frozen=True)
class HourlyPriceSeries:
    """Aligned day-ahead and real-time prices per hour."""

    timestamps: np.ndarray
    day_ahead: np.ndarray
    real_time: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _hours(self.timestamps))
        object.__setattr__(self, "day_ahead", _frozen(self.day_ahead))
        object.__setattr__(self, "real_time", _frozen(self.real_time))
        n = len(self.timestamps)
        if n == 0:
            raise ValidationError("price series is empty")
        if len(self.day_ahead) != n or len(self.real_time) != n:
            raise ValidationError(
                f"price vectors have lengths {len(self.day_ahead)}/{len(self.real_time)}, "
                f"expected {n}"
            )
        steps = np.diff(self.timestamps).astype(int)
        if np.any(steps <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        if np.any(steps > 1):
            raise GapError(format_timestamp(t) for t in missing_hours(self.timestamps))
        for name, arr in (("day_ahead", self.day_ahead), ("real_time", self.real_time)):
            bad = np.flatnonzero(~(arr > 0))
            if bad.size:
                raise ValidationError(
                    f"{name} price must be positive; hour {bad[0]} has {arr[bad[0]]}"
                )

    def __len__(self) -> int:
        return len(self.timestamps)

    def slice(self, start: int, stop: int) -> "HourlyPriceSeries":
        return HourlyPriceSeries(
            self.timestamps[start:stop], self.day_ahead[start:stop], self.real_time[start:stop]
        )


@dataclass(frozen=True)
class LoadProfile:
    """Real-time hourly consumption of one consumer (MWh per hour)."""

    consumer_id: str
    loads: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "consumer_id", str(self.consumer_id))
        object.__setattr__(self, "loads", _frozen(self.loads))
        if self.loads.ndim != 1:
            raise ValidationError("loads must be one-dimensional")
        bad = np.flatnonzero(~(self.loads >= 0))
        if bad.size:
            raise ValidationError(
                f"consumer {self.consumer_id}: negative load {self.loads[bad[0]]} at hour {bad[0]}"
            )

    def __len__(self) -> int:
        return len(self.loads)


def aggregate_load(profiles: Sequence[LoadProfile]) -> np.ndarray:
    return np.sum([p.loads for p in profiles], axis=0)


def load_matrix(profiles: Sequence[LoadProfile]) -> np.ndarray:
    """Stack profiles into an (hours, consumers) array."""
    return np.column_stack([p.loads for p in profiles])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _parse_timestamp(text: str, line: int) -> np.datetime64:
    try:
        ts = dt.datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise ParseError(f"line {line}: bad timestamp {text!r}") from exc
    if ts.tzinfo is not None:
        ts = ts.astimezone(dt.timezone.utc).replace(tzinfo=None)
    if ts.minute or ts.second or ts.microsecond:
        raise ParseError(f"line {line}: timestamp {text!r} is not on the hour")
    return np.datetime64(ts, "h")


def _parse_float(text: str, line: int, name: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ParseError(f"line {line}: {name} is not a number: {text!r}") from exc


def _read_rows(path, header: tuple[str, ...]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise ParseError(f"{path}: header must be {','.join(header)}, got {','.join(first)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            yield line, row


def load_price_csv(path) -> HourlyPriceSeries:
    """Read and validate a prices CSV; rows are sorted by timestamp."""
    stamps, da, rt, lines = [], [], [], []
    for line, row in _read_rows(path, PRICE_HEADER):
        stamps.append(_parse_timestamp(row[0], line))
        da.append(_parse_float(row[1], line, "day_ahead"))
        rt.append(_parse_float(row[2], line, "real_time"))
        lines.append(line)
    if not stamps:
        raise ParseError(f"{path}: no data rows")
    stamps = np.array(stamps, dtype="datetime64[h]")
    da, rt, lines = np.array(da), np.array(rt), np.array(lines)
    for name, arr in (("day_ahead", da), ("real_time", rt)):
        bad = np.flatnonzero(~(arr > 0))
        if bad.size:
            raise ValidationError(f"line {lines[bad[0]]}: {name} price must be positive, got {arr[bad[0]]}")
    order = np.argsort(stamps, kind="stable")
    stamps, da, rt, lines = stamps[order], da[order], rt[order], lines[order]
    dup = np.flatnonzero(np.diff(stamps).astype(int) == 0)
    if dup.size:
        raise ParseError(f"line {lines[dup[0] + 1]}: duplicate timestamp {format_timestamp(stamps[dup[0]])}")
    return HourlyPriceSeries(stamps, da, rt)


def _read_load_table(path) -> dict[str, dict[np.datetime64, float]]:
    per_consumer: dict[str, dict[np.datetime64, float]] = {}
    for line, row in _read_rows(path, LOAD_HEADER):
        ts = _parse_timestamp(row[0], line)
        cid = row[1].strip()
        if not cid:
            raise ParseError(f"line {line}: empty consumer_id")
        value = _parse_float(row[2], line, "load_mwh")
        if not value >= 0:
            raise ValidationError(f"line {line}: negative load {value} for consumer {cid}")
        series = per_consumer.setdefault(cid, {})
        if ts in series:
            raise ValidationError(f"line {line}: duplicate consumer_id {cid} at {format_timestamp(ts)}")
        series[ts] = value
    if not per_consumer:
        raise ParseError(f"{path}: no data rows")
    return per_consumer


def _align(per_consumer, wanted: np.ndarray, what: str) -> list[LoadProfile]:
    profiles = []
    for cid, series in per_consumer.items():
        if len(series) != len(wanted):
            raise AlignmentError(f"consumer {cid} has {len(series)} hours, {what} have {len(wanted)}")
        try:
            loads = [series[t] for t in wanted]
        except KeyError as exc:
            raise AlignmentError(
                f"consumer {cid} has no load at {format_timestamp(exc.args[0])}"
            ) from None
        profiles.append(LoadProfile(cid, loads))
    return profiles


def load_profiles_csv(path, prices: HourlyPriceSeries) -> list[LoadProfile]:
    """Read a long-format loads CSV and align every consumer to ``prices.timestamps``."""
    return _align(_read_load_table(path), prices.timestamps, "prices")


def load_profiles_table(path) -> tuple[np.ndarray, list[LoadProfile]]:
    """Read a long-format loads CSV on its own time axis.

    The axis is the sorted union of all timestamps; it must be gap-free and
    every consumer must cover all of it.
    """
    per_consumer = _read_load_table(path)
    stamps = np.array(sorted({t for series in per_consumer.values() for t in series}),
                      dtype="datetime64[h]")
    gaps = missing_hours(stamps)
    if gaps:
        raise GapError(format_timestamp(t) for t in gaps)
    return stamps, _align(per_consumer, stamps, "the file's timestamps")


def _atomic_write_rows(path, header: Iterable[str], rows: Iterable[Sequence[str]]) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def write_price_csv(path, prices: HourlyPriceSeries) -> None:
    rows = (
        (format_timestamp(t), f"{d:.6f}", f"{r:.6f}")
        for t, d, r in zip(prices.timestamps, prices.day_ahead, prices.real_time)
    )
    _atomic_write_rows(path, PRICE_HEADER, rows)


def write_profiles_csv(path, timestamps: np.ndarray, profiles: Sequence[LoadProfile]) -> None:
    def rows():
        for k, t in enumerate(timestamps):
            stamp = format_timestamp(t)
            for p in profiles:
                yield stamp, p.consumer_id, f"{p.loads[k]:.6f}"

    _atomic_write_rows(path, LOAD_HEADER, rows())


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def hourly_timestamps(hours: int, start=DEFAULT_START) -> np.ndarray:
    return np.datetime64(start, "h") + np.arange(hours) * ONE_HOUR


def _hour_of_day(timestamps: np.ndarray) -> np.ndarray:
    return (timestamps - timestamps.astype("datetime64[D]")).astype(int)


def synth_prices(hours: int, mean_da: float = 30.0, rt_sigma: float = 5.0, seed: int = 0,
                 start=DEFAULT_START) -> HourlyPriceSeries:
    """Diurnal day-ahead prices with real-time prices drawn normally around them."""
    if hours <= 0:
        raise ValidationError("cannot synthesise an empty price series (hours must be > 0)")
    if not mean_da > 0:
        raise ValidationError("mean_da must be positive")
    if not rt_sigma >= 0:
        raise ValidationError("rt_sigma must be non-negative")
    stamps = hourly_timestamps(hours, start)
    day_ahead = mean_da * DIURNAL_TEMPLATE[_hour_of_day(stamps)]
    if rt_sigma == 0:
        real_time = day_ahead.copy()
    else:
        rng = np.random.default_rng(seed)
        real_time = np.maximum(day_ahead + rng.normal(0.0, rt_sigma, hours), PRICE_FLOOR)
    return HourlyPriceSeries(stamps, day_ahead, real_time)


def synth_loads(num_consumers: int, hours: int, seed: int = 0, noise: float = 0.05,
                start=DEFAULT_START) -> list[LoadProfile]:
    """Consumer profiles: base level + daily sinusoid + weekly sinusoid + relative noise.

    ``noise`` is the standard deviation of the hourly noise as a fraction of the
    consumer's base level. Loads are clipped at zero.
    """
    if num_consumers < 1:
        raise ValidationError("num_consumers must be >= 1")
    if hours < 1:
        raise ValidationError("hours must be >= 1")
    if noise < 0:
        raise ValidationError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    stamps = hourly_timestamps(hours, start)
    hod = _hour_of_day(stamps)
    how = (hod + 24 * ((stamps.astype("datetime64[D]").astype(int) + 3) % 7))  # Monday = 0
    profiles = []
    width = len(str(num_consumers))
    for i in range(num_consumers):
        base = rng.uniform(1.0, 5.0)
        daily_amp = rng.uniform(0.15, 0.35)
        weekly_amp = rng.uniform(0.05, 0.15)
        daily_phase = rng.uniform(0, 2 * np.pi)
        weekly_phase = rng.uniform(0, 2 * np.pi)
        shape = (
            1.0
            + daily_amp * np.sin(2 * np.pi * hod / 24 + daily_phase)
            + weekly_amp * np.sin(2 * np.pi * how / 168 + weekly_phase)
        )
        loads = base * shape
        if noise > 0:
            loads = loads + rng.normal(0.0, noise * base, hours)
        else:
            rng.normal(0.0, 1.0, hours)  # keep per-consumer stream positions independent of noise
        profiles.append(LoadProfile(f"c{i:0{width}d}", np.maximum(loads, 0.0)))
    return profiles


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Inputs for a multi-round simulation.

    File form is an INI ``[scenario]`` section whose keys are the field names
    below; ``mape_range`` is written ``low, high``. Unset data paths mean
    synthetic prices/loads generated from ``rng_seed``.
    """

    num_consumers: int = 100
    horizon_hours: int = 3600
    num_rounds: int = 50
    mape_range: tuple[float, float] = (0.02, 0.20)
    rng_seed: int = 0
    balance_tolerance: float = 1e-9
    deviation_tolerance: float = 1e-9
    num_buckets: int = 10
    warmup_hours: int = 672
    forecast_window: int = 672
    mean_da: float = 30.0
    rt_sigma: float = 5.0
    load_noise: float = 0.05
    prices_path: str | None = None
    loads_path: str | None = None
    write_samples: bool = False
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        low, high = (float(x) for x in self.mape_range)
        object.__setattr__(self, "mape_range", (low, high))
        if not 0 < low <= high < 1:
            raise ValidationError(f"mape_range must satisfy 0 < low <= high < 1, got {self.mape_range}")
        if self.num_consumers < 1:
            raise ValidationError("num_consumers must be >= 1")
        if self.num_rounds < 1:
            raise ValidationError("num_rounds must be >= 1")
        if self.horizon_hours < 168:
            raise ValidationError("horizon_hours must be >= 168 (one weekly season)")
        if self.horizon_hours % 24:
            raise ValidationError("horizon_hours must be a whole number of days")
        if self.warmup_hours < 336 or self.warmup_hours % 24:
            raise ValidationError("warmup_hours must be whole days and >= 336")
        if self.forecast_window < 336:
            raise ValidationError("forecast_window must be >= 336 hours")
        if not 1 <= self.num_buckets:
            raise ValidationError("num_buckets must be >= 1")
        if not 0 < self.balance_tolerance < 1:
            raise ValidationError("balance_tolerance must be a small positive fraction")
        if self.deviation_tolerance < 0:
            raise ValidationError("deviation_tolerance must be non-negative")
        if not self.mean_da > 0 or self.rt_sigma < 0 or self.load_noise < 0:
            raise ValidationError("mean_da must be positive; rt_sigma and load_noise non-negative")
        if (self.prices_path is None) != (self.loads_path is None):
            raise ValidationError("prices_path and loads_path must be given together")

    @property
    def buckets(self) -> int:
        return min(self.num_buckets, self.num_consumers)

    @property
    def total_hours(self) -> int:
        return self.warmup_hours + self.horizon_hours

    def replace(self, **changes) -> "ScenarioConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_file(cls, path, **overrides) -> "ScenarioConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ValidationError(f"cannot read config file {path}")
        if not parser.has_section("scenario"):
            raise ValidationError(f"{path}: missing [scenario] section")
        values = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in parser.items("scenario"):
            if key not in types or key == "extra":
                raise ValidationError(f"{path}: unknown key {key!r}")
            values[key] = _coerce(key, raw, types[key])
        base = cls(**values)
        base_dir = os.path.dirname(os.path.abspath(path))
        for key in ("prices_path", "loads_path"):
            p = getattr(base, key)
            if p is not None and not os.path.isabs(p):
                values[key] = os.path.join(base_dir, p)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_ini(self) -> str:
        lines = ["[scenario]"]
        for f in dataclasses.fields(self):
            if f.name == "extra":
                continue
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "mape_range":
                value = f"{value[0]}, {value[1]}"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(key: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if key == "mape_range":
            parts = [float(x) for x in raw.replace(";", ",").split(",")]
            if len(parts) != 2:
                raise ValueError
            return tuple(parts)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError
        return raw or None
    except ValueError:
        raise ValidationError(f"config key {key}: cannot parse {raw!r}") from None
