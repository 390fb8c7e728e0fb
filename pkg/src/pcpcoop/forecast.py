"""Double-seasonal exponential smoothing with an AR(1) residual term.

The k-step forecast from time t is::

    L_hat(t+k) = b_t + d[t - 24 + k1] + w[t - 168 + k2] + phi**k * e_t

with k1 = (k-1) % 24 + 1 and k2 = (k-1) % 168 + 1. Both seasonal rings are
stored so that position 0 holds the index due at t+1. Each observation y
updates the state in error-correction form::

    e   = y - (b + d[0] + w[0] + phi * e_prev)
    b  += lam_b * e;  d[0] += lam_d * e;  w[0] += lam_w * e
    rotate both rings by one hour; e_prev = e

Parameters are re-estimated once a day by minimising the in-sample sum of
squared one-step errors over a trailing window with a bounded Nelder-Mead
search started from the previous parameters and a few fixed points.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .exceptions import InsufficientHistoryError, ValidationError

log = logging.getLogger(__name__)

DAY = 24
WEEK = 168
MIN_HISTORY = 2 * WEEK
REFIT_WINDOW = 672
REFIT_HOUR = 11
MAX_LEAD = 36
MAX_EVALS = 2000

DEFAULT_SMOOTHING = (0.05, 0.1, 0.1)
DEFAULT_PHI = 0.5
BOUNDS = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 0.99))
MULTISTART = (
    (0.01, 0.05, 0.05, 0.3),
    (0.10, 0.20, 0.20, 0.6),
    (0.30, 0.40, 0.40, 0.9),
    (0.05, 0.50, 0.10, 0.1),
)


def _ring(values, size: int) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    if arr.shape != (size,):
        raise ValidationError(f"seasonal index must have length {size}, got {arr.shape[0]}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ForecastState:
    level: float
    daily_idx: np.ndarray
    weekly_idx: np.ndarray
    last_residual: float = 0.0
    phi: float = DEFAULT_PHI
    smoothing: tuple[float, float, float] = DEFAULT_SMOOTHING
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "daily_idx", _ring(self.daily_idx, DAY))
        object.__setattr__(self, "weekly_idx", _ring(self.weekly_idx, WEEK))
        object.__setattr__(self, "level", float(self.level))
        object.__setattr__(self, "last_residual", float(self.last_residual))
        object.__setattr__(self, "phi", float(self.phi))
        smoothing = tuple(float(x) for x in self.smoothing)
        object.__setattr__(self, "smoothing", smoothing)
        if len(smoothing) != 3 or not all(0.0 <= x <= 1.0 for x in smoothing):
            raise ValidationError("smoothing coefficients must be three values in [0, 1]")
        if not 0.0 <= self.phi < 1.0:
            raise ValidationError("phi must lie in [0, 1)")

    @property
    def params(self) -> np.ndarray:
        return np.array([*self.smoothing, self.phi])

    def with_params(self, params) -> "ForecastState":
        lam_b, lam_d, lam_w, phi = (float(x) for x in params)
        return replace(self, smoothing=(lam_b, lam_d, lam_w), phi=phi)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _run(y, level, daily, weekly, resid, lam_b, lam_d, lam_w, phi):
    """Run the recursion over ``y`` in place on ``daily``/``weekly``; rings start at position 0."""
    sse = 0.0
    for t in range(y.shape[0]):
        jd = t % 24
        jw = t % 168
        e = y[t] - (level + daily[jd] + weekly[jw] + phi * resid)
        sse += e * e
        level += lam_b * e
        daily[jd] += lam_d * e
        weekly[jw] += lam_w * e
        resid = e
    return sse, level, resid


@njit(cache=True)
def _sse(params, y, level, daily, weekly):
    d = daily.copy()
    w = weekly.copy()
    sse, _, _ = _run(y, level, d, w, 0.0, params[0], params[1], params[2], params[3])
    return sse


def _as_window(window) -> np.ndarray:
    y = np.asarray(window, dtype=float).reshape(-1)
    if y.size < MIN_HISTORY:
        raise InsufficientHistoryError(
            f"need at least {MIN_HISTORY} hours (two weekly cycles), got {y.size}"
        )
    if not np.all(np.isfinite(y)):
        raise ValidationError("window contains non-finite loads")
    return y


def _decompose(y: np.ndarray):
    """Mean level, then hour-of-day means, then hour-of-week means of what is left.

    Indices are by position relative to the first element of ``y``.
    """
    level = float(y.mean())
    t = np.arange(y.size)
    resid = y - level
    daily = np.bincount(t % DAY, weights=resid, minlength=DAY) / np.bincount(t % DAY, minlength=DAY)
    resid = resid - daily[t % DAY]
    weekly = np.bincount(t % WEEK, weights=resid, minlength=WEEK) / np.bincount(t % WEEK, minlength=WEEK)
    return level, daily, weekly


def init_state(window, smoothing=DEFAULT_SMOOTHING, phi: float = DEFAULT_PHI) -> ForecastState:
    """Initial state positioned to forecast the hour right after ``window``."""
    y = _as_window(window)
    level, daily, weekly = _decompose(y)
    n = y.size
    return ForecastState(
        level=level,
        daily_idx=np.roll(daily, -(n % DAY)),
        weekly_idx=np.roll(weekly, -(n % WEEK)),
        last_residual=0.0,
        phi=phi,
        smoothing=smoothing,
    )


def one_step(state: ForecastState) -> float:
    return state.level + state.daily_idx[0] + state.weekly_idx[0] + state.phi * state.last_residual


def update(state: ForecastState, observed: float) -> ForecastState:
    lam_b, lam_d, lam_w = state.smoothing
    e = float(observed) - one_step(state)
    daily = state.daily_idx.copy()
    weekly = state.weekly_idx.copy()
    daily[0] += lam_d * e
    weekly[0] += lam_w * e
    return replace(
        state,
        level=state.level + lam_b * e,
        daily_idx=np.roll(daily, -1),
        weekly_idx=np.roll(weekly, -1),
        last_residual=e,
    )


def advance(state: ForecastState, observations) -> ForecastState:
    """Apply :func:`update` for each observation, using the compiled recursion."""
    y = np.asarray(observations, dtype=float).reshape(-1)
    if y.size == 0:
        return state
    daily = state.daily_idx.copy()
    weekly = state.weekly_idx.copy()
    lam_b, lam_d, lam_w = state.smoothing
    _, level, resid = _run(y, state.level, daily, weekly, state.last_residual,
                           lam_b, lam_d, lam_w, state.phi)
    n = y.size
    return replace(
        state,
        level=level,
        daily_idx=np.roll(daily, -(n % DAY)),
        weekly_idx=np.roll(weekly, -(n % WEEK)),
        last_residual=resid,
    )


def forecast(state: ForecastState, k: int) -> float:
    if not 1 <= k <= MAX_LEAD:
        raise ValidationError(f"lead must be between 1 and {MAX_LEAD} hours, got {k}")
    return (
        state.level
        + state.daily_idx[(k - 1) % DAY]
        + state.weekly_idx[(k - 1) % WEEK]
        + state.phi**k * state.last_residual
    )


def forecast_many(state: ForecastState, leads) -> np.ndarray:
    return np.array([forecast(state, int(k)) for k in leads])


def in_sample_sse(window, params) -> float:
    """Sum of squared one-step errors over ``window`` from its mean-based initialisation."""
    y = _as_window(window)
    level, daily, weekly = _decompose(y)
    return float(_sse(np.asarray(params, dtype=float), y, level, daily, weekly))


def _clip(params) -> np.ndarray:
    lo = np.array([b[0] for b in BOUNDS])
    hi = np.array([b[1] for b in BOUNDS])
    return np.clip(np.asarray(params, dtype=float), lo, hi)


def refit_daily(window, prev: ForecastState | None = None, max_evals: int = MAX_EVALS) -> ForecastState:
    """Re-estimate smoothing and AR parameters on ``window`` and return the re-run state.

    The evaluation budget is split evenly over the starting points (the
    previous parameters first). The best point found is kept even if no
    start converged, in which case ``converged`` is False on the result.
    """
    y = _as_window(window)
    level, daily, weekly = _decompose(y)
    first = prev.params if prev is not None else np.array([*DEFAULT_SMOOTHING, DEFAULT_PHI])
    starts = [_clip(first)] + [np.array(s) for s in MULTISTART]
    per_start = max(max_evals // len(starts), 10)

    def objective(x):
        return _sse(x, y, level, daily, weekly)

    best_x, best_f, best_ok = starts[0], objective(starts[0]), True
    for x0 in starts:
        f0 = objective(x0)
        res = minimize(
            objective, x0, method="Nelder-Mead", bounds=BOUNDS,
            options={"maxfev": per_start, "xatol": 1e-6, "fatol": 1e-12 * max(f0, 1.0)},
        )
        x, f = _clip(res.x), float(res.fun)
        if f0 < f:
            x, f = x0, f0
        if f < best_f:
            best_x, best_f, best_ok = x, f, bool(res.success)
    if not best_ok:
        log.debug("forecast refit stopped at the evaluation limit (SSE %.6g)", best_f)

    d = daily.copy()
    w = weekly.copy()
    _, lvl, resid = _run(y, level, d, w, 0.0, *best_x)
    n = y.size
    return ForecastState(
        level=lvl,
        daily_idx=np.roll(d, -(n % DAY)),
        weekly_idx=np.roll(w, -(n % WEEK)),
        last_residual=resid,
        phi=float(best_x[3]),
        smoothing=tuple(float(v) for v in best_x[:3]),
        converged=best_ok,
    )


def mape(actual, predicted) -> float:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ValidationError("actual and predicted must have equal lengths")
    if a.size == 0:
        raise ValidationError("mape of an empty series is undefined")
    if np.any(~(a > 0)):
        raise ValidationError("mape needs strictly positive actual values")
    return float(np.mean(np.abs(a - p) / a))


# ---------------------------------------------------------------------------
# walk-forward drivers
# ---------------------------------------------------------------------------

def walk_forward(loads, hour_of_day, start: int, window: int = REFIT_WINDOW,
                 mode: str = "dynamic", refit_hour: int = REFIT_HOUR) -> Iterator[tuple[int, ForecastState]]:
    """Yield ``(t, state)`` after the observation at index t has been absorbed, for t >= start.

    The first state is fitted on the trailing history at ``start``. In
    ``dynamic`` mode parameters are re-fitted on the trailing ``window``
    every time the clock reaches ``refit_hour``; in ``fixed`` mode the
    first fit's parameters are kept and the state is only updated.
    """
    if mode not in ("dynamic", "fixed"):
        raise ValidationError("mode must be 'dynamic' or 'fixed'")
    y = np.asarray(loads, dtype=float)
    hod = np.asarray(hour_of_day)
    if start + 1 < MIN_HISTORY:
        raise InsufficientHistoryError(f"need {MIN_HISTORY} hours before the first forecast")
    state = refit_daily(y[max(0, start + 1 - window):start + 1])
    yield start, state
    for t in range(start + 1, y.size):
        state = update(state, y[t])
        if mode == "dynamic" and hod[t] == refit_hour:
            state = refit_daily(y[max(0, t + 1 - window):t + 1], state)
        yield t, state


def rolling_forecast(loads, hour_of_day, lead: int, mode: str = "dynamic",
                     window: int = REFIT_WINDOW, refit_hour: int = REFIT_HOUR):
    """Forecast every hour ``lead`` hours ahead once ``window`` hours of history exist.

    Returns ``(target_index, predicted)``.
    """
    y = np.asarray(loads, dtype=float)
    if not 1 <= lead <= MAX_LEAD:
        raise ValidationError(f"lead must be between 1 and {MAX_LEAD}")
    if y.size < window + lead:
        raise InsufficientHistoryError(f"need more than {window + lead} hours")
    targets, preds = [], []
    for t, state in walk_forward(y, hour_of_day, window - 1, window, mode, refit_hour):
        if t + lead < y.size:
            targets.append(t + lead)
            preds.append(forecast(state, lead))
    return np.array(targets), np.array(preds)


def day_ahead_forecasts(loads, hour_of_day, first: int, stop: int, window: int = REFIT_WINDOW,
                        issue_hour: int = REFIT_HOUR, mode: str = "dynamic") -> np.ndarray:
    """Next-day forecasts issued at ``issue_hour`` for every hour in ``[first, stop)``.

    ``first`` must be midnight. The day starting at index s is forecast from
    the state at ``s - 24 + issue_hour`` with leads ``24 - issue_hour`` to
    ``47 - issue_hour`` (13 to 36 for the default 11:00 issue).
    """
    y = np.asarray(loads, dtype=float)
    hod = np.asarray(hour_of_day)
    if hod[first] != 0 or (stop - first) % DAY:
        raise ValidationError("day-ahead forecasts cover whole days starting at midnight")
    issue0 = first - DAY + issue_hour
    if issue0 + 1 < MIN_HISTORY:
        raise InsufficientHistoryError(
            f"first issue at index {issue0} has fewer than {MIN_HISTORY} hours of history"
        )
    leads = np.arange(DAY - issue_hour, 2 * DAY - issue_hour)
    out = np.empty(stop - first)
    last_issue = stop - DAY - (DAY - issue_hour)
    for t, state in walk_forward(y[:last_issue + 1], hod, issue0, window, mode, issue_hour):
        if hod[t] == issue_hour:
            day_start = t + DAY - issue_hour
            out[day_start - first:day_start - first + DAY] = forecast_many(state, leads)
    return out
