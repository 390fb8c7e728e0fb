"""Cooperative market payment and its disaggregation among consumers.

The cooperative pays ``L_e*p_d + (L_r - L_e)*p_r``. Consumers are labelled
by the sign of their own deviation ``delta_i = l_r_i - l_e_i`` against the
aggregate deviation ``Delta = sum(delta)``:

====  ==================  ==========
case  condition           role
====  ==================  ==========
1     Delta > 0, d > 0    contributor
2     Delta < 0, d < 0    contributor
3     Delta > 0, d < 0    reducer
4     Delta < 0, d > 0    reducer
====  ==================  ==========

with subcase ``a`` when ``p_r >= p_d`` and ``b`` otherwise. When the
real-time price moves in the direction that rewards the aggregate deviation
(1a/3a, 2b/4b) everyone pays the two-settlement formula on their own
effective bid. Otherwise reducers pick the cheaper of p_d and p_r for their
deviation and contributors share the resulting cost in proportion to their
deviation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import PreconditionError, SettlementInconsistencyError, ValidationError

DEVIATION_TOL = 1e-9
BALANCE_RTOL = 1e-9

BALANCED = 0
CONTRIBUTOR_CASES = (1, 2)
REDUCER_CASES = (3, 4)


def total_payment(L_e, L_r, p_d, p_r):
    """Two-settlement payment; works elementwise on arrays."""
    return L_e * p_d + (L_r - L_e) * p_r


@dataclass(frozen=True)
class HourOutcome:
    effective: np.ndarray
    realtime: np.ndarray
    p_d: float
    p_r: float

    def __post_init__(self):
        le = np.array(self.effective, dtype=float).reshape(-1)
        lr = np.array(self.realtime, dtype=float).reshape(-1)
        le.setflags(write=False)
        lr.setflags(write=False)
        object.__setattr__(self, "effective", le)
        object.__setattr__(self, "realtime", lr)
        object.__setattr__(self, "p_d", float(self.p_d))
        object.__setattr__(self, "p_r", float(self.p_r))
        if le.size < 1 or le.shape != lr.shape:
            raise ValidationError("effective and realtime loads must be non-empty and equal length")
        if np.any(~(le >= 0)) or np.any(~(lr >= 0)):
            raise ValidationError("loads must be non-negative")
        if not (self.p_d > 0 and self.p_r > 0):
            raise ValidationError("prices must be positive")

    def with_realtime(self, i: int, value: float) -> "HourOutcome":
        lr = self.realtime.copy()
        lr[i] = value
        return HourOutcome(self.effective, lr, self.p_d, self.p_r)


@dataclass(frozen=True)
class Settlement:
    total_payment: float
    individual: np.ndarray
    case_labels: tuple[str, ...]
    aggregate_deviation: float
    individual_deviation: np.ndarray
    contributor_set: tuple[int, ...]


@dataclass(frozen=True)
class SettlementBatch:
    """Settlement of H hours with N consumers each; arrays are (H, N) or (H,)."""

    payments: np.ndarray
    total: np.ndarray
    cases: np.ndarray
    price_up: np.ndarray
    aggregate_deviation: np.ndarray
    individual_deviation: np.ndarray
    contributors: np.ndarray
    misaligned: np.ndarray

    def labels(self, hour: int = 0) -> tuple[str, ...]:
        return case_labels(self.cases[hour], bool(self.price_up[hour]))


def case_labels(cases, price_up: bool) -> tuple[str, ...]:
    sub = "a" if price_up else "b"
    return tuple("balanced" if c == BALANCED else f"{c}{sub}" for c in np.asarray(cases).tolist())


def _classify(d, D, tol):
    pos = D > tol
    neg = D < -tol
    dpos = d > tol
    dneg = d < -tol
    cases = np.zeros(d.shape, dtype=np.int8)
    cases[pos[:, None] & dpos] = 1
    cases[neg[:, None] & dneg] = 2
    cases[pos[:, None] & dneg] = 3
    cases[neg[:, None] & dpos] = 4
    return cases, pos, neg


def settle_matrix(effective, realtime, p_d, p_r, tol: float = DEVIATION_TOL,
                  balance_rtol: float = BALANCE_RTOL) -> SettlementBatch:
    """Settle many hours at once. Every settlement path in the package goes through here."""
    le = np.atleast_2d(np.asarray(effective, dtype=float))
    lr = np.atleast_2d(np.asarray(realtime, dtype=float))
    pd = np.asarray(p_d, dtype=float).reshape(-1)
    pr = np.asarray(p_r, dtype=float).reshape(-1)
    if le.shape != lr.shape or pd.shape[0] != le.shape[0] or pr.shape[0] != le.shape[0]:
        raise ValidationError("settle_matrix: inconsistent shapes")

    d = lr - le
    D = d.sum(axis=1)
    cases, pos, neg = _classify(d, D, tol)
    up = pr >= pd
    misaligned = (pos & ~up) | (neg & up)

    contributors = (cases == 1) | (cases == 2)
    s_sum = np.where(contributors, d, 0.0).sum(axis=1)
    unbalanced = pos | neg
    if np.any(unbalanced & (s_sum == 0)):
        h = int(np.flatnonzero(unbalanced & (s_sum == 0))[0])
        raise SettlementInconsistencyError(
            f"hour {h}: aggregate deviation {D[h]:.3e} with no contributor above tolerance"
        )

    pd2 = pd[:, None]
    pr2 = pr[:, None]
    regular = total_payment(le, lr, pd2, pr2)

    choice = np.where(pos[:, None], np.maximum(pd2, pr2), np.minimum(pd2, pr2))
    reducer_pay = le * pd2 + d * choice
    share = np.divide(d, s_sum[:, None], out=np.zeros_like(d), where=contributors)
    contributor_pay = lr * pd2 + (D * (pr - pd))[:, None] * share
    special = np.where(contributors, contributor_pay,
                       np.where(cases == BALANCED, le * pd2, reducer_pay))
    payments = np.where(misaligned[:, None], special, regular)

    total = total_payment(le.sum(axis=1), lr.sum(axis=1), pd, pr)
    paid = payments.sum(axis=1)
    scale = np.maximum.reduce([np.ones_like(total), np.abs(total), np.abs(payments).sum(axis=1)])
    bad = np.abs(paid - total) > balance_rtol * scale
    if np.any(bad):
        h = int(np.flatnonzero(bad)[0])
        raise SettlementInconsistencyError(
            f"hour {h}: payments sum to {paid[h]!r}, market payment is {total[h]!r}"
        )
    return SettlementBatch(
        payments=payments,
        total=total,
        cases=cases,
        price_up=up,
        aggregate_deviation=D,
        individual_deviation=d,
        contributors=contributors,
        misaligned=misaligned,
    )


def classify_cases(outcome: HourOutcome, tol: float = DEVIATION_TOL):
    """Return ``(Delta, delta, labels, contributor_set)`` for one hour."""
    d = outcome.realtime - outcome.effective
    D = d.sum()
    cases, _, _ = _classify(d[None], np.array([D]), tol)
    labels = case_labels(cases[0], outcome.p_r >= outcome.p_d)
    contributors = tuple(int(i) for i in np.flatnonzero((cases[0] == 1) | (cases[0] == 2)))
    return float(D), d, labels, contributors


def settle(outcome: HourOutcome, tol: float = DEVIATION_TOL) -> Settlement:
    batch = settle_matrix(outcome.effective[None], outcome.realtime[None],
                          [outcome.p_d], [outcome.p_r], tol)
    individual = batch.payments[0]
    deviation = batch.individual_deviation[0]
    individual.setflags(write=False)
    deviation.setflags(write=False)
    return Settlement(
        total_payment=float(batch.total[0]),
        individual=individual,
        case_labels=batch.labels(0),
        aggregate_deviation=float(batch.aggregate_deviation[0]),
        individual_deviation=deviation,
        contributor_set=tuple(int(i) for i in np.flatnonzero(batch.contributors[0])),
    )


def _signs(d, D, tol):
    sd = np.where(d > tol, 1, np.where(d < -tol, -1, 0))
    sD = np.where(D > tol, 1, np.where(D < -tol, -1, 0))
    return sd, sD


def marginal_price_check(outcome: HourOutcome, i: int, h: float, tol: float = DEVIATION_TOL) -> float:
    """Central-difference derivative of consumer ``i``'s payment in its real-time load.

    The perturbation must keep both the aggregate and its own deviation on
    the same side of zero; otherwise the payment formula changes branch and
    the derivative is not defined by the axiom.
    """
    if not h > 0:
        raise ValidationError("h must be positive")
    lr_i = outcome.realtime[i]
    if lr_i - h < 0:
        raise PreconditionError(f"l_r[{i}] - h would be negative")
    up = outcome.with_realtime(i, lr_i + h)
    down = outcome.with_realtime(i, lr_i - h)
    signs = []
    for o in (outcome, up, down):
        d = o.realtime - o.effective
        sd, sD = _signs(d[i], d.sum(), tol)
        signs.append((int(sD), int(sd)))
    if signs[0][0] == 0 or signs[0][1] == 0:
        raise PreconditionError("aggregate or individual deviation is zero; its sign cannot be preserved")
    if signs[1][0] != signs[0][0] or signs[2][0] != signs[0][0]:
        raise PreconditionError("perturbation flips the sign of the aggregate deviation")
    if signs[1][1] != signs[0][1] or signs[2][1] != signs[0][1]:
        raise PreconditionError(f"perturbation flips the sign of consumer {i}'s deviation")
    p_up = settle(up, tol).individual[i]
    p_down = settle(down, tol).individual[i]
    return float((p_up - p_down) / (2 * h))


def marginal_price_matrix(effective, realtime, p_d, p_r, consumer, h, tol: float = DEVIATION_TOL):
    """Vectorised :func:`marginal_price_check` over H hours.

    ``consumer`` picks one consumer index per hour and ``h`` is a step per
    hour (or a scalar). Returns ``(derivative, valid)`` where ``valid`` marks
    hours whose perturbation preserves both signs.
    """
    le = np.atleast_2d(np.asarray(effective, dtype=float))
    lr = np.atleast_2d(np.asarray(realtime, dtype=float))
    H = le.shape[0]
    idx = np.asarray(consumer).reshape(-1)
    step = np.broadcast_to(np.asarray(h, dtype=float), (H,))
    rows = np.arange(H)

    def bumped(sign):
        out = lr.copy()
        out[rows, idx] += sign * step
        return out

    lr_up, lr_dn = bumped(1.0), bumped(-1.0)
    valid = lr_dn[rows, idx] >= 0
    base_sd, base_sD = _signs((lr - le)[rows, idx], (lr - le).sum(axis=1), tol)
    valid &= (base_sd != 0) & (base_sD != 0)
    for arr in (lr_up, lr_dn):
        dev = arr - le
        sd, sD = _signs(dev[rows, idx], dev.sum(axis=1), tol)
        valid &= (sd == base_sd) & (sD == base_sD)
    lr_dn = np.where(valid[:, None], lr_dn, lr)
    p_up = settle_matrix(le, lr_up, p_d, p_r, tol).payments[rows, idx]
    p_dn = settle_matrix(le, lr_dn, p_d, p_r, tol).payments[rows, idx]
    deriv = (p_up - p_dn) / (2 * step)
    return deriv, valid
