"""Effective day-ahead bids from announced loads, confidence factors and the cooperative forecast.

Each consumer's effective bid moves the announcement toward the cooperative's
forecast in proportion to the square of its confidence::

    l_e[i] = l_a[i] + rho[i]**2 * l_a[i] * (L_f - L_a) / sum_j(rho[j] * l_a[j])

When ``sum_j rho[j] * l_a[j]`` is zero the announcements are returned
unchanged, which is also the limit of the formula as every rho goes to 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

# The monotonicity check uses a central finite difference in rho with this step.
FD_STEP = 1e-5
# Slack for alpha in [0, 1]; alpha is a ratio of rounded sums.
ALPHA_SLACK = 1e-12


def _vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BidSet:
    """Announced loads, confidence factors and cooperative forecast for one hour."""

    announced: np.ndarray
    confidence: np.ndarray
    forecast: float

    def __post_init__(self):
        announced = _vector(self.announced, "announced")
        confidence = _vector(self.confidence, "confidence")
        object.__setattr__(self, "announced", announced)
        object.__setattr__(self, "confidence", confidence)
        object.__setattr__(self, "forecast", float(self.forecast))
        if announced.size < 1:
            raise ValidationError("a bid set needs at least one consumer")
        if announced.shape != confidence.shape:
            raise ValidationError("announced and confidence must have the same length")
        if np.any(~(announced >= 0)):
            raise ValidationError("announced loads must be non-negative")
        if np.any(~((confidence >= 0) & (confidence <= 1))):
            raise ValidationError("confidence factors must lie in [0, 1]")
        if not self.forecast >= 0:
            raise ValidationError("forecast must be non-negative")

    @property
    def total_announced(self) -> float:
        return float(self.announced.sum())


@dataclass(frozen=True)
class EffectiveBids:
    individual: np.ndarray
    aggregate: float
    alpha: float


def effective_bid_matrix(announced, confidence, forecast, return_adjustment: bool = False):
    """Vectorised effective bids over many hours.

    ``announced`` is (H, N); ``confidence`` is (N,) or (H, N); ``forecast`` is (H,).
    Returns ``(individual, alpha)`` with shapes (H, N) and (H,), plus the
    per-consumer adjustment ``individual - announced`` when requested (computed
    directly, not by subtraction, so tiny shifts keep their sign).
    """
    la = np.atleast_2d(np.asarray(announced, dtype=float))
    rho = np.broadcast_to(np.asarray(confidence, dtype=float), la.shape)
    lf = np.asarray(forecast, dtype=float).reshape(-1)
    if lf.shape[0] != la.shape[0]:
        raise ValidationError("forecast must have one value per hour")
    total = la.sum(axis=1)
    gap = lf - total
    weight = rho * la
    denom = weight.sum(axis=1)
    ok = denom > 0
    # Shares are in [0, 1], so tiny denominators cannot overflow.
    share = np.divide(weight, denom[:, None], out=np.zeros_like(weight), where=ok[:, None])
    adjustment = rho * share * gap[:, None]
    individual = la + adjustment
    shift = adjustment.sum(axis=1)
    moved = ok & (gap != 0)
    alpha = np.divide(shift, gap, out=np.zeros_like(gap), where=moved)
    if return_adjustment:
        return individual, alpha, adjustment
    return individual, alpha


def effective_bids(bids: BidSet) -> EffectiveBids:
    individual, alpha = effective_bid_matrix(
        bids.announced[None, :], bids.confidence, [bids.forecast]
    )
    row = individual[0]
    row.setflags(write=False)
    return EffectiveBids(individual=row, aggregate=float(row.sum()), alpha=float(alpha[0]))


@dataclass(frozen=True)
class BidAxiomReport:
    boundedness: bool
    sign_agreement: bool
    monotonicity: bool
    vacuous: bool
    """True when the sign and monotonicity checks had nothing to test (L_f == L_a or no weight)."""

    @property
    def all_pass(self) -> bool:
        return self.boundedness and self.sign_agreement and self.monotonicity


def bid_axiom_flags(announced, confidence, forecast, eps: float = FD_STEP):
    """Check the three bid axioms for a batch of B bid sets with N consumers each.

    Returns boolean arrays ``(a1, a2, a3, vacuous)`` of shape (B,).

    Monotonicity is checked on the adjustment in the direction of the
    forecast gap: ``sign(L_f - L_a) * d(l_e - l_a)/d rho_i > 0``. Read
    literally the derivative is negative whenever L_f < L_a, because the
    whole adjustment then points down; what grows with rho is its size.
    """
    la = np.atleast_2d(np.asarray(announced, dtype=float))
    rho = np.atleast_2d(np.broadcast_to(np.asarray(confidence, dtype=float), la.shape))
    lf = np.asarray(forecast, dtype=float).reshape(-1)
    b, n = la.shape

    _, alpha, adj = effective_bid_matrix(la, rho, lf, return_adjustment=True)
    a1 = (alpha >= -ALPHA_SLACK) & (alpha <= 1 + ALPHA_SLACK)

    gap = lf - la.sum(axis=1)
    shift = adj.sum(axis=1)
    active = (rho > 0) & (la > 0)
    same_sign = (np.sign(adj) == np.sign(shift)[:, None]) | (adj == 0)
    a2 = np.all(same_sign | ~active, axis=1)

    # Perturb rho_i up and down for every i in one (B, 2N, N) batch.
    hi = np.clip(rho + eps, 0.0, 1.0)
    lo = np.clip(rho - eps, 0.0, 1.0)
    eye = np.eye(n, dtype=bool)
    rho_hi = np.where(eye[None], hi[:, None, :], rho[:, None, :])
    rho_lo = np.where(eye[None], lo[:, None, :], rho[:, None, :])
    stacked_rho = np.concatenate([rho_hi, rho_lo], axis=1).reshape(b * 2 * n, n)
    stacked_la = np.repeat(la, 2 * n, axis=0)
    stacked_lf = np.repeat(lf, 2 * n)
    _, _, adj_p = effective_bid_matrix(stacked_la, stacked_rho, stacked_lf, return_adjustment=True)
    adj_p = adj_p.reshape(b, 2, n, n)
    own_hi = np.diagonal(adj_p[:, 0], axis1=1, axis2=2)
    own_lo = np.diagonal(adj_p[:, 1], axis1=1, axis2=2)
    slope = (own_hi - own_lo) / (hi - lo)
    directed = np.sign(gap)[:, None] * slope
    needs = (la > 0) & (gap != 0)[:, None]
    a3 = np.all((directed > 0) | ~needs, axis=1)

    denom = (rho * la).sum(axis=1)
    vacuous = (gap == 0) | (denom == 0)
    return a1, a2, a3, vacuous


def check_bid_axioms(bids: BidSet, eff: EffectiveBids | None = None, eps: float = FD_STEP) -> BidAxiomReport:
    """Boundedness, sign agreement and monotonicity for one bid set.

    ``eff`` is accepted for symmetry with the call site; the check
    recomputes the bids itself so that the finite differences and the
    point value come from the same arithmetic.
    """
    if eff is not None:
        ref = effective_bids(bids)
        if not np.allclose(ref.individual, eff.individual, rtol=1e-12, atol=1e-12):
            raise ValidationError("eff does not match effective_bids(bids)")
    a1, a2, a3, vac = bid_axiom_flags(bids.announced[None], bids.confidence[None], [bids.forecast], eps)
    return BidAxiomReport(bool(a1[0]), bool(a2[0]), bool(a3[0]), bool(vac[0]))
