"""Predictive cooperative (PCP) electricity procurement.

A cooperative bids in the day-ahead market for its members, blending their
announced loads with its own forecast, and splits the two-settlement bill so
that consumers who reduce the aggregate imbalance are rewarded and those who
add to it pay for it.
"""
from .bidding import BidSet, EffectiveBids, check_bid_axioms, effective_bid_matrix, effective_bids
from .exceptions import (
    AlignmentError,
    DataError,
    GapError,
    HorizonError,
    InsufficientHistoryError,
    ParseError,
    PcpError,
    PreconditionError,
    SettlementInconsistencyError,
    ValidationError,
)
from .market_data import HourlyPriceSeries, LoadProfile, ScenarioConfig, load_price_csv, load_profiles_csv
from .settlement import HourOutcome, Settlement, settle, settle_matrix, total_payment

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BidSet",
    "DataError",
    "EffectiveBids",
    "GapError",
    "HorizonError",
    "HourOutcome",
    "HourlyPriceSeries",
    "InsufficientHistoryError",
    "LoadProfile",
    "ParseError",
    "PcpError",
    "PreconditionError",
    "ScenarioConfig",
    "Settlement",
    "SettlementInconsistencyError",
    "ValidationError",
    "check_bid_axioms",
    "effective_bid_matrix",
    "effective_bids",
    "load_price_csv",
    "load_profiles_csv",
    "settle",
    "settle_matrix",
    "total_payment",
]
