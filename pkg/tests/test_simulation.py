import gzip

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcpcoop import simulation as S
from pcpcoop.bidding import effective_bid_matrix
from pcpcoop.exceptions import HorizonError, ValidationError
from pcpcoop.market_data import LoadProfile, ScenarioConfig, hourly_timestamps, synth_loads, synth_prices
from pcpcoop.settlement import total_payment


def make_agent(loads, mape=0.1, rho=0.5, seed=0):
    return S.ConsumerAgent(LoadProfile("a", loads), mape, rho, np.random.default_rng(seed))


def test_announce_exact_without_noise():
    agent = make_agent(np.array([3.0, 4.0, 5.0]), mape=0.0)
    assert [S.announce(agent, h) for h in range(3)] == [3.0, 4.0, 5.0]
    with pytest.raises(ValidationError):
        S.announce(agent, 3)


def test_announce_error_matches_target():
    agent = make_agent(np.full(1, 100.0), mape=0.10, seed=1)
    draws = agent.rng_stream.standard_normal(1_000_000) * agent.sigma
    a = np.maximum(100.0 * (1 + draws), 0)
    assert abs(np.mean(np.abs(a - 100.0) / 100.0) - 0.10) < 0.001
    block_agent = make_agent(np.full(1_000_000, 100.0), mape=0.10, seed=2)
    block = S.announce_block(block_agent, 0, 1_000_000)
    assert abs(np.mean(np.abs(block - 100.0) / 100.0) - 0.10) < 0.001


def test_announce_reproducible_and_block_equals_sequence():
    loads = np.linspace(1, 2, 48)
    one = make_agent(loads, seed=7)
    two = make_agent(loads, seed=7)
    seq = [S.announce(one, h) for h in range(24)]
    np.testing.assert_array_equal(S.announce_block(two, 0, 24), seq)
    assert S.agent_rng(3, 1, "c01").random() == S.agent_rng(3, 1, "c01").random()
    assert S.agent_rng(3, 1, "c01").random() != S.agent_rng(3, 2, "c01").random()


def test_update_confidence_rule():
    agent = make_agent(np.ones(1), rho=0.5)
    assert S.update_confidence(agent, 29.0, 30.0) == 0.75
    assert S.update_confidence(agent, 31.0, 30.0) == 0.25
    assert S.update_confidence(agent, 30.0, 30.0) == 0.5


def test_repeated_cheaper_converges_geometrically():
    agent = make_agent(np.ones(1), rho=0.1)
    gaps = []
    for _ in range(20):
        agent.confidence = S.update_confidence(agent, 1.0, 2.0)
        gaps.append(1 - agent.confidence)
    np.testing.assert_allclose(np.array(gaps[1:]) / np.array(gaps[:-1]), 0.5)


def small_data(N=3, days=2, exact_forecast=True, seed=0):
    T = 24 * days
    prices = synth_prices(T, seed=seed)
    profiles = synth_loads(N, T, seed=seed)
    loads = np.column_stack([p.loads for p in profiles])
    fc = loads.sum(1) if exact_forecast else loads.sum(1) * 1.05
    return S.ScenarioData(prices.timestamps, np.array(prices.day_ahead), np.array(prices.real_time),
                          loads, fc, tuple(p.consumer_id for p in profiles))


def test_truthful_exact_world_pays_day_ahead():
    data = small_data(N=4, days=2)
    state, _ = S.new_round(data, 0, 0, mape_levels=0.0)
    S.run_round(state)
    expected = data.loads * data.p_d[:, None]
    np.testing.assert_allclose(state.pcp, expected, rtol=1e-12)
    np.testing.assert_allclose(state.rtp, expected, rtol=1e-12)


def test_single_agent_without_confidence_matches_rtp():
    data = small_data(N=1, days=3, exact_forecast=False)
    state, _ = S.new_round(data, 0, 5, mape_levels=0.1, confidences=0.0)
    S.run_round(state)
    np.testing.assert_allclose(state.pcp, state.rtp, rtol=1e-12, atol=1e-9)
    assert state.agents[0].confidence == 0.0


def test_day_balances_for_hundred_consumers():
    data = small_data(N=100, days=1, exact_forecast=False)
    state, _ = S.new_round(data, 0, 0)
    announced, rho = state.pending.copy(), state.confidences
    S.run_day(state, 0)
    le, _ = effective_bid_matrix(announced, rho, data.forecasts)
    total = total_payment(le.sum(1), data.loads.sum(1), data.p_d, data.p_r)
    np.testing.assert_allclose(state.pcp.sum(1), total, rtol=1e-9)


def test_days_run_in_order_and_never_partially(monkeypatch):
    data = small_data(N=3, days=2)
    state, _ = S.new_round(data, 0, 0)
    with pytest.raises(ValidationError):
        S.run_day(state, 1)

    def boom(*a, **k):
        raise RuntimeError("settlement failed")

    monkeypatch.setattr(S, "settle_matrix", boom)
    with pytest.raises(RuntimeError):
        S.run_day(state, 0)
    assert state.days_done == 0 and np.isnan(state.pcp).all()


def test_first_update_waits_for_a_full_day():
    data = small_data(N=5, days=3, exact_forecast=False)
    state, _ = S.new_round(data, 0, 1)
    S.run_round(state)
    np.testing.assert_array_equal(state.confidence_by_day[0], state.confidence_by_day[1])
    assert not np.array_equal(state.confidence_by_day[1], state.confidence_by_day[2])
    assert np.all((state.confidence_by_day >= 0) & (state.confidence_by_day <= 1))


def test_mape_levels_permuted_per_round():
    data = small_data(N=6, days=1)
    a, rank_a = S.new_round(data, 0, 9, (0.02, 0.2))
    b, rank_b = S.new_round(data, 1, 9, (0.02, 0.2))
    levels = sorted(x.mape_target for x in a.agents)
    np.testing.assert_allclose(levels, np.linspace(0.02, 0.2, 6))
    assert not np.array_equal(rank_a, rank_b)
    assert sorted(rank_a) == list(range(6))


SMOKE = ScenarioConfig(num_consumers=4, horizon_hours=336, num_rounds=1, rng_seed=3)


def test_smoke_run():
    report = S.run_scenario(SMOKE, keep_samples=True)
    assert len(report.bucket_mape) == 4
    assert report.total_samples == 336 * 4 * 2  # two schemes
    assert all(c == 336 for c in report.sample_counts.values())
    for r in report.summary:
        assert r.p5 <= r.p25 <= r.median <= r.p75 <= r.p95
    assert report.confidence_traces.shape == (14, 4)


def test_report_is_deterministic(tmp_path):
    a = S.run_scenario(SMOKE, keep_samples=True)
    b = S.run_scenario(SMOKE, keep_samples=True)
    pa = S.write_report(a, tmp_path / "a")
    pb = S.write_report(b, tmp_path / "b")
    for x, y in zip(pa, pb):
        assert open(x, "rb").read() == open(y, "rb").read()
    header = open(pa[0]).readline().strip()
    assert header == "bucket,scheme,median,std,p5,p25,p75,p95,mape,count"
    with gzip.open(pa[2], "rt") as fh:
        assert fh.readline().strip() == "scheme,bucket,relative_price"
        assert sum(1 for _ in fh) == a.total_samples


def test_medians_near_one():
    cfg = ScenarioConfig(num_consumers=10, horizon_hours=336, num_rounds=2, rng_seed=1)
    report = S.run_scenario(cfg)
    for r in report.summary:
        assert abs(r.median - 1) < 0.02


def test_insufficient_data_fails_before_work():
    cfg = ScenarioConfig(num_consumers=2, horizon_hours=168)
    prices = synth_prices(700)
    profiles = synth_loads(2, 700)
    with pytest.raises(HorizonError):
        S.run_scenario(cfg, prices, profiles)


def test_horizon_must_start_at_midnight():
    cfg = ScenarioConfig(num_consumers=2, horizon_hours=168, warmup_hours=672)
    start = hourly_timestamps(1)[0] + np.timedelta64(5, "h")
    prices = synth_prices(cfg.total_hours, start=start)
    profiles = synth_loads(2, cfg.total_hours, start=start)
    with pytest.raises(HorizonError, match="midnight"):
        S.prepare_data(cfg, prices, profiles)


def test_bucket_of_rank():
    np.testing.assert_array_equal(S.bucket_of_rank(5, 2), [0, 0, 0, 1, 1])
    np.testing.assert_array_equal(S.bucket_of_rank(4, 4), [0, 1, 2, 3])


def test_relative_prices_skip_zero_load():
    rel = S.relative_prices(np.array([[30.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([30.0]))
    assert rel[0, 0] == 1.0 and np.isnan(rel[0, 1])


@given(rho=st.floats(0, 1), pcp=st.floats(0, 1e6), rtp=st.floats(0, 1e6))
def test_confidence_update_stays_in_unit_interval(rho, pcp, rtp):
    new = S.update_confidence(make_agent(np.ones(1), rho=rho), pcp, rtp)
    assert 0.0 <= new <= 1.0
    if pcp < rtp * (1 - 1e-9):
        assert new >= rho
    elif pcp > rtp * (1 + 1e-9):
        assert new <= rho


@given(st.integers(1, 500), st.integers(1, 20))
def test_buckets_are_balanced(n, b):
    if b > n:
        return
    counts = np.bincount(S.bucket_of_rank(n, b), minlength=b)
    assert counts.max() - counts.min() <= 1 and np.all(np.diff(S.bucket_of_rank(n, b)) >= 0)
