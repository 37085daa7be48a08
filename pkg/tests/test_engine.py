import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamcast.design import default_platform_spec
from streamcast.engine import (
    EngineConfig,
    combine,
    init_state,
    no_detection,
    run_full_sample,
    run_naive,
    run_stream,
    step,
)
from streamcast.errors import ContractError, InsufficientDataError
from streamcast.forecasters import RegressionForecaster, make_forecaster
from streamcast.losses import SAPE, pointwise_loss
from streamcast.timeseries_io import BatchWindow, batch_iterator, generate_synthetic, platform_like_config

H = 15
SPEC = default_platform_spec()
finite = st.floats(-1e6, 1e6, allow_nan=False)


def smape(report):
    ok = np.isfinite(report.actuals)
    return float(np.mean(pointwise_loss(report.actuals[ok], report.combined[ok], SAPE)))


# -- combine ------------------------------------------------------------

def test_combine_examples():
    assert combine([10.0], [20.0], 0.5)[0] == 15.0
    full, post = np.array([1.0, 2.0]), np.array([5.0, -3.0])
    np.testing.assert_array_equal(combine(full, post, 0.0), post)
    np.testing.assert_array_equal(combine(full, post, 1.0), full)


def test_combine_errors():
    with pytest.raises(ContractError):
        combine([1.0, 2.0], [1.0], 0.5)
    with pytest.raises(ContractError):
        combine([1.0], [1.0], 1.5)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20), st.floats(0, 1))
def test_combine_bounds_and_oracle(pairs, w):
    full = np.array([p[0] for p in pairs])
    post = np.array([p[1] for p in pairs])
    out = combine(full, post, w)
    assert np.all(out >= np.minimum(full, post)) and np.all(out <= np.maximum(full, post))
    oracle = [w * a + (1 - w) * b for a, b in pairs]
    np.testing.assert_allclose(out, oracle, rtol=1e-12, atol=1e-6)


# -- config -------------------------------------------------------------

def test_config_validation():
    for bad in (dict(w=-0.1), dict(w=1.1), dict(horizon=0), dict(break_date_policy="middle"),
                dict(fallback="magic"), dict(mode="fast"), dict(penalty=-1.0), dict(detector="nope")):
        with pytest.raises(ContractError):
            EngineConfig(**bad)


def test_config_round_trip():
    cfg = EngineConfig(w=0.25, penalty=12.5, detector="binseg", fallback="naive", clip_negative=True)
    items = [(k, str(v)) for k, v in cfg.to_items()]
    assert EngineConfig.from_items(items) == cfg
    assert dict(EngineConfig().to_items())["penalty"] == "auto"
    assert no_detection(cfg).penalty == math.inf
    with pytest.raises(ContractError):
        EngineConfig.from_items([("bogus", "1")])
    with pytest.raises(ContractError):
        EngineConfig.from_items([("w", "half")])


# -- replay properties --------------------------------------------------

def test_w_one_is_full(stable_stream):
    r = run_stream(stable_stream, SPEC, EngineConfig(w=1.0), 20)
    np.testing.assert_array_equal(r.combined, r.full)


@pytest.mark.parametrize("mode", ["domain", "data"])
def test_break_free_equivalence(stable_stream, mode):
    cfg = no_detection(EngineConfig(w=0.3, mode=mode))
    r = run_stream(stable_stream, SPEC, cfg, 20)
    plain = run_full_sample(stable_stream, SPEC, cfg, 20)
    assert not r.break_log
    np.testing.assert_array_equal(r.combined, plain)
    # post-break sample = full sample, so any w gives the full forecast
    np.testing.assert_array_equal(r.post, r.full)


def test_deterministic(shock_stream):
    a = run_stream(shock_stream, SPEC, EngineConfig(), 20)
    b = run_stream(shock_stream, SPEC, EngineConfig(), 20)
    for name in ("combined", "full", "post", "weights", "actuals", "issue_batches"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.break_log == b.break_log
    assert a.checkpoint == b.checkpoint


def test_one_scored_day(stable_stream):
    short = stable_stream.with_values(stable_stream.values[:21 * H])
    r = run_stream(short, SPEC, EngineConfig(), 20)
    assert r.scored_days == 1
    assert list(r.issue_batches) == [20, 21]


def test_insufficient_history(stable_stream):
    with pytest.raises(InsufficientDataError, match="21"):
        run_stream(stable_stream.with_values(stable_stream.values[:20 * H]), SPEC, EngineConfig(), 20)
    with pytest.raises(InsufficientDataError, match="initial_batches >= 8"):
        run_stream(stable_stream, SPEC, EngineConfig(), 7)


def test_every_forecast_scored_once(shock_stream):
    r = run_stream(shock_stream, SPEC, EngineConfig(), 20)
    n_days = len(shock_stream) // H
    np.testing.assert_array_equal(r.issue_batches, np.arange(20, n_days + 1))
    # actual at horizon step k of the forecast issued after batch b is observation b*H + k
    for i, b in enumerate(r.issue_batches):
        idx = b * H + np.arange(r.combined.shape[1])
        inside = idx < len(shock_stream)
        np.testing.assert_array_equal(r.actuals[i, inside], shock_stream.values[idx[inside]])
        assert np.all(np.isnan(r.actuals[i, ~inside]))
    batches, losses = r.one_day_losses(SAPE)
    assert len(batches) == r.scored_days == n_days - 20
    assert set(r.realized_losses()) == {"squared", "sape", "econ"}


def test_checkpoint_size_independent_of_length():
    short = generate_synthetic(platform_like_config(days=40), 3)
    long = generate_synthetic(platform_like_config(days=160), 3)
    a = run_stream(short, SPEC, EngineConfig(), 20).checkpoint
    b = run_stream(long, SPEC, EngineConfig(), 20).checkpoint
    assert len(a) == len(b) > 0


def test_stable_trend_beats_naive():
    for seed in (0, 1, 2):
        s = generate_synthetic(platform_like_config(days=120, trend_slope=0.01), seed)
        assert smape(run_stream(s, SPEC, EngineConfig(), 30)) <= smape(run_naive(s, 105, 30))


# -- step ---------------------------------------------------------------

def _state(stream, cfg, initial=20):
    fc = make_forecaster(SPEC, stream, cfg)
    state, _ = init_state(fc, stream.values[:initial * H], H, cfg)
    return state, batch_iterator(stream)[initial:]


def test_out_of_order_batch(stable_stream):
    cfg = EngineConfig()
    state, batches = _state(stable_stream, cfg)
    with pytest.raises(ContractError):
        step(state, batches[1], cfg)
    b = batches[0]
    with pytest.raises(ContractError):
        step(state, BatchWindow(b.batch_index, b.start, b.observations[:5], b.timestamps[:5]), cfg)


def test_pending_bounded(stable_stream):
    cfg = EngineConfig()
    state, batches = _state(stable_stream, cfg)
    for b in batches:
        step(state, b, cfg)
        assert len(state.pending) <= math.ceil(cfg.horizon / H)


def test_reset_correctness(shock_stream):
    cfg = EngineConfig()
    state, batches = _state(shock_stream, cfg)
    n_breaks = 0
    for b in batches:
        _, events = step(state, b, cfg)
        for ev in events:
            if ev["type"] == "break":
                n_breaks += 1
                brk = ev["event"]
                assert brk.post_break_start == brk.break_batch * H
                assert brk.break_batch < b.batch_index
        ls = state.loss_stream
        if state.break_log:
            last = state.break_log[-1]
            # only losses of batches after the break remain
            assert ls.start_batch == last.break_batch + 1
            assert ls.start_batch + len(ls) - 1 == b.batch_index
            post = state.forecaster.post_state
            # during warm-up the stale post model is unused (weight collapses to 1)
            if state.pending[-1].weight == cfg.w and not state.forecaster.post_shares_full:
                assert post.observation_count == state.forecaster.n_observed - state.post_break_start
    assert n_breaks >= 1


def test_warm_up_fallback_event(shock_stream):
    cfg = EngineConfig()
    state, batches = _state(shock_stream, cfg)
    kinds = set()
    for b in batches:
        _, events = step(state, b, cfg)
        kinds |= {e.get("kind") for e in events if e["type"] == "fallback"}
    assert kinds == {"full_only"}


@pytest.mark.parametrize("fallback", ["naive", "lag1_lasso"])
def test_other_fallbacks_run(shock_stream, fallback):
    r = run_stream(shock_stream, SPEC, EngineConfig(fallback=fallback), 20)
    assert np.all(np.isfinite(r.combined))
    assert np.any(r.post != r.full)


class _BrokenPost(RegressionForecaster):
    def fit_post(self, start):
        raise RuntimeError("boom")


def test_forecaster_failure_degrades(stable_stream):
    cfg = EngineConfig(w=0.5)
    fc = _BrokenPost(SPEC, make_forecaster(SPEC, stable_stream, cfg).frame)
    events = []
    r = run_stream(stable_stream, SPEC, cfg, 20, forecaster=fc, on_event=lambda sid, ev: events.append(ev))
    np.testing.assert_array_equal(r.combined, r.full)
    assert r.errors and all("boom" in e["message"] for e in r.errors)
    assert any(e["type"] == "error" for e in events)


def test_shock_detected_within_bound():
    for seed in range(5):
        s = generate_synthetic(platform_like_config(days=120, shocks=((60, 3.0),)), seed)
        r = run_stream(s, SPEC, EngineConfig(), 20)
        after = [ev for ev in r.break_log if ev.detection_batch > 60]
        assert after and after[0].detection_batch - 60 <= 14


@pytest.mark.xfail(strict=True, reason="the default detector also alarms on stable stretches; "
                   "see the decisions ledger for measured rates")
def test_shock_gives_exactly_one_break():
    for seed in range(5):
        s = generate_synthetic(platform_like_config(days=120, shocks=((60, 3.0),)), seed)
        r = run_stream(s, SPEC, EngineConfig(), 20)
        assert len(r.break_log) == 1
        assert r.break_log[0].detection_batch - 60 <= 14
