import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiforecast.arima import (LOW_ACCURACY, TOO_SHORT, ArimaModel, ArimaOrder, SimulationSet,
                               candidate_orders, difference, has_common_factor, fit_arima, forecast, integrate,
                               select_order, simulate_features)
from spiforecast.errors import AllFeaturesExcludedError, ArimaFitError, DataError
from spiforecast.ingest import IndicatorKey

from .conftest import make_panel
from .oracles import arma_css


def ar1(phi, n, seed, sigma=0.1, burn=100):
    rng = np.random.default_rng(seed)
    e = sigma * rng.standard_normal(n + burn)
    x = np.zeros(n + burn)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + e[t]
    return x[burn:]


# -- differencing ---------------------------------------------------------------

def test_difference_examples():
    assert list(difference([1, 3, 6], 1)) == [2, 3]
    assert not difference(np.full(5, 7.0), 1).any()
    assert list(difference([1, 3, 6], 0)) == [1, 3, 6]
    with pytest.raises(DataError):
        difference([1.0, 2.0], 2)


@settings(max_examples=60)
@given(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=30), st.sampled_from([1, 2]))
def test_integrate_difference_round_trip(xs, d):
    s = np.array(xs)
    back = integrate(difference(s, d), s[:d], d)
    assert np.allclose(back, s[d:], rtol=1e-12, atol=1e-12 * max(1.0, np.abs(s).max()))


def test_integrate_needs_anchor():
    with pytest.raises(DataError):
        integrate([1.0], [2.0], 2)


# -- fitting --------------------------------------------------------------------

def test_ar1_recovery():
    model = fit_arima(ar1(0.6, 500, seed=0), ArimaOrder(1, 0, 0))
    assert abs(model.phi[0] - 0.6) <= 0.05


def test_constant_series():
    model = fit_arima(np.full(12, 4.0), ArimaOrder(0, 0, 0))
    assert model.intercept == 4.0 and model.sigma2 == 0 and model.in_sample_mape == 0
    assert model.accuracy == 100


def test_white_noise_mean():
    x = np.random.default_rng(0).standard_normal(1000)
    c = fit_arima(x, ArimaOrder(0, 0, 0)).intercept
    assert abs(c) < 0.05
    assert c == pytest.approx(x.mean(), abs=1e-12)


def test_fit_errors():
    with pytest.raises(ArimaFitError):
        fit_arima(np.arange(5.0), ArimaOrder(1, 1, 1))
    with pytest.raises(ArimaFitError):
        fit_arima(np.array([1.0, np.nan, 2, 3, 4, 5]), ArimaOrder(0, 0, 0))
    with pytest.raises(ValueError):
        ArimaOrder(3, 0, 0)


@pytest.mark.parametrize("order", [ArimaOrder(*o) for o in
                                   [(1, 0, 0), (0, 0, 1), (1, 0, 1), (2, 1, 0), (1, 1, 1), (0, 2, 2)]])
def test_css_matches_oracle_and_beats_baseline(order):
    x = np.cumsum(np.random.default_rng(2).standard_normal(40)) + 50
    if order.d == 0:
        x = ar1(0.5, 40, seed=3) + 5
    model = fit_arima(x, order)
    w = difference(x, order.d)
    t0 = order.p
    assert model.css == pytest.approx(arma_css(w, model.intercept, model.phi, model.theta, t0),
                                      rel=1e-9, abs=1e-12)
    baseline_c = w[t0:].mean() if order.d == 0 else 0.0
    assert model.css <= arma_css(w, baseline_c, [0.0] * order.p, [0.0] * order.q, t0)
    assert model.aic == pytest.approx(model.n_resid * math.log(model.css / model.n_resid)
                                      + 2 * (order.p + order.q + 1))


def test_fit_is_deterministic():
    x = ar1(0.4, 30, seed=4)
    a, b = fit_arima(x, ArimaOrder(1, 0, 1)), fit_arima(x, ArimaOrder(1, 0, 1))
    assert np.array_equal(a.theta, b.theta) and a.css == b.css


# -- order selection ----------------------------------------------------------------

def test_trend_selects_differencing():
    rng = np.random.default_rng(5)
    x = 10 + 2.0 * np.arange(30) + 0.01 * rng.standard_normal(30)
    order = select_order(x)
    assert order.d >= 1
    # independent check: the best d >= 1 AIC beats the best d = 0 AIC on the shared window
    burn = max(o.p + o.d for o in candidate_orders(len(x)))
    aics = {}
    for o in candidate_orders(len(x)):
        try:
            m = fit_arima(x, o, burn_in=burn)
        except ArimaFitError:
            continue
        if not has_common_factor(m):
            aics[o] = m.aic
    assert min(a for o, a in aics.items() if o.d >= 1) < min(a for o, a in aics.items() if o.d == 0)
    assert aics[order] == min(aics.values())


def test_iid_noise_selects_small_orders():
    hits = 0
    for seed in range(50):
        x = np.random.default_rng(100 + seed).standard_normal(100)
        o = select_order(x)
        hits += o.p + o.q <= 1
    assert hits >= 40


def test_short_series_grid():
    assert all(o.p + o.d + o.q <= 5 for o in candidate_orders(8))
    assert ArimaOrder(2, 2, 2) not in candidate_orders(8)
    select_order(np.arange(8.0) ** 1.5)
    with pytest.raises(DataError):
        select_order(np.arange(7.0))


# -- forecasting -------------------------------------------------------------------

def _model(order, c=0.0, phi=(), theta=(), last=(), tail=(), resid=()):
    return ArimaModel(ArimaOrder(*order), c, np.array(phi, float), np.array(theta, float), 0.0, 0.0,
                      0.0, np.array(last, float), np.array(tail, float), np.array(resid, float))


def test_forecast_closed_forms():
    assert list(forecast(_model((1, 0, 0), phi=[0.5], tail=[8.0]), 3)) == [4, 2, 1]
    assert list(forecast(_model((0, 0, 0), c=3.5), 4)) == [3.5] * 4
    assert list(forecast(_model((0, 1, 0), last=[7.25]), 3)) == [7.25] * 3
    with pytest.raises(ValueError):
        forecast(_model((0, 0, 0)), 0)


def test_random_walk_fit_forecasts_last_level():
    x = np.cumsum(np.random.default_rng(6).standard_normal(20))
    model = fit_arima(x, ArimaOrder(0, 1, 0))
    assert np.all(forecast(model, 4) == x[-1])


def test_forecast_uses_known_residuals():
    m = _model((0, 0, 1), c=1.0, theta=[0.5], resid=[2.0])
    assert list(forecast(m, 3)) == [2.0, 1.0, 1.0]


# -- simulate_features -------------------------------------------------------------

def _sim_panel():
    n = 14
    t = np.arange(n, dtype=float)
    noise = 1.0 + 3.0 * np.random.default_rng(7).standard_normal(n)
    cols = np.column_stack([50 + 2 * t, np.full(n, 3.0), noise, 10 + t])
    return make_panel(cols, codes=["TREND", "CONST", "NOISE", "SHORT"])


def test_simulate_filters_and_forecasts():
    ds = _sim_panel()
    counts = {"TREND": 14, "CONST": 14, "NOISE": 14, "SHORT": 6}
    sim = simulate_features(ds, [IndicatorKey(c) for c in ds.codes], [2024, 2025, 2027],
                            observed_counts=counts)
    assert [k.code for k in sim.included] == ["TREND", "CONST"]
    reasons = {k.code: r for k, r, _ in sim.excluded}
    assert reasons == {"NOISE": LOW_ACCURACY, "SHORT": TOO_SHORT}
    assert list(sim.forecasts["CONST"]) == [3.0, 3.0, 3.0]
    assert sim.models["CONST"].accuracy == 100
    assert sim.forecasts["TREND"] == pytest.approx([78, 80, 84], abs=1e-6)
    # included set is exactly the features meeting both thresholds
    for code, model in sim.models.items():
        assert (code in sim.forecasts) == (model.accuracy >= 80 and counts[code] >= 10)


def test_noise_mape_exceeds_twenty():
    ds = _sim_panel()
    sim = simulate_features(ds, [IndicatorKey("NOISE"), IndicatorKey("CONST")], [2024])
    assert sim.models["NOISE"].in_sample_mape > 20


def test_simulate_errors(tmp_path):
    ds = _sim_panel()
    with pytest.raises(AllFeaturesExcludedError):
        simulate_features(ds, [IndicatorKey("NOISE")], [2024])
    empty = simulate_features(ds, [IndicatorKey("NOISE")], [2024], allow_empty=True)
    assert empty.included == []
    with pytest.raises(DataError):
        simulate_features(ds, [IndicatorKey("TREND")], [2023])
    with pytest.raises(DataError):
        simulate_features(ds, [], [2024])


def test_simulation_parallel_matches_sequential(tmp_path):
    ds = _sim_panel()
    keys = [IndicatorKey(c) for c in ds.codes]
    a = simulate_features(ds, keys, [2024, 2025])
    b = simulate_features(ds, keys, [2024, 2025], n_jobs=3)
    a.to_csv(tmp_path / "a.csv", tmp_path / "ax.csv")
    b.to_csv(tmp_path / "b.csv", tmp_path / "bx.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "ax.csv").read_bytes() == (tmp_path / "bx.csv").read_bytes()
    assert isinstance(a, SimulationSet) and a.summary()["included"] == ["TREND", "CONST", "SHORT"]


def test_common_factor_detection():
    base = dict(order=(1, 0, 1), c=0.0)
    assert has_common_factor(_model(**base, phi=[0.9], theta=[-0.85]))
    assert not has_common_factor(_model(**base, phi=[0.9], theta=[0.5]))
    assert not has_common_factor(_model((1, 0, 0), phi=[0.9]))
