"""ARIMA(p, d, q) fitting by conditional sum of squares, order search and
forward simulation of indicator series.

Model on the d-times differenced series ``w``::

    w_t = c + sum_i phi_i w_{t-i} + sum_j theta_j e_{t-j} + e_t

The intercept ``c`` is estimated only when ``d == 0`` unless overridden, so a
fitted (0, 1, 0) model is a pure random walk.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np

from .edr import FeatureRanking
from .errors import AllFeaturesExcludedError, ArimaFitError, DataError
from .ingest import IndicatorKey, PanelDataset

MAX_ORDER = 2
# Inverse AR/MA roots must lie within this radius; excludes unit-root fits.
ROOT_RADIUS = 0.99
_AIC_FLOOR = 1e-12
COMMON_ROOT_TOL = 0.2  # AR and MA inverse roots this close nearly cancel


@dataclass(frozen=True, order=True)
class ArimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0

    def __post_init__(self):
        for name in ("p", "d", "q"):
            v = getattr(self, name)
            if not 0 <= v <= MAX_ORDER:
                raise ValueError(f"{name}={v} outside 0..{MAX_ORDER}")

    def __str__(self):
        return f"({self.p},{self.d},{self.q})"


@dataclass
class ArimaModel:
    order: ArimaOrder
    intercept: float
    phi: np.ndarray
    theta: np.ndarray
    sigma2: float
    aic: float
    in_sample_mape: float
    last_values: np.ndarray  # last d levels, anchors integration
    diff_tail: np.ndarray    # last p values of the differenced series
    resid_tail: np.ndarray   # last q residuals
    css: float = 0.0
    n_resid: int = 0

    @property
    def accuracy(self) -> float:
        return 100.0 - self.in_sample_mape


# -- differencing ------------------------------------------------------------

def difference(series, d: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if len(x) < d + 1:
        raise DataError(f"series of length {len(x)} too short to difference {d} times")
    return np.diff(x, n=d) if d else x.copy()


def integrate(diffs, last_values, d: int) -> np.ndarray:
    """Undo ``d`` differences.

    ``last_values`` are the original-scale values immediately preceding the
    first entry of ``diffs`` (at least ``d`` of them; only the last ``d`` are used).
    """
    cur = np.asarray(diffs, dtype=float)
    if d == 0:
        return cur.copy()
    anchor = np.asarray(last_values, dtype=float)
    if len(anchor) < d:
        raise DataError(f"need {d} anchor values to integrate, got {len(anchor)}")
    anchor = anchor[-d:]
    for k in range(d - 1, -1, -1):
        start = np.diff(anchor, n=k)[-1]
        cur = start + np.cumsum(cur)
    return cur


# -- CSS objective and simplex refinement -----------------------------------

@numba.njit(cache=True)
def _inside(a1, a2, r):
    """Both roots of ``z^2 - a1 z - a2`` strictly inside the disk of radius ``r``."""
    b1 = a1 / r
    b2 = a2 / (r * r)
    return b1 + b2 < 1.0 and b2 - b1 < 1.0 and abs(b2) < 1.0


@numba.njit(cache=True)
def _admissible(x, p, q, has_c):
    # AR stationarity and MA invertibility, with inverse roots kept inside ROOT_RADIUS
    o = 1 if has_c else 0
    a1 = x[o] if p >= 1 else 0.0
    a2 = x[o + 1] if p >= 2 else 0.0
    if p and not _inside(a1, a2, ROOT_RADIUS):
        return False
    o += p
    b1 = -x[o] if q >= 1 else 0.0
    b2 = -x[o + 1] if q >= 2 else 0.0
    if q and not _inside(b1, b2, ROOT_RADIUS):
        return False
    return True


@numba.njit(cache=True)
def _residuals(x, w, p, q, has_c):
    m = w.shape[0]
    e = np.zeros(m)
    c = x[0] if has_c else 0.0
    o = 1 if has_c else 0
    for t in range(p, m):
        pred = c
        for i in range(p):
            pred += x[o + i] * w[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= p:
                pred += x[o + p + j] * e[t - 1 - j]
        e[t] = w[t] - pred
    return e


@numba.njit(cache=True)
def _css(x, w, p, q, has_c, t0):
    if not _admissible(x, p, q, has_c):
        return np.inf
    e = _residuals(x, w, p, q, has_c)
    s = 0.0
    for t in range(t0, w.shape[0]):
        s += e[t] * e[t]
    if not np.isfinite(s):
        return np.inf
    return s


@numba.njit(cache=True)
def _nelder_mead(x0, step, w, p, q, has_c, t0, maxiter, xatol, fatol):
    k = x0.shape[0]
    sim = np.empty((k + 1, k))
    fs = np.empty(k + 1)
    sim[0] = x0
    for i in range(k):
        sim[i + 1] = x0
        sim[i + 1, i] += step[i]
    for i in range(k + 1):
        fs[i] = _css(sim[i], w, p, q, has_c, t0)
    for _ in range(maxiter):
        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]
        spread_f = 0.0
        spread_x = 0.0
        for i in range(1, k + 1):
            spread_f = max(spread_f, abs(fs[i] - fs[0]))
            for j in range(k):
                spread_x = max(spread_x, abs(sim[i, j] - sim[0, j]))
        if spread_x <= xatol and spread_f <= fatol:
            break
        cen = np.zeros(k)
        for i in range(k):
            cen += sim[i]
        cen /= k
        xr = cen + (cen - sim[k])
        fr = _css(xr, w, p, q, has_c, t0)
        if fr < fs[0]:
            xe = cen + 2.0 * (cen - sim[k])
            fe = _css(xe, w, p, q, has_c, t0)
            if fe < fr:
                sim[k] = xe
                fs[k] = fe
            else:
                sim[k] = xr
                fs[k] = fr
        elif fr < fs[k - 1]:
            sim[k] = xr
            fs[k] = fr
        else:
            if fr < fs[k]:
                xc = cen + 0.5 * (xr - cen)
                fc = _css(xc, w, p, q, has_c, t0)
                accept = fc <= fr
            else:
                xc = cen + 0.5 * (sim[k] - cen)
                fc = _css(xc, w, p, q, has_c, t0)
                accept = fc < fs[k]
            if accept:
                sim[k] = xc
                fs[k] = fc
            else:
                for i in range(1, k + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = _css(sim[i], w, p, q, has_c, t0)
    best = np.argmin(fs)
    return sim[best].copy(), fs[best]


def _lstsq(A, b):
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    return coef


def _hannan_rissanen(w, p, q, has_c, t0):
    """Initial (c, phi, theta) from a long-AR residual proxy regression."""
    m = len(w)
    base = float(w[t0:].mean()) if has_c else 0.0
    x0 = np.zeros(int(has_c) + p + q)
    if has_c:
        x0[0] = base
    if p + q == 0:
        return x0
    ehat = np.zeros(m)
    if q > 0:
        L = max(p, q) + 1
        while L > 1 and m - L < L + 2:
            L -= 1
        if m - L < L + 2:
            return x0
        A = np.column_stack([np.ones(m - L)] + [w[L - i - 1: m - i - 1] for i in range(L)])
        coef = _lstsq(A, w[L:])
        ehat[L:] = w[L:] - A @ coef
        start = max(t0, L + q)
    else:
        start = t0
    rows = m - start
    ncoef = int(has_c) + p + q
    if rows < ncoef + 1:
        return x0
    cols = [np.ones(rows)] if has_c else []
    cols += [w[start - i - 1: m - i - 1] for i in range(p)]
    cols += [ehat[start - j - 1: m - j - 1] for j in range(q)]
    coef = _lstsq(np.column_stack(cols), w[start:])
    return coef if np.all(np.isfinite(coef)) else x0


def _mape_or_inf(actual, predicted) -> float:
    actual = np.asarray(actual, dtype=float)
    if actual.size == 0:
        return 0.0
    if np.any(actual == 0):
        return math.inf
    return float(np.mean(np.abs((actual - predicted) / actual)) * 100.0)


def fit_arima(series, order: ArimaOrder, *, include_intercept: bool | None = None,
              burn_in: int | None = None) -> ArimaModel:
    """Fit an ARIMA model by conditional sum of squares.

    Hannan-Rissanen estimates seed a Nelder-Mead refinement of the CSS; the
    intercept-only (or zero) model is kept as a fallback so the returned CSS
    never exceeds it.  Residuals are summed from level index ``burn_in``
    (default ``p + d``); a shared ``burn_in`` makes AIC comparable across orders.
    """
    x = np.asarray(series, dtype=float)
    p, d, q = order.p, order.d, order.q
    if len(x) < p + q + d + 3:
        raise ArimaFitError(f"series of length {len(x)} too short for order {order}")
    if not np.all(np.isfinite(x)):
        raise ArimaFitError("series contains non-finite values")
    has_c = (d == 0) if include_intercept is None else bool(include_intercept)
    w = np.ascontiguousarray(difference(x, d))
    m = len(w)
    t0 = max(p, (p + d if burn_in is None else burn_in) - d)
    if t0 >= m:
        raise ArimaFitError(f"burn-in {burn_in} leaves no residuals for order {order}")

    fallback = np.zeros(int(has_c) + p + q)
    if has_c:
        fallback[0] = w[t0:].mean()
    f_fallback = _css(fallback, w, p, q, has_c, t0)

    if p + q == 0:
        best, f_best = fallback, f_fallback
    else:
        x0 = _hannan_rissanen(w, p, q, has_c, t0)
        f0 = _css(x0, w, p, q, has_c, t0)
        exact = q == 0 and np.isfinite(f0)  # OLS is the exact CSS minimizer for pure AR
        if not np.isfinite(f0):
            x0, f0 = fallback, f_fallback
        if exact:
            best, f_best = x0, f0
        else:
            sd = float(w.std()) or 1.0
            step = np.where(np.abs(x0) > 1e-8, 0.05 * np.abs(x0), 0.1)
            if has_c:
                step[0] = max(0.05 * abs(x0[0]), 0.1 * sd)
            tol = 1e-12 * max(f0, 1e-300)
            best, f_best = _nelder_mead(x0, step, w, p, q, has_c, t0, 400 * len(x0), 1e-9, tol)
            restart_step = np.maximum(0.02 * np.abs(best), 0.02)
            if has_c:
                restart_step[0] = max(0.02 * abs(best[0]), 0.02 * sd)
            best, f_best = _nelder_mead(best, restart_step, w, p, q, has_c, t0, 400 * len(x0), 1e-10, tol)
        if not f_best <= f_fallback:
            best, f_best = fallback, f_fallback

    if not (np.all(np.isfinite(best)) and np.isfinite(f_best)):
        raise ArimaFitError(f"optimizer produced non-finite parameters for order {order}")
    if not _admissible(best, p, q, has_c):
        raise ArimaFitError(f"non-stationary or non-invertible estimate for order {order}")

    c = float(best[0]) if has_c else 0.0
    o = int(has_c)
    phi = np.array(best[o:o + p], dtype=float)
    theta = np.array(best[o + p:o + p + q], dtype=float)
    e = _residuals(best, w, p, q, has_c)
    n_res = m - t0
    css = float(f_best)
    sigma2 = css / n_res
    scale = float(np.max(np.abs(x))) or 1.0
    aic = n_res * math.log(max(sigma2, _AIC_FLOOR * scale * scale)) + 2 * (p + q + 1)
    levels = x[t0 + d:]
    mape = _mape_or_inf(levels, levels - e[t0:])
    return ArimaModel(order=order, intercept=c, phi=phi, theta=theta, sigma2=sigma2, aic=aic,
                      in_sample_mape=mape, last_values=x[len(x) - d:].copy(),
                      diff_tail=w[m - p:].copy() if p else np.zeros(0),
                      resid_tail=e[m - q:].copy() if q else np.zeros(0),
                      css=css, n_resid=n_res)


def has_common_factor(model: ArimaModel, tol: float = COMMON_ROOT_TOL) -> bool:
    """True when an AR inverse root lies within ``tol`` of an MA inverse root.

    Such a model is a near-redundant parameterization of a lower order one;
    conditional least squares readily finds these on white noise.
    """
    if not (len(model.phi) and len(model.theta)):
        return False
    ar = np.roots(np.r_[1.0, -model.phi])
    ma = np.roots(np.r_[1.0, model.theta])
    return bool(np.min(np.abs(ar[:, None] - ma[None, :])) < tol)


def candidate_orders(n: int) -> list[ArimaOrder]:
    """Grid orders whose length precondition holds for a series of length ``n``."""
    return [ArimaOrder(p, d, q)
            for d in range(MAX_ORDER + 1) for p in range(MAX_ORDER + 1) for q in range(MAX_ORDER + 1)
            if n >= p + q + d + 3]


def select_order(series, *, return_model: bool = False):
    """Minimum-AIC order over p, d, q in {0, 1, 2}.

    Every candidate is scored on the same level-index window so that AIC
    values are comparable.  Fits with nearly cancelling AR and MA roots are
    skipped.  Ties prefer fewer parameters, then lower d, p, q.
    """
    x = np.asarray(series, dtype=float)
    if len(x) < 8:
        raise DataError("order selection needs a series of length >= 8")
    orders = candidate_orders(len(x))
    burn = max(o.p + o.d for o in orders)
    best = None
    for o in orders:
        try:
            model = fit_arima(x, o, burn_in=burn)
        except ArimaFitError:
            continue
        if has_common_factor(model):
            continue
        key = (model.aic, o.p + o.d + o.q, o.d, o.p, o.q)
        if best is None or key < best[0]:
            best = (key, model)
    if best is None:
        raise ArimaFitError("no ARIMA order could be fitted")
    return (best[1].order, best[1]) if return_model else best[1].order


def forecast(model: ArimaModel, h: int) -> np.ndarray:
    """Recursive point forecast ``h`` steps ahead on the level scale."""
    if h < 1:
        raise ValueError("h must be >= 1")
    p, d, q = model.order.p, model.order.d, model.order.q
    w = list(model.diff_tail)
    e = list(model.resid_tail)
    out = np.empty(h)
    for k in range(h):
        v = model.intercept
        for i in range(p):
            v += model.phi[i] * w[-1 - i]
        for j in range(q):
            if j < len(e):
                v += model.theta[j] * e[-1 - j]
        out[k] = v
        w.append(v)
        e.append(0.0)
    return integrate(out, model.last_values, d)


# -- feature simulation ------------------------------------------------------

TOO_SHORT = "too_short"
LOW_ACCURACY = "low_accuracy"


@dataclass
class SimulationSet:
    horizon_years: list[int]
    forecasts: dict[str, np.ndarray]
    excluded: list[tuple[IndicatorKey, str, str]]
    models: dict[str, ArimaModel]
    included: list[IndicatorKey] = field(default_factory=list)

    def forecast_rows(self):
        for key in self.included:
            for y, v in zip(self.horizon_years, self.forecasts[key.code]):
                yield key.code, y, float(v)

    def to_csv(self, forecast_path, exclusions_path) -> None:
        with open(forecast_path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["indicator_code", "year", "forecast_value"])
            for code, y, v in self.forecast_rows():
                wr.writerow([code, y, repr(v)])
        write_exclusions(self.excluded, exclusions_path)

    def summary(self) -> dict:
        return {
            "horizon_years": list(self.horizon_years),
            "included": [k.code for k in self.included],
            "excluded": [{"indicator_code": k.code, "reason": r, "detail": dt} for k, r, dt in self.excluded],
            "orders": {c: str(m.order) for c, m in self.models.items()},
            "accuracy": {c: m.accuracy for c, m in self.models.items()},
        }


def write_exclusions(excluded, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["indicator_code", "reason", "detail"])
        for key, reason, detail in excluded:
            wr.writerow([key.code, reason, detail])


def _simulate_one(series, n_obs, steps, min_len, min_accuracy):
    if n_obs < min_len:
        return TOO_SHORT, f"{n_obs} observed years < {min_len}", None, None
    try:
        _, model = select_order(series, return_model=True)
    except (ArimaFitError, DataError) as exc:
        return LOW_ACCURACY, f"no fit: {exc}", None, None
    if not model.accuracy >= min_accuracy:
        return LOW_ACCURACY, f"accuracy {model.accuracy:.4g} < {min_accuracy:g}", model, None
    path = forecast(model, max(steps)) if steps else np.zeros(0)
    values = np.array([path[s - 1] for s in steps])
    if not np.all(np.isfinite(values)):
        return LOW_ACCURACY, "non-finite forecast", model, None
    return None, "", model, values


def simulate_features(ds: PanelDataset, ranking: FeatureRanking | Sequence[IndicatorKey],
                      horizon_years: Sequence[int], min_len: int = 10, min_accuracy: float = 80.0,
                      *, observed_counts: Mapping[str, int] | None = None,
                      n_jobs: int = 1, allow_empty: bool = False) -> SimulationSet:
    """Fit and forecast each selected feature; exclude short or poorly fitted ones.

    ``ds`` must be complete (imputed).  ``observed_counts`` gives the number of
    genuinely observed years per feature (before imputation) for the length
    filter; it defaults to the counts in ``ds``.  Accuracy is ``100 - MAPE`` of
    in-sample one-step-ahead predictions.
    """
    keys = list(ranking.selected if isinstance(ranking, FeatureRanking) else ranking)
    if not keys:
        raise DataError("no features to simulate")
    if ds.has_missing():
        raise DataError("feature simulation requires a complete (imputed) panel")
    last = ds.years[-1]
    horizon = [int(y) for y in horizon_years]
    if any(y <= last for y in horizon):
        raise DataError(f"horizon years must follow the last panel year {last}")
    steps = [y - last for y in horizon]
    counts = dict(observed_counts) if observed_counts is not None else ds.observed_counts()

    def job(key):
        series = ds.values[:, ds.index_of(key.code)]
        return _simulate_one(series, counts.get(key.code, len(series)), steps, min_len, min_accuracy)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(job, keys))
    else:
        results = [job(k) for k in keys]

    sim = SimulationSet(horizon, {}, [], {})
    for key, (reason, detail, model, values) in zip(keys, results):
        if model is not None:
            sim.models[key.code] = model
        if reason is None:
            sim.included.append(key)
            sim.forecasts[key.code] = values
        else:
            sim.excluded.append((key, reason, detail))
    if not sim.included and not allow_empty:
        raise AllFeaturesExcludedError(
            "all features excluded by the ARIMA filter: "
            + ", ".join(f"{k.code} ({r})" for k, r, _ in sim.excluded))
    return sim
