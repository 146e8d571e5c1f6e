"""Bagged regression forests and iterative forest imputation.

Trees use variance-reduction splits at midpoints between sorted distinct
values, with ``m_try`` candidate features drawn per node.  Each tree owns an
RNG stream seeded from (forest seed, tree index), so forests are identical
however the trees are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DataError
from .ingest import PanelDataset


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 100
    m_try: int | None = None  # None -> ceil(sqrt(p))
    min_leaf: int = 2
    max_iter: int = 10
    tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.m_try is not None and self.m_try < 1:
            raise ValueError("m_try must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")

    def resolved_m_try(self, p: int) -> int:
        m = self.m_try if self.m_try is not None else math.ceil(math.sqrt(p))
        return max(1, min(m, p))


# -- numba kernels -----------------------------------------------------------

@numba.njit(cache=True)
def _grow_tree(X, y, rows, m_try, min_leaf, feat, thr, left, right, value):
    """Grow one tree over ``rows`` (partitioned in place). Returns node count."""
    n, p = X.shape
    max_nodes = feat.shape[0]
    st_node = np.empty(max_nodes, np.int64)
    st_lo = np.empty(max_nodes, np.int64)
    st_hi = np.empty(max_nodes, np.int64)
    perm = np.arange(p)
    chosen = np.empty(m_try, np.int64)
    xs = np.empty(rows.shape[0])
    ys = np.empty(rows.shape[0])

    n_nodes = 1
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = rows.shape[0]
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        m = hi - lo
        s = 0.0
        for i in range(lo, hi):
            s += y[rows[i]]
        mean = s / m
        sse = 0.0
        for i in range(lo, hi):
            d = y[rows[i]] - mean
            sse += d * d
        value[node] = mean
        feat[node] = -1
        if m < 2 * min_leaf or sse <= 0.0:
            continue

        for k in range(m_try):
            r = k + np.random.randint(0, p - k)
            tmp = perm[k]
            perm[k] = perm[r]
            perm[r] = tmp
        for k in range(m_try):
            chosen[k] = perm[k]
        chosen.sort()

        best_gain = 1e-12 * sse
        best_f = -1
        best_t = 0.0
        for c in range(m_try):
            f = chosen[c]
            for i in range(m):
                xs[i] = X[rows[lo + i], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[rows[lo + order[i]]]
            sl = 0.0
            for i in range(m - 1):
                sl += ys[i]
                nl = i + 1
                nr = m - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                a = xs[order[i]]
                b = xs[order[i + 1]]
                if not (b > a):
                    continue
                sr = s - sl
                gain = sl * sl / nl + sr * sr / nr - s * s / m
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    t = a + (b - a) * 0.5
                    if not (t > a):
                        t = b
                    best_t = t
        if best_f < 0:
            continue

        # partition rows[lo:hi] by X[:, best_f] < best_t
        i = lo
        j = hi - 1
        while i <= j:
            if X[rows[i], best_f] < best_t:
                i += 1
            else:
                tmp = rows[i]
                rows[i] = rows[j]
                rows[j] = tmp
                j -= 1
        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # right pushed first so the left subtree is numbered next (preorder-ish)
        st_node[top] = n_nodes + 1
        st_lo[top] = i
        st_hi[top] = hi
        top += 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = i
        top += 1
        n_nodes += 2
    return n_nodes


@numba.njit(cache=True)
def _fit_forest(X, y, seeds, m_try, min_leaf, feat, thr, left, right, value):
    n = X.shape[0]
    rows = np.empty(n, np.int64)
    for t in range(seeds.shape[0]):
        np.random.seed(seeds[t])
        for i in range(n):
            rows[i] = np.random.randint(0, n)
        _grow_tree(X, y, rows, m_try, min_leaf, feat[t], thr[t], left[t], right[t], value[t])


@numba.njit(cache=True)
def _predict_forest(X, feat, thr, left, right, value):
    n = X.shape[0]
    T = feat.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(T):
            node = 0
            while feat[t, node] >= 0:
                if X[i, feat[t, node]] < thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += value[t, node]
        out[i] = acc / T
    return out


# -- public API --------------------------------------------------------------

@dataclass
class RandomForestModel:
    feature: np.ndarray  # (n_trees, max_nodes), -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    tree_seeds: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return self.feature.shape[0]

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        return _predict_forest(X, self.feature, self.threshold, self.left, self.right, self.value)


def tree_seeds(seed, n_trees: int) -> np.ndarray:
    """Per-tree RNG seeds derived from ``seed`` (an int or a tuple of ints)."""
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    return np.random.SeedSequence(entropy).generate_state(n_trees).astype(np.int64)


def fit_random_forest(X, y, cfg: RfConfig = RfConfig(), feature_names=None, *, seed=None) -> RandomForestModel:
    """Fit ``cfg.n_trees`` bootstrap regression trees; prediction is their mean."""
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    n, p = X.shape
    if n < 2:
        raise ValueError("random forest needs at least 2 rows")
    if p == 0:
        raise ValueError("random forest needs at least 1 feature column")
    if y.shape != (n,):
        raise ValueError("y length must equal rows(X)")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("random forest input must be complete and finite")
    seeds = tree_seeds(cfg.seed if seed is None else seed, cfg.n_trees)
    max_nodes = 2 * n - 1
    shape = (cfg.n_trees, max_nodes)
    feat = np.full(shape, -1, np.int64)
    thr = np.zeros(shape)
    left = np.full(shape, -1, np.int64)
    right = np.full(shape, -1, np.int64)
    value = np.zeros(shape)
    _fit_forest(X, y, seeds, cfg.resolved_m_try(p), cfg.min_leaf, feat, thr, left, right, value)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(p)]
    return RandomForestModel(feat, thr, left, right, value, seeds, names)


@dataclass
class ImputationReport:
    iterations_run: int
    change_norms: list[float]
    imputed_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {"iterations_run": self.iterations_run, "change_norms": list(self.change_norms),
                "imputed_counts": dict(self.imputed_counts)}


def impute(ds: PanelDataset, cfg: RfConfig = RfConfig()) -> tuple[PanelDataset, ImputationReport]:
    """Fill every missing indicator cell by iterative random-forest regression.

    Missing cells start at their column mean.  Each sweep visits columns in
    ascending order of missingness and replaces their missing cells with the
    predictions of a forest trained on the rows where the column is observed.
    Iteration stops when the scaled RMS change of the imputed cells falls
    below ``cfg.tol``, when it grows (the previous sweep is then kept), or
    after ``cfg.max_iter`` sweeps.  The target series is not used.
    """
    n, p = ds.values.shape
    if n < 3:
        raise DataError("imputation needs at least 3 rows")
    obs = ds.observed
    n_obs = obs.sum(axis=0)
    empty = [c for c, k in zip(ds.codes, n_obs) if k == 0]
    if empty:
        raise DataError(f"columns with no observed values: {empty}")

    missing = ~obs
    counts = {c: int(k) for c, k in zip(ds.codes, missing.sum(axis=0))}
    if not missing.any():
        return ds, ImputationReport(0, [], counts)

    X = ds.values.copy()
    means = np.array([ds.values[obs[:, j], j].mean() for j in range(p)])
    for j in range(p):
        X[missing[:, j], j] = means[j]
    if p == 1:
        return ds.replace(values=X, observed=np.ones_like(obs)), ImputationReport(0, [], counts)

    scale = np.array([ds.values[obs[:, j], j].std() for j in range(p)])
    scale[~(scale > 0)] = 1.0
    order = [j for j in np.argsort(missing.sum(axis=0), kind="stable") if missing[:, j].any()]

    changes: list[float] = []
    it = 0
    for it in range(1, cfg.max_iter + 1):
        X_old = X.copy()
        for j in order:
            rows_obs = obs[:, j]
            if rows_obs.sum() < 2:
                continue
            others = [k for k in range(p) if k != j]
            feats = X[:, others]
            model = fit_random_forest(feats[rows_obs], X[rows_obs, j], cfg,
                                      seed=(cfg.seed, it, int(j)))
            X[missing[:, j], j] = model.predict(feats[missing[:, j]])
        delta = ((X - X_old) / scale)[missing]
        change = float(np.sqrt(np.mean(delta * delta)))
        changes.append(change)
        if len(changes) > 1 and change > changes[-2]:
            X = X_old
            break
        if change < cfg.tol:
            break

    X[obs] = ds.values[obs]
    out = ds.replace(values=X, observed=np.ones_like(obs))
    return out, ImputationReport(it, changes, counts)
