"""Second-order gradient-boosted regression trees.

Each round fits a tree to the gradients and hessians of the loss at the
current prediction.  Splits are found by exact greedy enumeration of the
present values of every feature; rows missing the split feature are tried on
both sides and the better side becomes the node's default direction.

With ``T(G)`` the L1 soft-threshold of a gradient sum::

    leaf weight  w    = -T(G) / (H + lambda)
    split gain        = 1/2 [S(G_L, H_L) + S(G_R, H_R) - S(G, H)] - gamma
    S(G, H)           = T(G)^2 / (H + lambda)
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numba
import numpy as np


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    subsample: float = 1.0
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        for name in ("reg_lambda", "reg_alpha", "gamma", "min_child_weight"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")


def soft_threshold(G: float, alpha: float) -> float:
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


def leaf_weight(G: float, H: float, reg_lambda: float, reg_alpha: float = 0.0) -> float:
    den = H + reg_lambda
    return -soft_threshold(G, reg_alpha) / den if den > 0 else 0.0


# -- numba kernels -----------------------------------------------------------

@numba.njit(cache=True)
def _thresh(G, alpha):
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


@numba.njit(cache=True)
def _score(G, H, lam, alpha):
    den = H + lam
    if den <= 0.0:
        return 0.0
    t = _thresh(G, alpha)
    return t * t / den


@numba.njit(cache=True)
def _scan_feature(x, g, h, rows, lo, hi, G, H, lam, alpha, gamma, mcw,
                  idx, xs, thr, gain_l, gain_r, ok_l, ok_r):
    """All split candidates of one feature at a node; returns their count.

    ``gain_l``/``ok_l`` describe sending missing rows left, ``gain_r``/``ok_r`` right.
    """
    k = 0
    Gm = 0.0
    Hm = 0.0
    for i in range(lo, hi):
        r = rows[i]
        v = x[r]
        if np.isnan(v):
            Gm += g[r]
            Hm += h[r]
        else:
            idx[k] = r
            xs[k] = v
            k += 1
    if k < 2:
        return 0
    order = np.argsort(xs[:k], kind="mergesort")
    parent = _score(G, H, lam, alpha)
    GLp = 0.0
    HLp = 0.0
    nc = 0
    for j in range(k - 1):
        r = idx[order[j]]
        GLp += g[r]
        HLp += h[r]
        a = xs[order[j]]
        b = xs[order[j + 1]]
        if not b > a:
            continue
        t = a + (b - a) * 0.5
        if not t > a:
            t = b
        thr[nc] = t
        GL = GLp + Gm
        HL = HLp + Hm
        GR = G - GL
        HR = H - HL
        ok_l[nc] = HL >= mcw and HR >= mcw
        gain_l[nc] = 0.5 * (_score(GL, HL, lam, alpha) + _score(GR, HR, lam, alpha) - parent) - gamma
        GR = G - GLp
        HR = H - HLp
        ok_r[nc] = HLp >= mcw and HR >= mcw
        gain_r[nc] = 0.5 * (_score(GLp, HLp, lam, alpha) + _score(GR, HR, lam, alpha) - parent) - gamma
        nc += 1
    return nc


@numba.njit(cache=True)
def _grow_tree(X, g, h, rows, max_depth, lam, alpha, gamma, mcw,
               feat, thr, dleft, left, right, weight):
    """Depth-first growth; node ids come out in preorder. Returns node count."""
    n_rows = rows.shape[0]
    F = X.shape[1]
    cap = feat.shape[0]
    st_parent = np.empty(cap, np.int64)
    st_side = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    idx = np.empty(n_rows, np.int64)
    xs = np.empty(n_rows)
    c_thr = np.empty(n_rows)
    c_gl = np.empty(n_rows)
    c_gr = np.empty(n_rows)
    c_okl = np.empty(n_rows, np.bool_)
    c_okr = np.empty(n_rows, np.bool_)

    st_parent[0] = -1
    st_side[0] = 0
    st_lo[0] = 0
    st_hi[0] = n_rows
    st_depth[0] = 0
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        parent = st_parent[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_side[top] == 0:
                left[parent] = node
            else:
                right[parent] = node
        G = 0.0
        H = 0.0
        for i in range(lo, hi):
            G += g[rows[i]]
            H += h[rows[i]]
        feat[node] = -1
        left[node] = -1
        right[node] = -1
        den = H + lam
        weight[node] = -_thresh(G, alpha) / den if den > 0.0 else 0.0
        if depth >= max_depth:
            continue

        best = 0.0
        bf = -1
        bt = 0.0
        bdl = True
        for f in range(F):
            nc = _scan_feature(X[:, f], g, h, rows, lo, hi, G, H, lam, alpha, gamma, mcw,
                               idx, xs, c_thr, c_gl, c_gr, c_okl, c_okr)
            for c in range(nc):
                if c_okl[c] and c_gl[c] > best:
                    best = c_gl[c]
                    bf = f
                    bt = c_thr[c]
                    bdl = True
                if c_okr[c] and c_gr[c] > best:
                    best = c_gr[c]
                    bf = f
                    bt = c_thr[c]
                    bdl = False
        if bf < 0:
            continue

        i = lo
        j = hi - 1
        while i <= j:
            v = X[rows[i], bf]
            goes_left = bdl if np.isnan(v) else v < bt
            if goes_left:
                i += 1
            else:
                tmp = rows[i]
                rows[i] = rows[j]
                rows[j] = tmp
                j -= 1
        feat[node] = bf
        thr[node] = bt
        dleft[node] = bdl
        # right child pushed first so the left subtree is numbered first
        st_parent[top] = node
        st_side[top] = 1
        st_lo[top] = i
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_parent[top] = node
        st_side[top] = 0
        st_lo[top] = lo
        st_hi[top] = i
        st_depth[top] = depth + 1
        top += 1
    return n_nodes


@numba.njit(cache=True)
def _predict_tree(X, feat, thr, dleft, left, right, weight, out, scale):
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            v = X[i, feat[node]]
            if np.isnan(v):
                go_left = dleft[node]
            else:
                go_left = v < thr[node]
            node = left[node] if go_left else right[node]
        out[i] += scale * weight[node]


# -- model -------------------------------------------------------------------

@dataclass
class RegressionTree:
    """Flat preorder node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaves(self) -> np.ndarray:
        return self.weight[self.feature < 0]

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def add_to(self, X, out, scale):
        _predict_tree(X, self.feature, self.threshold, self.default_left, self.left, self.right,
                      self.weight, out, scale)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.zeros(X.shape[0])
        self.add_to(X, out, 1.0)
        return out

    def __eq__(self, other):
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("feature", "threshold", "default_left", "left", "right", "weight"))


@dataclass
class GbtModel:
    base_score: float
    trees: list[RegressionTree]
    params: GbtParams
    n_features: int

    def predict(self, X) -> np.ndarray:
        """Predict rows of ``X``; NaN cells follow each split's default direction."""
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(X.shape[0], float(self.base_score))
        eta = self.params.learning_rate
        for tree in self.trees:
            tree.add_to(X, out, eta)
        return out

    def predict_row(self, x) -> float:
        return float(self.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def truncated(self, n_trees: int) -> "GbtModel":
        return GbtModel(self.base_score, self.trees[:n_trees], self.params, self.n_features)

    def used_features(self) -> set[int]:
        return {int(f) for t in self.trees for f in t.feature if f >= 0}

    def __eq__(self, other):
        if not isinstance(other, GbtModel):
            return NotImplemented
        return (self.base_score == other.base_score and self.params == other.params
                and self.n_features == other.n_features and self.trees == other.trees)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if np.isinf(X).any():
        raise ValueError("feature matrix contains infinite values")
    return np.ascontiguousarray(X)


GradHess = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def squared_error(y: np.ndarray, pred: np.ndarray):
    """Gradient and hessian of ``(pred - y)^2 / 2``."""
    return pred - y, np.ones_like(y)


def subsample_rows(n: int, fraction: float, seed: int, round_index: int) -> np.ndarray:
    """Sorted row indices for one round, drawn without replacement."""
    if fraction >= 1.0:
        return np.arange(n, dtype=np.int64)
    k = max(1, int(np.floor(fraction * n)))
    rng = np.random.default_rng([seed, round_index])
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


def fit(X, y, params: GbtParams = GbtParams(), objective: GradHess | None = None) -> GbtModel:
    """Boost ``params.n_estimators`` trees onto ``base_score = mean(y)``.

    ``objective`` maps ``(y, pred)`` to per-row gradients and hessians;
    squared error is used when it is None.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, F = X.shape
    if n == 0 or len(y) == 0:
        raise ValueError("cannot fit on empty data")
    if n < 2:
        raise ValueError("need at least 2 rows")
    if F < 1:
        raise ValueError("need at least 1 feature")
    if len(y) != n:
        raise ValueError("rows(X) must equal len(y)")
    if not np.isfinite(y).all():
        raise ValueError("target contains non-finite values")
    objective = objective or squared_error

    base = float(np.mean(y))
    pred = np.full(n, base)
    p = params
    trees = []
    cap = 2 * n + 1
    for m in range(p.n_estimators):
        g, h = objective(y, pred)
        g = np.ascontiguousarray(g, dtype=float)
        h = np.ascontiguousarray(h, dtype=float)
        rows = subsample_rows(n, p.subsample, p.seed, m)
        feat = np.empty(cap, np.int64)
        thr = np.zeros(cap)
        dleft = np.ones(cap, np.bool_)
        left = np.empty(cap, np.int64)
        right = np.empty(cap, np.int64)
        weight = np.empty(cap)
        k = _grow_tree(X, g, h, rows, p.max_depth, p.reg_lambda, p.reg_alpha, p.gamma,
                       p.min_child_weight, feat, thr, dleft, left, right, weight)
        weight[:k][feat[:k] >= 0] = 0.0  # only leaf weights are meaningful
        tree = RegressionTree(feat[:k].copy(), thr[:k].copy(), dleft[:k].copy(),
                              left[:k].copy(), right[:k].copy(), weight[:k].copy())
        tree.add_to(X, pred, p.learning_rate)
        trees.append(tree)
    return GbtModel(base, trees, params, F)


def predict(model: GbtModel, x) -> float | np.ndarray:
    """Predict one row (returns a float) or a matrix of rows."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return model.predict_row(arr)
    return model.predict(arr)


def regularization(model: GbtModel) -> float:
    """Sum over all leaves of ``gamma + lambda/2 v^2 + alpha |v|`` with ``v`` the
    leaf's contribution to the prediction (weight times learning rate)."""
    p = model.params
    total = 0.0
    for tree in model.trees:
        v = tree.leaves() * p.learning_rate
        total += float(np.sum(p.gamma + 0.5 * p.reg_lambda * v * v + p.reg_alpha * np.abs(v)))
    return total


def objective(model: GbtModel, X, y) -> float:
    """Squared-error training loss plus the leaf regularization term."""
    y = np.asarray(y, dtype=float)
    r = y - model.predict(X)
    return float(np.sum(r * r)) + regularization(model)


# -- split enumeration (exposed for verification) ---------------------------

@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    default_left: bool
    gain: float


def enumerate_splits(X, g, h, params: GbtParams, rows=None) -> list[SplitCandidate]:
    """Every admissible (feature, threshold, default direction) at one node."""
    X = _as_matrix(X)
    g = np.ascontiguousarray(g, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    rows = np.arange(X.shape[0], dtype=np.int64) if rows is None else np.asarray(rows, np.int64)
    n = len(rows)
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    idx = np.empty(n, np.int64)
    xs = np.empty(n)
    thr = np.empty(n)
    gl = np.empty(n)
    gr = np.empty(n)
    okl = np.empty(n, np.bool_)
    okr = np.empty(n, np.bool_)
    out = []
    for f in range(X.shape[1]):
        nc = _scan_feature(X[:, f], g, h, rows.copy(), 0, n, G, H, params.reg_lambda, params.reg_alpha,
                           params.gamma, params.min_child_weight, idx, xs, thr, gl, gr, okl, okr)
        for c in range(nc):
            if okl[c]:
                out.append(SplitCandidate(f, float(thr[c]), True, float(gl[c])))
            if okr[c]:
                out.append(SplitCandidate(f, float(thr[c]), False, float(gr[c])))
    return out


# -- text serialization -----------------------------------------------------

NODE_HEADER = "node_id,kind,feature,threshold,default_left,weight,left_id,right_id"


def dumps(model: GbtModel) -> str:
    """Header lines (params, base_score) then each tree's preorder node list."""
    buf = io.StringIO()
    buf.write("gbtree-model 1\n")
    buf.write("params " + json.dumps(asdict(model.params), sort_keys=True) + "\n")
    buf.write(f"base_score {model.base_score!r}\n")
    buf.write(f"n_features {model.n_features}\n")
    buf.write(f"n_trees {len(model.trees)}\n")
    for t, tree in enumerate(model.trees):
        buf.write(f"tree {t} {tree.n_nodes}\n")
        buf.write(NODE_HEADER + "\n")
        for i in range(tree.n_nodes):
            if tree.feature[i] >= 0:
                buf.write(f"{i},split,{tree.feature[i]},{float(tree.threshold[i])!r},"
                          f"{int(bool(tree.default_left[i]))},,{tree.left[i]},{tree.right[i]}\n")
            else:
                buf.write(f"{i},leaf,,,,{float(tree.weight[i])!r},,\n")
    return buf.getvalue()


def loads(text: str) -> GbtModel:
    lines = iter(text.splitlines())

    def expect(prefix):
        line = next(lines)
        if not line.startswith(prefix):
            raise ValueError(f"expected {prefix!r}, got {line!r}")
        return line[len(prefix):].strip()

    if expect("gbtree-model") != "1":
        raise ValueError("unsupported model format version")
    params = GbtParams(**json.loads(expect("params")))
    base = float(expect("base_score"))
    n_features = int(expect("n_features"))
    n_trees = int(expect("n_trees"))
    trees = []
    for t in range(n_trees):
        tid, n_nodes = expect("tree").split()
        if int(tid) != t:
            raise ValueError(f"tree {t} out of order")
        n_nodes = int(n_nodes)
        if next(lines) != NODE_HEADER:
            raise ValueError("missing node header")
        feat = np.full(n_nodes, -1, np.int64)
        thr = np.zeros(n_nodes)
        dleft = np.ones(n_nodes, np.bool_)
        left = np.full(n_nodes, -1, np.int64)
        right = np.full(n_nodes, -1, np.int64)
        weight = np.zeros(n_nodes)
        for _ in range(n_nodes):
            node_id, kind, f, th, dl, w, l, r = next(lines).split(",")
            i = int(node_id)
            if kind == "split":
                feat[i] = int(f)
                thr[i] = float(th)
                dleft[i] = dl == "1"
                left[i] = int(l)
                right[i] = int(r)
                weight[i] = 0.0
            elif kind == "leaf":
                weight[i] = float(w)
            else:
                raise ValueError(f"unknown node kind {kind!r}")
        trees.append(RegressionTree(feat, thr, dleft, left, right, weight))
    return GbtModel(base, trees, params, n_features)
