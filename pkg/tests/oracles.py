"""Independent reference implementations used by the tests."""


import numpy as np


def edr_naive(a, b, eps):
    """EDR by plain exponential recursion over suffixes."""
    a, b = tuple(a), tuple(b)

    def rec(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        sub = 0 if abs(a[i] - b[j]) <= eps else 1
        return min(rec(i + 1, j + 1) + sub, rec(i + 1, j) + 1, rec(i, j + 1) + 1)

    return rec(0, 0)


def best_leaf_objective(g, h, lam, alpha):
    """min_w  G w + ½ (H + λ) w² + α|w|  by scanning the two convex branches."""
    G, H = float(np.sum(g)), float(np.sum(h)) + lam
    if H <= 0:
        return 0.0
    cands = [0.0]
    for s in (1.0, -1.0):  # w > 0 uses slope G + α, w < 0 uses G - α
        w = -(G + s * alpha) / H
        if w * s > 0:
            cands.append(w)
    return min(G * w + 0.5 * H * w * w + alpha * abs(w) for w in cands)




def arma_css(w, c, phi, theta, t0):
    """Conditional sum of squares with pre-sample residuals set to zero."""
    p, q = len(phi), len(theta)
    e = [0.0] * len(w)
    for t in range(p, len(w)):
        pred = c + sum(phi[i] * w[t - 1 - i] for i in range(p))
        pred += sum(theta[j] * e[t - 1 - j] for j in range(q) if t - 1 - j >= p)
        e[t] = w[t] - pred
    return sum(v * v for v in e[t0:])


def mape_ref(actual, forecast):
    return 100.0 * sum(abs(a - f) / abs(a) for a, f in zip(actual, forecast)) / len(actual)


def split_gain_brute(X, g, h, feature, threshold, default_left, lam, alpha, gamma):
    """Objective decrease of one split, from the optimal objective of each side."""
    x = X[:, feature]
    miss = np.isnan(x)
    left = np.where(miss, default_left, np.where(miss, False, x < threshold))
    parent = best_leaf_objective(g, h, lam, alpha)
    children = (best_leaf_objective(g[left], h[left], lam, alpha)
                + best_leaf_objective(g[~left], h[~left], lam, alpha))
    return parent - children - gamma


def random_fixture(rng, max_rows=20, max_features=4, missing=0.2):
    n = int(rng.integers(2, max_rows + 1))
    f = int(rng.integers(1, max_features + 1))
    X = rng.choice(np.round(rng.normal(size=6), 2), size=(n, f))
    X[rng.random((n, f)) < missing] = np.nan
    y = rng.normal(size=n) * 3
    return X, y
