"""MAPE, time-ordered train/test splitting and grid-search tuning."""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import gbtree
from .errors import DataError
from .gbtree import GbtParams


def mape(actual, forecast) -> float:
    """Mean absolute percentage error, in percent."""
    a = np.asarray(actual, dtype=float).reshape(-1)
    f = np.asarray(forecast, dtype=float).reshape(-1)
    if a.shape != f.shape:
        raise ValueError(f"length mismatch: {a.size} actual vs {f.size} forecast values")
    if a.size == 0:
        raise ValueError("MAPE needs at least one value")
    if np.any(a == 0):
        raise ZeroDivisionError("MAPE is undefined when an actual value is 0")
    return float(np.mean(np.abs((a - f) / np.abs(a))) * 100.0)


@dataclass(frozen=True)
class Grid:
    learning_rate: tuple[float, ...] = (0.01, 0.1, 0.2)
    max_depth: tuple[int, ...] = (3, 6)
    n_estimators: tuple[int, ...] = (100, 200)
    subsample: tuple[float, ...] = (0.8, 0.9, 1.0)

    def __post_init__(self):
        for name in ("learning_rate", "max_depth", "n_estimators", "subsample"):
            if not getattr(self, name):
                raise ValueError(f"grid axis {name} is empty")
        for combo in self.combinations():
            GbtParams(**combo)  # validates every candidate

    def combinations(self) -> list[dict]:
        return [dict(learning_rate=lr, max_depth=md, n_estimators=ne, subsample=ss)
                for lr, md, ne, ss in itertools.product(self.learning_rate, self.max_depth,
                                                        self.n_estimators, self.subsample)]

    def __len__(self):
        return len(self.learning_rate) * len(self.max_depth) * len(self.n_estimators) * len(self.subsample)


@dataclass(frozen=True)
class SplitSpec:
    n_test: int = 2

    def __post_init__(self):
        if self.n_test < 1:
            raise ValueError("n_test must be >= 1")


@dataclass
class Design:
    """Time-ordered design matrix with its target and row years."""

    X: np.ndarray
    y: np.ndarray
    years: list[int]
    feature_codes: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.y)

    def take(self, sl) -> "Design":
        return Design(self.X[sl], self.y[sl], list(np.asarray(self.years)[sl]), self.feature_codes)


def split_train_test(rows: Design, spec: SplitSpec = SplitSpec()) -> tuple[Design, Design]:
    """Last ``n_test`` rows are the test set; no shuffling."""
    n = len(rows)
    if n <= spec.n_test:
        raise DataError(f"{n} rows cannot hold out {spec.n_test} test rows")
    return rows.take(slice(0, n - spec.n_test)), rows.take(slice(n - spec.n_test, n))


def cv_folds(n: int, folds: int, block: int = 2) -> list[tuple[int, int]]:
    """Expanding-window folds as ``(train_end, valid_end)``.

    Fold ``j`` trains on rows ``[0, train_end)`` and validates on
    ``[train_end, valid_end)``; the last fold ends at row ``n``.  The
    validation block shrinks below ``block`` when rows are scarce.
    """
    if folds < 1:
        raise ValueError("folds must be >= 1")
    if n < folds + 2:
        raise DataError(f"{n} training rows are too few for {folds} folds")
    block = max(1, min(block, (n - 2) // folds))
    first = n - folds * block
    return [(first + j * block, first + (j + 1) * block) for j in range(folds)]


def combo_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cv_score(train: Design, params: GbtParams, folds: int = 3, block: int = 2) -> float:
    scores = []
    for end, vend in cv_folds(len(train), folds, block):
        model = gbtree.fit(train.X[:end], train.y[:end], params)
        scores.append(mape(train.y[end:vend], model.predict(train.X[end:vend])))
    return float(np.mean(scores))


@dataclass
class GridRow:
    params: GbtParams
    cv_mape: float


def _tie_key(row: GridRow):
    p = row.params
    return (row.cv_mape, p.n_estimators, p.max_depth, p.learning_rate, -p.subsample)


def grid_search(train: Design, grid: Grid = Grid(), folds: int = 3, *, base: GbtParams = GbtParams(),
                seed: int = 0, block: int = 2, n_jobs: int = 1) -> tuple[GbtParams, list[GridRow]]:
    """Score every grid combination by expanding-window CV MAPE.

    Returns the minimizer, ties going to the simpler model, and the full table
    in grid order.  Each combination's seed depends only on ``seed`` and its
    index, so parallel and sequential runs agree.
    """
    combos = grid.combinations()
    if not combos:
        raise ValueError("empty grid")
    cv_folds(len(train), folds, block)  # fail early on too few rows
    candidates = [replace(base, seed=combo_seed(seed, i), **c) for i, c in enumerate(combos)]

    def job(params):
        return GridRow(params, cv_score(train, params, folds, block))

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            table = list(pool.map(job, candidates))
    else:
        table = [job(p) for p in candidates]
    best = min(table, key=_tie_key)
    return best.params, table


def write_grid_table(table: Sequence[GridRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["learning_rate", "max_depth", "n_estimators", "subsample", "cv_mape"])
        for row in table:
            p = row.params
            w.writerow([repr(p.learning_rate), p.max_depth, p.n_estimators, repr(p.subsample),
                        repr(row.cv_mape)])


@dataclass
class EvalReport:
    train_mape: float
    test_mape: float
    pairs: list[tuple[int, float, float, str]]  # (year, actual, predicted, split)
    best_params: GbtParams
    grid_table: list[GridRow] = field(default_factory=list)

    def split_pairs(self, split: str):
        return [(y, a, p) for y, a, p, s in self.pairs if s == split]


def evaluate(train: Design, test: Design, params: GbtParams) -> tuple[EvalReport, gbtree.GbtModel]:
    """Fit on ``train`` and report MAPE on both splits with per-year pairs."""
    if len(train) == 0 or len(test) == 0:
        raise DataError("evaluation needs nonempty train and test sets")
    if np.any(train.y == 0) or np.any(test.y == 0):
        raise DataError("target contains 0; MAPE is undefined")
    model = gbtree.fit(train.X, train.y, params)
    p_train = model.predict(train.X)
    p_test = model.predict(test.X)
    pairs = [(int(y), float(a), float(p), "train") for y, a, p in zip(train.years, train.y, p_train)]
    pairs += [(int(y), float(a), float(p), "test") for y, a, p in zip(test.years, test.y, p_test)]
    report = EvalReport(mape(train.y, p_train), mape(test.y, p_test), pairs, params)
    return report, model
