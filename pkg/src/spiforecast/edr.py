"""Feature ranking by Edit Distance on Real sequences (EDR)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DataError
from .ingest import IndicatorKey, PanelDataset


@dataclass(frozen=True)
class NormalizedSeries:
    values: np.ndarray
    mu: float
    sigma: float


@dataclass(frozen=True)
class EdrParams:
    epsilon: float = 0.25

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")


@dataclass
class FeatureRanking:
    ranked: list[tuple[IndicatorKey, float]]
    k: int
    selected: list[IndicatorKey] = field(default_factory=list)

    def __post_init__(self):
        if not self.selected:
            self.selected = [key for key, _ in self.ranked[: self.k]]

    @property
    def distances(self) -> dict[str, float]:
        return {key.code: d for key, d in self.ranked}

    def to_csv(self, path) -> None:
        chosen = {k.code for k in self.selected}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "indicator_code", "indicator_name", "edr_distance", "selected"])
            for r, (key, d) in enumerate(self.ranked, start=1):
                w.writerow([r, key.code, key.name, repr(float(d)), int(key.code in chosen)])

    @classmethod
    def from_csv(cls, path) -> "FeatureRanking":
        ranked, selected = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = IndicatorKey(row["indicator_code"], row["indicator_name"])
                ranked.append((key, float(row["edr_distance"])))
                if row["selected"] == "1":
                    selected.append(key)
        return cls(ranked, len(selected), selected)


def zscore(series) -> NormalizedSeries:
    """Standardize with the population standard deviation; constant input maps to zeros."""
    x = np.asarray(series, dtype=float)
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma > 0:
        return NormalizedSeries((x - mu) / sigma, mu, sigma)
    return NormalizedSeries(np.zeros_like(x), mu, 0.0)


@numba.njit(cache=True)
def _edr(a, b, eps):
    n = a.shape[0]
    m = b.shape[0]
    prev = np.empty(m + 1, np.int64)
    cur = np.empty(m + 1, np.int64)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            sub = 0 if abs(ai - b[j - 1]) <= eps else 1
            best = prev[j - 1] + sub
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def edr_distance(a, b, params: EdrParams = EdrParams()) -> float:
    """EDR between two real sequences: unit-cost edits, match iff ``|a_i - b_j| <= epsilon``."""
    a = np.ascontiguousarray(np.asarray(a, dtype=float).reshape(-1))
    b = np.ascontiguousarray(np.asarray(b, dtype=float).reshape(-1))
    return float(_edr(a, b, float(params.epsilon)))


def rank_features(ds: PanelDataset, params: EdrParams = EdrParams(), k: int = 8) -> FeatureRanking:
    """Rank every indicator column by EDR distance to the target, both z-scored.

    Ties are broken by indicator code.  The dataset must be complete and its
    target observed in every row; callers restrict rows beforehand.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if ds.target is None or not ds.target_observed.all():
        raise DataError("target must be observed in every ranking row")
    if not ds.keys:
        raise DataError("no candidate indicators to rank")
    if ds.has_missing():
        raise DataError("ranking requires a complete (imputed) panel")
    target = zscore(ds.target).values
    scored = [(key, edr_distance(zscore(ds.values[:, j]).values, target, params))
              for j, key in enumerate(ds.keys)]
    scored.sort(key=lambda kd: (kd[1], kd[0].code))
    return FeatureRanking(scored, k)
