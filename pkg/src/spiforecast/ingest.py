"""Loading, fetching and pruning country indicator panels.

A panel is one country's year x indicator matrix.  Missingness is carried by
an explicit boolean ``observed`` mask; the float matrix holds NaN in missing
cells only so that an accidental read fails loudly instead of silently.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import requests

from .errors import DataError, FetchError, PaginationError, UnknownIndicatorError

log = logging.getLogger(__name__)

HEADER = ("Country Name", "Country Code", "Indicator Name", "Indicator Code")


@dataclass(frozen=True)
class IndicatorKey:
    code: str
    name: str = ""

    def __post_init__(self):
        if not self.code:
            raise ValueError("indicator code must be nonempty")


class PanelDataset:
    """One country's indicator panel plus an optional target series.

    Parameters
    ----------
    country : str
        ISO-style country code.
    years : sequence of int
        Strictly increasing calendar years (rows).
    keys : sequence of IndicatorKey
        Column identities; codes must be unique.
    values : array (n_years, n_columns)
        Cell values.  Entries where ``observed`` is False are ignored.
    observed : bool array, optional
        Presence flag per cell.  Defaults to ``isfinite(values)``.
    target, target_observed : arrays of length n_years, optional
        The target series and its presence flags.
    """

    def __init__(self, country: str, years: Sequence[int], keys: Sequence[IndicatorKey],
                 values=None, observed=None, target=None, target_observed=None,
                 country_name: str = ""):
        self.country = country
        self.country_name = country_name
        self.years = tuple(int(y) for y in years)
        self.keys = tuple(keys)
        n, p = len(self.years), len(self.keys)
        if any(b <= a for a, b in zip(self.years, self.years[1:])):
            raise DataError("years must be strictly increasing")
        codes = [k.code for k in self.keys]
        if len(set(codes)) != len(codes):
            raise DataError("indicator codes must be unique within a dataset")

        if values is None:
            values = np.full((n, p), np.nan)
        values = np.array(values, dtype=float).reshape(n, p)
        if observed is None:
            observed = np.isfinite(values)
        observed = np.array(observed, dtype=bool).reshape(n, p)
        if np.any(~np.isfinite(values[observed])):
            raise DataError("observed cells must be finite")
        values[~observed] = np.nan
        self.values = values
        self.observed = observed
        self.values.flags.writeable = False
        self.observed.flags.writeable = False

        if target is None:
            self.target = None
            self.target_observed = None
        else:
            t = np.array(target, dtype=float).reshape(n)
            tobs = np.isfinite(t) if target_observed is None else np.array(target_observed, dtype=bool).reshape(n)
            if np.any(~np.isfinite(t[tobs])):
                raise DataError("observed target values must be finite")
            t[~tobs] = np.nan
            t.flags.writeable = False
            tobs.flags.writeable = False
            self.target = t
            self.target_observed = tobs

    # -- accessors ---------------------------------------------------------

    @property
    def codes(self) -> list[str]:
        return [k.code for k in self.keys]

    @property
    def n_years(self) -> int:
        return len(self.years)

    @property
    def columns(self) -> dict[IndicatorKey, list[float | None]]:
        """Column view as ``key -> [value or None per year]``."""
        return {k: self.column(k.code) for k in self.keys}

    def index_of(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise KeyError(code) from None

    def key(self, code: str) -> IndicatorKey:
        return self.keys[self.index_of(code)]

    def column(self, code: str) -> list[float | None]:
        j = self.index_of(code)
        return [float(v) if o else None for v, o in zip(self.values[:, j], self.observed[:, j])]

    def missing_fractions(self) -> dict[str, float]:
        if self.n_years == 0:
            return {c: 0.0 for c in self.codes}
        miss = (~self.observed).sum(axis=0)
        return {c: float(m) / self.n_years for c, m in zip(self.codes, miss)}

    def observed_counts(self) -> dict[str, int]:
        return {c: int(k) for c, k in zip(self.codes, self.observed.sum(axis=0))}

    def has_missing(self) -> bool:
        return not bool(self.observed.all())

    # -- derivation --------------------------------------------------------

    def replace(self, **kw) -> "PanelDataset":
        args = dict(country=self.country, years=self.years, keys=self.keys, values=self.values,
                    observed=self.observed, target=self.target, target_observed=self.target_observed,
                    country_name=self.country_name)
        args.update(kw)
        return PanelDataset(**args)

    def select(self, codes: Iterable[str]) -> "PanelDataset":
        idx = [self.index_of(c) for c in codes]
        return self.replace(keys=[self.keys[j] for j in idx], values=self.values[:, idx],
                            observed=self.observed[:, idx])

    def rows(self, mask) -> "PanelDataset":
        mask = np.asarray(mask)
        years = np.asarray(self.years)[mask]
        kw = dict(years=years, values=self.values[mask], observed=self.observed[mask])
        if self.target is not None:
            kw.update(target=self.target[mask], target_observed=self.target_observed[mask])
        return self.replace(**kw)

    def __eq__(self, other):
        if not isinstance(other, PanelDataset):
            return NotImplemented
        if (self.country, self.years, self.keys) != (other.country, other.years, other.keys):
            return False
        if not np.array_equal(self.observed, other.observed):
            return False
        if not np.array_equal(self.values[self.observed], other.values[other.observed]):
            return False
        if (self.target is None) != (other.target is None):
            return False
        if self.target is not None:
            if not np.array_equal(self.target_observed, other.target_observed):
                return False
            if not np.array_equal(self.target[self.target_observed], other.target[other.target_observed]):
                return False
        return True

    __hash__ = None

    def __repr__(self):
        return (f"PanelDataset(country={self.country!r}, years={self.years[0] if self.years else None}"
                f"..{self.years[-1] if self.years else None}, columns={len(self.keys)}, "
                f"missing={int((~self.observed).sum())}, target={'yes' if self.target is not None else 'no'})")


@dataclass
class MissingnessAudit:
    fractions: dict[str, float]
    retained: list[IndicatorKey]
    dropped: list[tuple[IndicatorKey, float]] = field(default_factory=list)
    threshold: float = 0.70


# -- CSV ---------------------------------------------------------------------

def _parse_year(label: str) -> int | None:
    label = label.strip()
    try:
        return int(label)
    except ValueError:
        pass
    # World Bank DataBank exports label years as "2010 [YR2010]".
    head = label.split(" ", 1)[0]
    if head.isdigit() and "[YR" in label:
        return int(head)
    return None


def load_panel_csv(path, country: str, year_range: tuple[int, int]) -> PanelDataset:
    """Read a wide-format indicator CSV and return one country's panel.

    Years in ``year_range`` that have no column in the file become all-missing
    rows; years outside the range are ignored.
    """
    start, end = year_range
    if end < start:
        raise DataError(f"empty year range {year_range}")
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header[:4]) != HEADER:
            raise DataError(f"{path}: malformed header, expected {','.join(HEADER)},<years...>")
        year_cols: dict[int, int] = {}
        for i, label in enumerate(header[4:], start=4):
            if not label.strip():
                continue  # trailing comma in WDI exports
            y = _parse_year(label)
            if y is None:
                raise DataError(f"{path}: malformed header, column {i + 1} ({label!r}) is not a year")
            if y in year_cols:
                raise DataError(f"{path}: duplicate year column {y}")
            year_cols[y] = i

        years = list(range(start, end + 1))
        keys: list[IndicatorKey] = []
        rows: list[list[float]] = []
        country_name = ""
        found = False
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 4:
                raise DataError(f"{path}:{lineno}: row has fewer than 4 columns")
            if row[1].strip() != country:
                continue
            found = True
            country_name = row[0].strip()
            vals = []
            for y in years:
                i = year_cols.get(y)
                cell = row[i].strip() if i is not None and i < len(row) else ""
                if cell == "":
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                    cell_ok = False
                else:
                    cell_ok = math.isfinite(v)
                if not cell_ok:
                    raise DataError(f"{path}: row {lineno} ({row[3].strip()}), column {header[i]!r}: "
                                    f"non-numeric value {cell!r}")
                vals.append(v)
            keys.append(IndicatorKey(row[3].strip(), row[2].strip()))
            rows.append(vals)

    if not found:
        raise DataError(f"{path}: country {country!r} not present")
    values = np.array(rows, dtype=float).T.reshape(len(years), len(keys))
    return PanelDataset(country, years, keys, values, country_name=country_name)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_panel_csv(ds: PanelDataset, path) -> None:
    """Write ``ds`` in the wide CSV layout read by :func:`load_panel_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(HEADER) + [str(y) for y in ds.years])
        for j, k in enumerate(ds.keys):
            cells = [_fmt(v) if o else "" for v, o in zip(ds.values[:, j], ds.observed[:, j])]
            w.writerow([ds.country_name, ds.country, k.name, k.code] + cells)


def load_target_csv(path) -> dict[int, float]:
    """Read a ``year,value`` sidecar; empty values are skipped."""
    out: dict[int, float] = {}
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["year", "value"]:
            raise DataError(f"{path}: target CSV must have header 'year,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            try:
                year = int(row[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad year {row[0]!r}") from None
            cell = row[1].strip() if len(row) > 1 else ""
            if not cell:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric target {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}:{lineno}: non-finite target {cell!r}")
            if year in out:
                raise DataError(f"{path}:{lineno}: duplicate year {year}")
            out[year] = v
    return out


def write_target_csv(ds: PanelDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "value"])
        if ds.target is None:
            return
        for y, v, o in zip(ds.years, ds.target, ds.target_observed):
            if o:
                w.writerow([y, _fmt(v)])


def attach_target(ds: PanelDataset, target: Mapping[int, float]) -> PanelDataset:
    """Align a ``year -> value`` map to ``ds.years``; unsupplied years are missing."""
    pos = {y: i for i, y in enumerate(ds.years)}
    outside = sorted(y for y in target if y not in pos)
    if outside:
        raise DataError(f"target years outside the panel: {outside}")
    t = np.full(ds.n_years, np.nan)
    obs = np.zeros(ds.n_years, dtype=bool)
    for y, v in target.items():
        t[pos[y]] = v
        obs[pos[y]] = True
    return ds.replace(target=t, target_observed=obs)


def drop_sparse(ds: PanelDataset, threshold: float = 0.70) -> tuple[PanelDataset, MissingnessAudit]:
    """Remove indicator columns whose missing fraction is strictly above ``threshold``.

    The target series is never considered for removal.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    fr = ds.missing_fractions()
    retained = [k for k in ds.keys if fr[k.code] <= threshold]
    dropped = [(k, fr[k.code]) for k in ds.keys if fr[k.code] > threshold]
    audit = MissingnessAudit(fr, retained, dropped, threshold)
    return ds.select([k.code for k in retained]), audit


# -- indicators API ----------------------------------------------------------

_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


def _get_json(session, url, params, max_retries, backoff, timeout):
    for attempt in range(max_retries + 1):
        try:
            resp = session.get(url, params=params, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            err: Exception = exc
        else:
            if resp.status_code in _TRANSIENT_STATUS:
                err = FetchError(f"GET {resp.url}: HTTP {resp.status_code}")
            elif resp.status_code == 404:
                raise UnknownIndicatorError(f"GET {resp.url}: HTTP 404")
            elif not resp.ok:
                raise FetchError(f"GET {resp.url}: HTTP {resp.status_code}")
            else:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise FetchError(f"GET {resp.url}: response is not JSON") from exc
        if attempt < max_retries:
            delay = backoff * 2 ** attempt
            log.debug("retrying %s in %.2fs after %s", url, delay, err)
            time.sleep(delay)
    raise FetchError(f"GET {url} failed after {max_retries + 1} attempts: {err}") from err


def _field_id(rec, name):
    v = rec.get(name)
    if isinstance(v, dict):
        return v.get("id"), v.get("value")
    return v, None


def _fetch_one(session, base_url, country, key, year_range, per_page, max_retries, backoff, timeout):
    start, end = year_range
    url = f"{base_url.rstrip('/')}/country/{country}/indicator/{key.code}"
    records: list[dict] = []
    total = None
    page = 1
    while True:
        params = {"format": "json", "date": f"{start}:{end}", "page": page, "per_page": per_page}
        body = _get_json(session, url, params, max_retries, backoff, timeout)
        meta = None
        if isinstance(body, list) and len(body) == 2 and isinstance(body[0], dict) and "page" in body[0]:
            meta, body = body
        elif isinstance(body, list) and len(body) == 1 and isinstance(body[0], dict) and "message" in body[0]:
            raise UnknownIndicatorError(f"indicator {key.code!r}: {body[0]['message']}")
        if isinstance(body, dict) and "message" in body:
            raise UnknownIndicatorError(f"indicator {key.code!r}: {body['message']}")
        if meta is not None and meta.get("total") is not None:
            total = int(meta["total"])
        if not body:
            break
        if not isinstance(body, list):
            raise FetchError(f"indicator {key.code!r}: unexpected payload on page {page}")
        records.extend(body)
        page += 1
        if page > 10_000:
            raise PaginationError(f"indicator {key.code!r}: pagination did not terminate")
    if total is not None and len(records) < total:
        raise PaginationError(f"indicator {key.code!r}: got {len(records)} of {total} records")

    values: dict[int, float | None] = {}
    name = key.name
    cname = ""
    for rec in records:
        ind_id, ind_name = _field_id(rec, "indicator")
        if ind_id is not None and ind_id != key.code:
            raise FetchError(f"indicator {key.code!r}: record for {ind_id!r} returned")
        if not name and ind_name:
            name = ind_name
        cid, cval = _field_id(rec, "country")
        cname = cname or (cval or "")
        try:
            year = int(rec["date"])
        except (KeyError, TypeError, ValueError):
            raise FetchError(f"indicator {key.code!r}: record without a usable date: {rec!r}") from None
        if not start <= year <= end:
            continue
        if year in values:
            raise FetchError(f"indicator {key.code!r}: duplicate record for {year}")
        v = rec.get("value")
        if v is not None:
            v = float(v)
            if not math.isfinite(v):
                v = None
        values[year] = v
    return IndicatorKey(key.code, name), values, cname


def fetch_indicators(base_url: str, country: str, indicators: Sequence[IndicatorKey],
                     year_range: tuple[int, int], *, session=None, per_page: int = 1000,
                     max_retries: int = 3, backoff: float = 0.5, timeout: float = 30.0,
                     max_workers: int = 1) -> PanelDataset:
    """Assemble a panel from a paginated per-indicator JSON API.

    Requests ``{base_url}/country/{country}/indicator/{code}`` and walks the
    ``page`` parameter until an empty page.  Both bare record arrays and the
    World Bank ``[meta, records]`` envelope are understood.
    """
    start, end = year_range
    years = list(range(start, end + 1))
    own = session is None
    session = session or requests.Session()
    try:
        def job(key):
            return _fetch_one(session, base_url, country, key, year_range, per_page,
                              max_retries, backoff, timeout)

        if max_workers > 1 and len(indicators) > 1:
            with ThreadPoolExecutor(max_workers) as pool:
                results = list(pool.map(job, indicators))
        else:
            results = [job(k) for k in indicators]
    finally:
        if own:
            session.close()

    values = np.full((len(years), len(results)), np.nan)
    for j, (_, vals, _) in enumerate(results):
        for i, y in enumerate(years):
            v = vals.get(y)
            if v is not None:
                values[i, j] = v
    cname = next((c for _, _, c in results if c), "")
    return PanelDataset(country, years, [k for k, _, _ in results], values, country_name=cname)
