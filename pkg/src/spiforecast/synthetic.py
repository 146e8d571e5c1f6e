"""Seeded synthetic country panels for demos and end-to-end checks.

A monotone latent factor drives ``n_signal`` smooth indicators (linear,
AR(1)-smoothed and logistic trends) and the target; ``n_noise`` indicators are
unrelated noise.  Indicator cells go missing completely at random.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import IndicatorKey, PanelDataset, write_panel_csv


def latent_factor(rng, n):
    steps = 0.5 + rng.random(n - 1)
    z = np.concatenate([[0.0], np.cumsum(steps)])
    return z / z[-1]


def make_country(seed: int, *, n_years: int = 14, n_signal: int = 10, n_noise: int = 20,
                 missing: float = 0.20, target_noise: float = 0.01, start: int = 2010,
                 country: str = "SYN") -> tuple[PanelDataset, dict[int, float], dict]:
    """Return ``(panel with holes, target by year, ground truth)``."""
    rng = np.random.default_rng(seed)
    n = n_years
    z = latent_factor(rng, n)
    cols, keys = [], []
    for j in range(n_signal):
        kind = ("linear", "ar1", "logistic")[j % 3]
        level = rng.uniform(20, 200)
        amp = rng.uniform(0.2, 0.6) * level * rng.choice([-1.0, 1.0])
        if kind == "linear":
            x = level + amp * z
        elif kind == "ar1":
            phi = rng.uniform(0.3, 0.7)
            x = np.empty(n)
            x[0] = level + amp * z[0]
            for t in range(1, n):
                x[t] = phi * x[t - 1] + (1 - phi) * (level + amp * z[t])
        else:
            k, c = rng.uniform(4, 10), rng.uniform(0.3, 0.7)
            x = level + amp / (1 + np.exp(-k * (z - c)))
        x = x * (1 + 0.005 * rng.standard_normal(n))
        cols.append(x)
        keys.append(IndicatorKey(f"SIG.{kind.upper()}.{j:02d}", f"signal {kind} {j}"))
    for j in range(n_noise):
        level = rng.uniform(20, 200)
        cols.append(level * (1 + 0.15 * rng.standard_normal(n)))
        keys.append(IndicatorKey(f"NOISE.{j:02d}", f"noise {j}"))

    truth = np.column_stack(cols)
    holes = rng.random(truth.shape) < missing
    values = np.where(holes, np.nan, truth)
    spi = 60.0 + 15.0 * z ** 0.8
    spi = spi * (1 + target_noise * rng.standard_normal(n))
    years = list(range(start, start + n))
    ds = PanelDataset(country, years, keys, values, country_name="Synthetic")
    target = {y: float(v) for y, v in zip(years, spi)}
    return ds, target, {"values": truth, "holes": holes, "latent": z}


def write_fixture(out_dir, seed: int, *, country: str = "SYN", post_window=None, **kw) -> Path:
    """Write panel CSV, target CSV and a run config; returns the config path.

    ``post_window`` appends extra year columns after the window filled with
    that value (used to check that out-of-window data never leaks in).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, target, _ = make_country(seed, country=country, **kw)
    if post_window is not None:
        extra = 4
        years = list(ds.years) + [ds.years[-1] + i for i in range(1, extra + 1)]
        values = np.vstack([ds.values, np.full((extra, len(ds.keys)), float(post_window))])
        observed = np.vstack([ds.observed, np.ones((extra, len(ds.keys)), bool)])
        ds = PanelDataset(ds.country, years, ds.keys, values, observed, country_name=ds.country_name)
    write_panel_csv(ds, out / "panel.csv")
    with open(out / "target.csv", "w", encoding="utf-8") as fh:
        fh.write("year,value\n")
        for y, v in target.items():
            fh.write(f"{y},{v!r}\n")
    start = ds.years[0]
    end = start + kw.get("n_years", 14) - 1
    cfg = out / "config.toml"
    cfg.write_text(
        f'country = "{country}"\n'
        f"year_window = [{start}, {end}]\n"
        f"horizon_years = [{end + 1}, {end + 2}, {end + 3}, {end + 4}]\n"
        f"seed = {seed}\n"
        'out_dir = "results"\n\n'
        "[inputs]\n"
        'panel_csv = "panel.csv"\n'
        'target_csv = "target.csv"\n',
        encoding="utf-8")
    return cfg
