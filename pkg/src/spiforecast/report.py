"""Report files and figures for a finished run.

Delimited outputs are the primary record; figures are rendered from those
same files so ``report`` can redraw them from a results directory alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import gbtree  # noqa: E402
from .tuning import write_grid_table  # noqa: E402

REPORT_FILES = ("forecast.csv", "eval.csv", "mape.csv", "features.csv", "arima_exclusions.csv",
                "grid_table.csv", "plot_spi.csv", "run.json")
FIGURES = ("spi_actual_vs_predicted.png", "mape.png", "edr_ranking.png")

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "svg.hashsalt": "spiforecast",
}


def figsize(scale=1.0, ratio=0.62):
    width = 6.4 * scale
    return width, width * ratio


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def _r(v):
    return repr(float(v))


def write_forecast(horizon, path):
    fh, w = _writer(path)
    with fh:
        w.writerow(["year", "spi_predicted"])
        for y, v in horizon:
            w.writerow([y, _r(v)])


def read_forecast(path) -> list[tuple[int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["year"]), float(r["spi_predicted"])) for r in csv.DictReader(fh)]


def write_eval(pairs, path):
    fh, w = _writer(path)
    with fh:
        w.writerow(["year", "actual", "predicted", "split"])
        for y, a, p, s in pairs:
            w.writerow([y, _r(a), _r(p), s])


def read_eval(path) -> list[tuple[int, float, float, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["year"]), float(r["actual"]), float(r["predicted"]), r["split"])
                for r in csv.DictReader(fh)]


def write_mape(train_mape, test_mape, path):
    fh, w = _writer(path)
    with fh:
        w.writerow(["train_mape", "test_mape"])
        w.writerow([_r(train_mape), _r(test_mape)])


def read_mape(path) -> tuple[float, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        row = next(csv.DictReader(fh))
    return float(row["train_mape"]), float(row["test_mape"])


def plot_rows(pairs, horizon):
    """Long-format ``series,year,value`` rows for actual-vs-predicted plots."""
    rows = [("actual", y, a) for y, a, _, _ in pairs]
    rows += [("predicted", y, p) for y, _, p, _ in pairs]
    rows += [("forecast", y, v) for y, v in horizon]
    return rows


def write_plot_data(pairs, horizon, path):
    fh, w = _writer(path)
    with fh:
        w.writerow(["series", "year", "value"])
        for s, y, v in plot_rows(pairs, horizon):
            w.writerow([s, y, _r(v)])


def run_record(result, cfg=None, include_timestamp=False) -> dict:
    prov = dict(result.provenance)
    if not include_timestamp:
        prov.pop("timestamp", None)
    rep = result.eval_report
    config = None
    if cfg is not None:
        # where and how many threads are not part of the result
        config = {k: v for k, v in cfg.to_dict().items() if k not in ("out_dir", "n_jobs")}
    return {
        "provenance": prov,
        "config": config,
        "missingness": {
            "threshold": result.audit.threshold,
            "retained": [k.code for k in result.audit.retained],
            "dropped": [{"indicator_code": k.code, "fraction": f} for k, f in result.audit.dropped],
        },
        "imputation": result.imputation.to_dict(),
        "selected_by_edr": [k.code for k in result.ranking.selected],
        "features_used": [k.code for k in result.features],
        "simulation": result.simulation.summary(),
        "best_params": asdict(rep.best_params),
        "train_mape": rep.train_mape,
        "test_mape": rep.test_mape,
        "horizon": [{"year": y, "spi_predicted": v} for y, v in result.horizon],
    }


def emit_report(result, out_dir, cfg=None, *, include_timestamp=False, figures=True) -> list[Path]:
    """Write every report file (and figures) for ``result`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = result.eval_report
    write_forecast(result.horizon, out / "forecast.csv")
    write_eval(rep.pairs, out / "eval.csv")
    write_mape(rep.train_mape, rep.test_mape, out / "mape.csv")
    result.ranking.to_csv(out / "features.csv")
    result.simulation.to_csv(out / "arima_forecasts.csv", out / "arima_exclusions.csv")
    write_grid_table(rep.grid_table, out / "grid_table.csv")
    write_plot_data(rep.pairs, result.horizon, out / "plot_spi.csv")
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(run_record(result, cfg, include_timestamp), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written = [out / f for f in REPORT_FILES]

    (out / "model.txt").write_text(gbtree.dumps(result.model), encoding="utf-8")
    written += [out / "arima_forecasts.csv", out / "model.txt"]
    if figures:
        written += render_figures(out)
    return written


# -- figures -----------------------------------------------------------------

def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_actual_vs_predicted(pairs, horizon, title=""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        years = [p[0] for p in pairs]
        ax.plot(years, [p[1] for p in pairs], "o-", color="k", lw=1.2, ms=3, label="actual")
        ax.plot(years, [p[2] for p in pairs], "s--", color="tab:blue", lw=1.0, ms=3, label="predicted")
        if horizon:
            hy = [years[-1]] + [y for y, _ in horizon] if pairs else [y for y, _ in horizon]
            hv = [pairs[-1][2]] + [v for _, v in horizon] if pairs else [v for _, v in horizon]
            ax.plot(hy, hv, "^-", color="tab:red", lw=1.0, ms=3, label="forecast")
        test_years = [p[0] for p in pairs if p[3] == "test"]
        if test_years:
            ax.axvspan(min(test_years) - 0.5, max(test_years) + 0.5, color="0.9", zorder=0, label="test")
        ax.set_xlabel("year")
        ax.set_ylabel("index value")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
    return fig


def plot_mape(train_mape, test_mape, title=""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.6, 0.9))
        ax.bar(["train", "test"], [train_mape, test_mape], color=["tab:blue", "tab:orange"], width=0.6)
        for i, v in enumerate((train_mape, test_mape)):
            ax.annotate(f"{v:.2f}%", (i, v), ha="center", va="bottom", fontsize=8)
        ax.set_ylabel("MAPE (%)")
        if title:
            ax.set_title(title)
        fig.tight_layout()
    return fig


def plot_ranking(ranked, title=""):
    with plt.rc_context(STYLE):
        n = len(ranked)
        fig, ax = plt.subplots(figsize=(6.4, max(2.0, 0.22 * n + 0.8)))
        codes = [r[0] for r in ranked][::-1]
        dist = [r[1] for r in ranked][::-1]
        colors = ["tab:green" if r[2] else "0.7" for r in ranked][::-1]
        ax.barh(codes, dist, color=colors)
        ax.set_xlabel("EDR distance to target")
        if title:
            ax.set_title(title)
        fig.tight_layout()
    return fig


def render_figures(out_dir) -> list[Path]:
    """Draw the figures from the delimited files already in ``out_dir``."""
    out = Path(out_dir)
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    pairs = read_eval(out / "eval.csv")
    horizon = read_forecast(out / "forecast.csv") if (out / "forecast.csv").exists() else []
    paths = []

    _save(plot_actual_vs_predicted(pairs, horizon), fig_dir / FIGURES[0])
    paths.append(fig_dir / FIGURES[0])
    if (out / "mape.csv").exists():
        _save(plot_mape(*read_mape(out / "mape.csv")), fig_dir / FIGURES[1])
        paths.append(fig_dir / FIGURES[1])
    if (out / "features.csv").exists():
        with open(out / "features.csv", newline="", encoding="utf-8") as fh:
            ranked = [(r["indicator_code"], float(r["edr_distance"]), r["selected"] == "1")
                      for r in csv.DictReader(fh)]
        _save(plot_ranking(ranked), fig_dir / FIGURES[2])
        paths.append(fig_dir / FIGURES[2])
    return paths
