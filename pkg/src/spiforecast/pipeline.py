"""End-to-end per-country pipeline.

Stages run in a fixed order and each consumes only earlier stages' outputs::

    ingest -> drop_sparse -> impute -> rank -> simulate -> tune -> evaluate -> forecast
"""

from __future__ import annotations

import dataclasses
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__, gbtree
from .arima import SimulationSet, simulate_features
from .config import RunConfig
from .edr import EdrParams, FeatureRanking, rank_features
from .errors import DataError, SpiForecastError, StageError
from .forest import ImputationReport, impute
from .gbtree import GbtModel, GbtParams
from .ingest import (IndicatorKey, MissingnessAudit, PanelDataset, attach_target, drop_sparse,
                     fetch_indicators, load_panel_csv, load_target_csv)
from .tuning import Design, EvalReport, evaluate, grid_search, split_train_test

log = logging.getLogger(__name__)

STAGES = ("ingest", "drop_sparse", "impute", "rank", "simulate", "tune", "evaluate", "forecast")


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except (SpiForecastError, ValueError, ZeroDivisionError) as exc:
        raise StageError(name, exc) from exc


@dataclass
class ForecastResult:
    horizon: list[tuple[int, float]]
    in_sample: list[tuple[int, float, float]]
    eval_report: EvalReport
    ranking: FeatureRanking
    simulation: SimulationSet
    features: list[IndicatorKey]
    audit: MissingnessAudit
    imputation: ImputationReport
    model: GbtModel
    provenance: dict = field(default_factory=dict)


# -- individual stages -------------------------------------------------------

def ingest_stage(cfg: RunConfig) -> PanelDataset:
    inp = cfg.inputs
    if inp.panel_csv:
        ds = load_panel_csv(inp.panel_csv, cfg.country, cfg.year_window)
    else:
        keys = [IndicatorKey(c) for c in inp.indicators]
        ds = fetch_indicators(inp.api_base_url, cfg.country, keys, cfg.year_window,
                              max_workers=cfg.n_jobs)
    if inp.target_csv:
        start, end = cfg.year_window
        target = {y: v for y, v in load_target_csv(inp.target_csv).items() if start <= y <= end}
        ds = attach_target(ds, target)
    return ds


def target_rows(ds: PanelDataset) -> np.ndarray:
    if ds.target is None:
        raise DataError("no target series attached")
    return np.asarray(ds.target_observed)


def rank_stage(cfg: RunConfig, imputed: PanelDataset) -> FeatureRanking:
    sel = cfg.selection
    k = sel.pre_k if sel.two_stage_selection else sel.k
    return rank_features(imputed.rows(target_rows(imputed)), EdrParams(sel.epsilon), k)


def simulate_stage(cfg: RunConfig, imputed: PanelDataset, ranking: FeatureRanking,
                   observed_counts: dict[str, int]) -> tuple[SimulationSet, list[IndicatorKey]]:
    sim = simulate_features(imputed, ranking, cfg.horizon_years, cfg.arima.min_len,
                            cfg.arima.min_accuracy, observed_counts=observed_counts,
                            n_jobs=cfg.n_jobs)
    features = list(sim.included)
    if cfg.selection.two_stage_selection:
        features = features[: cfg.selection.k]
    return sim, features


def design_matrix(ds: PanelDataset, features: list[IndicatorKey]) -> Design:
    rows = target_rows(ds)
    sub = ds.rows(rows).select([k.code for k in features])
    return Design(np.array(sub.values), np.array(sub.target), list(sub.years), [k.code for k in features])


def tune_stage(cfg: RunConfig, design: Design):
    train, test = split_train_test(design, cfg.split)
    base = dataclasses.replace(cfg.booster, seed=cfg.seed)
    best, table = grid_search(train, cfg.grid, cfg.tuning.folds, base=base, seed=cfg.seed,
                              block=cfg.tuning.block, n_jobs=cfg.n_jobs)
    return train, test, best, table


def forecast_stage(cfg: RunConfig, design: Design, params: GbtParams, sim: SimulationSet,
                   features: list[IndicatorKey]) -> tuple[list[tuple[int, float]], GbtModel]:
    """Refit on every target year and predict the horizon from simulated features only."""
    model = gbtree.fit(design.X, design.y, params)
    if not sim.horizon_years:
        return [], model
    rows = np.column_stack([sim.forecasts[k.code] for k in features])
    preds = model.predict(rows)
    if not np.all(np.isfinite(preds)):
        raise DataError("non-finite horizon prediction")
    return [(int(y), float(v)) for y, v in zip(sim.horizon_years, preds)], model


# -- driver -------------------------------------------------------------------

def run_pipeline(cfg: RunConfig, *, timestamp: str | None = None) -> ForecastResult:
    """Execute every stage for one country and return the collected results."""
    with stage("ingest"):
        raw = ingest_stage(cfg)
        if raw.target is None or not raw.target_observed.any():
            raise DataError("target values are required for the training window")
    with stage("drop_sparse"):
        pruned, audit = drop_sparse(raw, cfg.missing_threshold)
        if not pruned.keys:
            raise DataError("every indicator exceeded the missingness threshold")
    with stage("impute"):
        rf = dataclasses.replace(cfg.imputation, seed=cfg.seed)
        imputed, imp_report = impute(pruned, rf)
    with stage("rank"):
        ranking = rank_stage(cfg, imputed)
    with stage("simulate"):
        sim, features = simulate_stage(cfg, imputed, ranking, pruned.observed_counts())
    with stage("tune"):
        design = design_matrix(imputed, features)
        train, test, best, table = tune_stage(cfg, design)
    with stage("evaluate"):
        report, _ = evaluate(train, test, best)
        report.grid_table = table
    with stage("forecast"):
        horizon, model = forecast_stage(cfg, design, best, sim, features)

    provenance = {
        "package_version": __version__,
        "country": cfg.country,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "stages": list(STAGES),
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    in_sample = [(y, a, p) for y, a, p, _ in report.pairs]
    return ForecastResult(horizon, in_sample, report, ranking, sim, features, audit, imp_report,
                          model, provenance)
