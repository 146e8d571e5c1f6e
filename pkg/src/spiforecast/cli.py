"""Command-line interface.

Stage subcommands share a results directory (``--out``): each reads the files
written by earlier stages and writes its own, so ``ingest``, ``impute``,
``select``, ``simulate``, ``tune``, ``evaluate``, ``forecast`` and ``report``
run in that order reproduce ``run``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 modeling error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, gbtree, pipeline, report
from .arima import SimulationSet
from .config import ConfigError, RunConfig, load_config
from .edr import FeatureRanking
from .errors import DataError, ModelingError, StageError
from .forest import impute
from .gbtree import GbtParams
from .ingest import (IndicatorKey, PanelDataset, attach_target, drop_sparse, load_panel_csv,
                     load_target_csv, write_panel_csv, write_target_csv)
from .tuning import evaluate, split_train_test, write_grid_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3

log = logging.getLogger("spiforecast")


class UsageError(Exception):
    pass


# -- workspace files -----------------------------------------------------------

def _load_panel(out: Path, name: str, cfg: RunConfig) -> PanelDataset:
    path = out / name
    if not path.exists():
        raise UsageError(f"{path} not found; run the earlier stages first")
    ds = load_panel_csv(path, cfg.country, cfg.year_window)
    target_path = out / "target.csv"
    if target_path.exists():
        ds = attach_target(ds, load_target_csv(target_path))
    return ds


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise UsageError(f"{path} not found; run the earlier stages first")
    return json.loads(path.read_text(encoding="utf-8"))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _save_simulation(sim: SimulationSet, features, out: Path) -> None:
    sim.to_csv(out / "arima_forecasts.csv", out / "arima_exclusions.csv")
    meta = sim.summary()
    meta["features_used"] = [k.code for k in features]
    meta["names"] = {k.code: k.name for k in sim.included}
    meta["forecasts"] = {c: [float(v) for v in f] for c, f in sim.forecasts.items()}
    _write_json(out / "simulation.json", meta)


def _load_simulation(out: Path):
    meta = _read_json(out / "simulation.json")
    names = meta.get("names", {})
    included = [IndicatorKey(c, names.get(c, "")) for c in meta["included"]]
    sim = SimulationSet(meta["horizon_years"], {c: np.array(v) for c, v in meta["forecasts"].items()},
                        [], {}, included)
    features = [IndicatorKey(c, names.get(c, "")) for c in meta["features_used"]]
    return sim, features


def _load_best(out: Path) -> GbtParams:
    return GbtParams(**_read_json(out / "best_params.json"))


# -- subcommands ---------------------------------------------------------------

def cmd_ingest(cfg: RunConfig, out: Path, args) -> None:
    with pipeline.stage("ingest"):
        raw = pipeline.ingest_stage(cfg)
    with pipeline.stage("drop_sparse"):
        pruned, audit = drop_sparse(raw, cfg.missing_threshold)
    write_panel_csv(pruned, out / "panel.csv")
    write_target_csv(pruned, out / "target.csv")
    with open(out / "missingness.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["indicator_code", "missing_fraction", "status"])
        dropped = {k.code for k, _ in audit.dropped}
        for code, frac in audit.fractions.items():
            w.writerow([code, repr(frac), "dropped" if code in dropped else "retained"])
    print(f"{len(pruned.keys)} indicators retained, {len(audit.dropped)} dropped -> {out}")


def cmd_impute(cfg, out, args):
    ds = _load_panel(out, "panel.csv", cfg)
    with pipeline.stage("impute"):
        imputed, rep = impute(ds, dataclasses.replace(cfg.imputation, seed=cfg.seed))
    write_panel_csv(imputed, out / "imputed.csv")
    _write_json(out / "imputation.json", rep.to_dict())
    print(f"imputed {sum(rep.imputed_counts.values())} cells in {rep.iterations_run} sweeps")


def cmd_select(cfg, out, args):
    ds = _load_panel(out, "imputed.csv", cfg)
    with pipeline.stage("rank"):
        ranking = pipeline.rank_stage(cfg, ds)
    ranking.to_csv(out / "features.csv")
    print("selected: " + ", ".join(k.code for k in ranking.selected))


def cmd_simulate(cfg, out, args):
    ds = _load_panel(out, "imputed.csv", cfg)
    counts = _load_panel(out, "panel.csv", cfg).observed_counts()
    ranking = FeatureRanking.from_csv(out / "features.csv")
    with pipeline.stage("simulate"):
        sim, features = pipeline.simulate_stage(cfg, ds, ranking, counts)
    _save_simulation(sim, features, out)
    print(f"{len(sim.included)} features simulated, {len(sim.excluded)} excluded")


def cmd_tune(cfg, out, args):
    ds = _load_panel(out, "imputed.csv", cfg)
    _, features = _load_simulation(out)
    with pipeline.stage("tune"):
        design = pipeline.design_matrix(ds, features)
        _, _, best, table = pipeline.tune_stage(cfg, design)
    write_grid_table(table, out / "grid_table.csv")
    _write_json(out / "best_params.json", dataclasses.asdict(best))
    print("best: " + ", ".join(f"{k}={getattr(best, k)}" for k in
                               ("learning_rate", "max_depth", "n_estimators", "subsample")))


def cmd_evaluate(cfg, out, args):
    ds = _load_panel(out, "imputed.csv", cfg)
    _, features = _load_simulation(out)
    best = _load_best(out)
    with pipeline.stage("evaluate"):
        design = pipeline.design_matrix(ds, features)
        train, test = split_train_test(design, cfg.split)
        rep, _ = evaluate(train, test, best)
    report.write_eval(rep.pairs, out / "eval.csv")
    report.write_mape(rep.train_mape, rep.test_mape, out / "mape.csv")
    print(f"train MAPE {rep.train_mape:.4f}%  test MAPE {rep.test_mape:.4f}%")


def cmd_forecast(cfg, out, args):
    ds = _load_panel(out, "imputed.csv", cfg)
    sim, features = _load_simulation(out)
    best = _load_best(out)
    with pipeline.stage("forecast"):
        design = pipeline.design_matrix(ds, features)
        horizon, model = pipeline.forecast_stage(cfg, design, best, sim, features)
    report.write_forecast(horizon, out / "forecast.csv")
    (out / "model.txt").write_text(gbtree.dumps(model), encoding="utf-8")
    for y, v in horizon:
        print(f"{y}\t{v:.4f}")


def cmd_report(cfg, out, args):
    pairs = report.read_eval(out / "eval.csv")
    horizon = report.read_forecast(out / "forecast.csv") if (out / "forecast.csv").exists() else []
    report.write_plot_data(pairs, horizon, out / "plot_spi.csv")
    for p in report.render_figures(out):
        print(p)


def cmd_run(cfg, out, args):
    result = pipeline.run_pipeline(cfg)
    report.emit_report(result, out, cfg, include_timestamp=args.timestamp,
                       figures=not args.no_figures)
    rep = result.eval_report
    print(f"[{cfg.country}] train MAPE {rep.train_mape:.4f}%  test MAPE {rep.test_mape:.4f}%  -> {out}")


def cmd_make_fixture(args) -> int:
    from .synthetic import write_fixture
    path = write_fixture(args.dir, args.seed if args.seed is not None else 0)
    print(path)
    return EXIT_OK


COMMANDS = {
    "ingest": (cmd_ingest, "load the panel and target, drop sparse indicators"),
    "impute": (cmd_impute, "fill missing cells by iterative random-forest imputation"),
    "select": (cmd_select, "rank indicators by EDR distance to the target"),
    "simulate": (cmd_simulate, "fit ARIMA models and simulate horizon feature values"),
    "tune": (cmd_tune, "grid-search booster hyperparameters"),
    "evaluate": (cmd_evaluate, "train/test MAPE of the tuned booster"),
    "forecast": (cmd_forecast, "predict the horizon from simulated features"),
    "report": (cmd_report, "write plot data and render figures"),
    "run": (cmd_run, "run every stage end to end"),
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; the subcommand copy
    # must not overwrite values given before it
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration", **kw)
    common.add_argument("--seed", type=int, help="override the configured global seed", **kw)
    common.add_argument("--out", help="results directory (overrides out_dir)", **kw)
    common.add_argument("--n-jobs", type=int, help="worker threads inside stages", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spiforecast", parents=[_global_flags(False)],
        description="Forecast a country's Social Progress Index from development indicators.")
    common = _global_flags(True)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, parents=[common])
        if name == "run":
            p.add_argument("--timestamp", action="store_true", help="record the wall-clock time in run.json")
            p.add_argument("--no-figures", action="store_true")
    p = sub.add_parser("run-all", help="run every config in turn", parents=[common])
    p.add_argument("configs", nargs="+", help="config files")
    p.add_argument("--timestamp", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p = sub.add_parser("make-fixture", help="write a seeded synthetic country fixture", parents=[common])
    p.add_argument("dir")
    return parser


def _config(path, args) -> tuple[RunConfig, Path]:
    if not path:
        raise UsageError("--config is required")
    cfg = load_config(path).with_overrides(seed=args.seed, n_jobs=args.n_jobs)
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    if args.out and args.command == "run-all":
        out = Path(args.out) / cfg.country
    cfg = cfg.with_overrides(out_dir=str(out))
    return cfg, out


def _exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(cause, ModelingError):
        return EXIT_MODEL
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.command == "make-fixture":
        return cmd_make_fixture(args)

    paths = args.configs if args.command == "run-all" else [args.config]
    status = EXIT_OK
    for path in paths:
        try:
            cfg, out = _config(path, args)
            out.mkdir(parents=True, exist_ok=True)
            if args.command == "run-all":
                cmd_run(cfg, out, args)
            else:
                COMMANDS[args.command][0](cfg, out, args)
        except (UsageError, ConfigError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (StageError, DataError, ModelingError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = max(status, _exit_code(exc))
            if args.command != "run-all":
                return status
    return status


if __name__ == "__main__":
    sys.exit(main())
