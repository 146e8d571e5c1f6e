import json

import numpy as np
import pytest

from spiforecast import cli, gbtree, report
from spiforecast.config import ConfigError, config_from_dict, load_config
from spiforecast.errors import StageError
from spiforecast.pipeline import run_pipeline
from spiforecast.synthetic import make_country, write_fixture

STAGE_CHAIN = ["ingest", "impute", "select", "simulate", "tune", "evaluate", "forecast", "report"]


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("syn")
    write_fixture(d, seed=0)
    return d


@pytest.fixture(scope="module")
def run_dir(fixture_dir):
    out = fixture_dir / "run"
    assert cli.main(["run", "--config", str(fixture_dir / "config.toml"), "--out", str(out)]) == 0
    return out


# -- config ---------------------------------------------------------------------

def test_config_resolves_paths(fixture_dir):
    cfg = load_config(fixture_dir / "config.toml")
    assert cfg.country == "SYN" and cfg.year_window == (2010, 2023)
    assert cfg.horizon_years == (2024, 2025, 2026, 2027)
    assert cfg.inputs.panel_csv == str((fixture_dir / "panel.csv").resolve())
    assert cfg.digest() == cfg.with_overrides(out_dir="elsewhere", n_jobs=4).digest()
    assert cfg.digest() != cfg.with_overrides(seed=1).digest()


@pytest.mark.parametrize("data, match", [
    ({"inputs": {"panel_csv": "p.csv"}}, "country"),
    ({"country": "X"}, "inputs"),
    ({"country": "X", "inputs": {"panel_csv": "p"}, "colour": 1}, "unknown"),
    ({"country": "X", "inputs": {"panel_csv": "p"}, "booster": {"max_depth": 0}}, "booster"),
    ({"country": "X", "inputs": {}}, "panel_csv"),
    ({"country": "X", "inputs": {"panel_csv": "p"}, "missing_threshold": 1.5}, "threshold"),
])
def test_config_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_bad_toml(tmp_path):
    (tmp_path / "c.toml").write_text("country = \n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.toml")


# -- end to end -----------------------------------------------------------------

def test_run_writes_every_report_file(run_dir):
    for name in report.REPORT_FILES + ("arima_forecasts.csv", "model.txt"):
        assert (run_dir / name).is_file(), name
    for name in report.FIGURES:
        assert (run_dir / "figures" / name).stat().st_size > 0
    rec = json.loads((run_dir / "run.json").read_text())
    assert "timestamp" not in rec["provenance"]
    assert len(rec["features_used"]) >= 1
    assert [h["year"] for h in rec["horizon"]] == [2024, 2025, 2026, 2027]
    train, test = report.read_mape(run_dir / "mape.csv")
    assert test == rec["test_mape"] < 10


def test_report_files_round_trip(run_dir, tmp_path):
    horizon = report.read_forecast(run_dir / "forecast.csv")
    report.write_forecast(horizon, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_bytes() == (run_dir / "forecast.csv").read_bytes()
    pairs = report.read_eval(run_dir / "eval.csv")
    assert [p[3] for p in pairs].count("test") == 2
    report.write_eval(pairs, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == (run_dir / "eval.csv").read_bytes()
    model = gbtree.loads((run_dir / "model.txt").read_text())
    assert model.n_features == len(json.loads((run_dir / "run.json").read_text())["features_used"])


def test_staged_commands_reproduce_run(fixture_dir, run_dir):
    out = fixture_dir / "staged"
    for cmd in STAGE_CHAIN:
        assert cli.main([cmd, "--config", str(fixture_dir / "config.toml"), "--out", str(out)]) == 0, cmd
    for name in ("forecast.csv", "eval.csv", "features.csv", "grid_table.csv", "plot_spi.csv",
                 "arima_exclusions.csv", "model.txt"):
        assert (out / name).read_bytes() == (run_dir / name).read_bytes(), name


def test_stage_out_of_order_is_usage_error(fixture_dir, tmp_path):
    assert cli.main(["tune", "--config", str(fixture_dir / "config.toml"), "--out", str(tmp_path)]) == 1


def test_empty_horizon(fixture_dir):
    cfg = load_config(fixture_dir / "config.toml").with_overrides(horizon_years=())
    result = run_pipeline(cfg)
    assert result.horizon == []
    assert result.eval_report.test_mape >= 0


def test_horizon_uses_simulated_features_only(fixture_dir):
    cfg = load_config(fixture_dir / "config.toml")
    result = run_pipeline(cfg)
    rows = np.column_stack([result.simulation.forecasts[k.code] for k in result.features])
    assert [v for _, v in result.horizon] == list(result.model.predict(rows))


def test_stage_errors_name_the_stage(fixture_dir):
    cfg = load_config(fixture_dir / "config.toml")
    cfg = cfg.with_overrides(arima=type(cfg.arima)(min_len=10, min_accuracy=101.0))
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "simulate"


# -- CLI exit codes -------------------------------------------------------------

def test_cli_usage_errors(capsys, tmp_path):
    assert cli.main([]) == 1
    assert cli.main(["run"]) == 1
    assert cli.main(["bogus"]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "none.toml")]) == 1
    assert cli.main(["--version"]) == 0


def test_cli_data_error(tmp_path):
    cfg = write_fixture(tmp_path, seed=1)
    (tmp_path / "panel.csv").write_text("garbage\n", encoding="utf-8")
    assert cli.main(["run", "--config", str(cfg), "--no-figures"]) == 2


def test_cli_modeling_error(tmp_path):
    cfg = write_fixture(tmp_path, seed=1)
    with open(cfg, "a", encoding="utf-8") as fh:
        fh.write("\n[arima]\nmin_accuracy = 101.0\n")
    assert cli.main(["run", "--config", str(cfg), "--no-figures"]) == 3


def test_cli_run_all_continues_after_failure(tmp_path):
    good = write_fixture(tmp_path / "a", seed=2, country="AAA")
    bad = write_fixture(tmp_path / "b", seed=3, country="BBB")
    (tmp_path / "b" / "target.csv").write_text("year,value\n2010,oops\n", encoding="utf-8")
    code = cli.main(["run-all", str(bad), str(good), "--out", str(tmp_path / "res"), "--no-figures"])
    assert code == 2
    assert (tmp_path / "res" / "AAA" / "forecast.csv").is_file()
    assert not (tmp_path / "res" / "BBB" / "forecast.csv").exists()


def test_global_flags_after_subcommand(tmp_path):
    cfg = write_fixture(tmp_path, seed=4)
    assert cli.main(["--seed", "4", "ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "missingness.csv").is_file()


def test_make_fixture_command(tmp_path):
    assert cli.main(["make-fixture", str(tmp_path / "fx"), "--seed", "5"]) == 0
    assert (tmp_path / "fx" / "config.toml").is_file()


def test_synthetic_fixture_shape():
    ds, target, truth = make_country(0)
    assert ds.values.shape == (14, 30) and len(target) == 14
    assert 0.1 < truth["holes"].mean() < 0.3
