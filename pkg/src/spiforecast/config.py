"""Run configuration and its TOML file form.

Keys in the file mirror the :class:`RunConfig` field names; nested dataclass
fields are TOML tables::

    country = "BHR"
    year_window = [2010, 2023]
    horizon_years = [2024, 2025, 2026, 2027]
    seed = 0
    out_dir = "out/BHR"

    [inputs]
    panel_csv = "wdi.csv"
    target_csv = "spi_bhr.csv"

    [selection]
    epsilon = 0.25
    k = 8

    [grid]
    learning_rate = [0.01, 0.1, 0.2]
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .forest import RfConfig
from .gbtree import GbtParams
from .tuning import Grid, SplitSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InputConfig:
    panel_csv: str | None = None
    target_csv: str | None = None
    api_base_url: str | None = None
    indicators: tuple[str, ...] = ()

    def __post_init__(self):
        if self.panel_csv is None and self.api_base_url is None:
            raise ConfigError("inputs need panel_csv or api_base_url")


@dataclass(frozen=True)
class SelectionConfig:
    epsilon: float = 0.25
    k: int = 8
    two_stage_selection: bool = False
    pre_k: int = 20

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("selection.epsilon must be >= 0")
        if self.k < 1 or self.pre_k < 1:
            raise ConfigError("selection.k and selection.pre_k must be >= 1")


@dataclass(frozen=True)
class ArimaConfig:
    min_len: int = 10
    min_accuracy: float = 80.0


@dataclass(frozen=True)
class TuningConfig:
    folds: int = 3
    block: int = 2


@dataclass(frozen=True)
class RunConfig:
    country: str
    inputs: InputConfig
    year_window: tuple[int, int] = (2010, 2023)
    missing_threshold: float = 0.70
    selection: SelectionConfig = SelectionConfig()
    arima: ArimaConfig = ArimaConfig()
    grid: Grid = Grid()
    split: SplitSpec = SplitSpec()
    tuning: TuningConfig = TuningConfig()
    imputation: RfConfig = RfConfig()
    booster: GbtParams = GbtParams()
    horizon_years: tuple[int, ...] = (2024, 2025, 2026, 2027)
    seed: int = 0
    out_dir: str = "out"
    n_jobs: int = 1

    def __post_init__(self):
        start, end = self.year_window
        if end < start:
            raise ConfigError("year_window must be [start, end] with start <= end")
        if not 0 < self.missing_threshold < 1:
            raise ConfigError("missing_threshold must lie in (0, 1)")
        if any(y <= start for y in self.horizon_years):
            raise ConfigError("horizon years must come after the window start")
        if list(self.horizon_years) != sorted(set(self.horizon_years)):
            raise ConfigError("horizon years must be strictly increasing")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be >= 1")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; output locations are excluded."""
        d = self.to_dict()
        d.pop("out_dir", None)
        d.pop("n_jobs", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw) if kw else self


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_NESTED = {
    "inputs": InputConfig,
    "selection": SelectionConfig,
    "arima": ArimaConfig,
    "grid": Grid,
    "split": SplitSpec,
    "tuning": TuningConfig,
    "imputation": RfConfig,
    "booster": GbtParams,
}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    data = dict(data)
    if "country" not in data:
        raise ConfigError("config needs a 'country' key")
    if "inputs" not in data:
        raise ConfigError("config needs an [inputs] table")
    kw = {}
    for name, cls in _NESTED.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"'{name}' must be a table")
            if name == "inputs" and base_dir is not None:
                section = dict(section)
                for key in ("panel_csv", "target_csv"):
                    if section.get(key):
                        section[key] = str((base_dir / section[key]).resolve()) \
                            if not Path(section[key]).is_absolute() else section[key]
            kw[name] = _build(cls, section, f"[{name}]")
    if base_dir is not None and "out_dir" in data and not Path(data["out_dir"]).is_absolute():
        data["out_dir"] = str(base_dir / data["out_dir"])
    kw.update(data)
    return _build(RunConfig, kw, "config")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)
