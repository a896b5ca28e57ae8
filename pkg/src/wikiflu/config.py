"""Run configuration loaded from TOML, with flag overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import tomli

from . import __version__
from .featureset import METHODS
from .regress import LassoConfig

DATASETS = ("PV", "PC+PV")
STANDARDIZATIONS = ("train", "global")


class ConfigError(ValueError):
    pass


@dataclass
class RankingConfig:
    reference: str = "Influenza"
    top_n: int = 100
    cyclerank_k: int = 4
    cyclerank_sigma: str = "inverse"
    max_k: int = 8
    damping: float = 0.85
    tol: float = 1e-10
    max_iter: int = 200
    exclude_reference: bool = False


@dataclass
class Paths:
    weekly: str = ""
    incidence: str = ""
    graph: str = ""
    categories: str = ""


@dataclass
class RunConfig:
    country: str = ""
    language: str = ""
    datasets: list[str] = field(default_factory=lambda: list(DATASETS))
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seasons: list[str] = field(default_factory=list)
    evaluate_seasons: list[str] = field(default_factory=list)
    include_week53: bool = False
    standardization: str = "train"
    seed: int = 0
    top_k: int = 5
    jobs: int = 1
    out_dir: str = "results"
    paths: Paths = field(default_factory=Paths)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    lasso: LassoConfig = field(default_factory=LassoConfig)
    base_dir: str = field(default=".", compare=False)

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def validate(self, check_paths: bool = True) -> None:
        bad = [d for d in self.datasets if d not in DATASETS]
        if bad:
            raise ConfigError(f"unknown datasets {bad}; choose from {DATASETS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.standardization not in STANDARDIZATIONS:
            raise ConfigError(f"standardization must be one of {STANDARDIZATIONS}")
        if len(self.seasons) < 2:
            raise ConfigError("at least two seasons are required")
        missing = [s for s in self.evaluate_seasons if s not in self.seasons]
        if missing:
            raise ConfigError(f"evaluate_seasons not listed in seasons: {missing}")
        if not check_paths:
            return
        needed = {"weekly": self.paths.weekly, "incidence": self.paths.incidence}
        if "categories" in self.methods:
            needed["categories"] = self.paths.categories
        if {"cyclerank", "ppagerank"} & set(self.methods):
            needed["graph"] = self.paths.graph
        for name, p in needed.items():
            if not p:
                raise ConfigError(f"paths.{name} is required")
            if not self.resolve(p).exists():
                raise ConfigError(f"paths.{name} does not exist: {self.resolve(p)}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def stamp(self) -> str:
        return stamp(self.digest())


def stamp(digest: str) -> str:
    return f"wikiflu {__version__} config={digest}"


def _section(cls, raw: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def from_dict(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    raw = dict(raw)
    paths = _section(Paths, raw.pop("paths", {}), "paths")
    ranking = _section(RankingConfig, raw.pop("ranking", {}), "ranking")
    lasso_raw = dict(raw.pop("lasso", {}))
    lasso_raw.setdefault("seed", raw.get("seed", 0))
    lasso = _section(LassoConfig, lasso_raw, "lasso")
    cfg = _section(RunConfig, raw, "top level")
    cfg.paths, cfg.ranking, cfg.lasso = paths, ranking, lasso
    cfg.base_dir = str(base_dir)
    if not cfg.evaluate_seasons:
        cfg.evaluate_seasons = list(cfg.seasons)
    return cfg


def load(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a TOML run file; ``overrides`` (dotted keys) win over the file."""
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return from_dict(raw, Path(path).parent)
