"""INI-style experiment configuration with typed, validated blocks."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError, HmiLabError
from ..model import TargetSpec, parse_link
from ..readout import get_activation
from ..spectral import GAP_SCALES, Preprocessing, parse_preprocessing

SECTIONS = ("target", "estimator", "sweep", "network", "output", "paper_scale")
OUTPUT_DIR_ENV = "HMILAB_OUTPUT_DIR"


@dataclass(frozen=True)
class TargetBlock:
    gamma: float
    m_star: int
    d: int
    delta: float = 0.1
    link: str = "he2"
    seed: int = 0


@dataclass(frozen=True)
class EstimatorBlock:
    preprocessing: str = "rational"
    gap_constant: float = 3.0
    gap_scale: str = "absolute"
    r_max: int | None = None


@dataclass(frozen=True)
class SweepBlock:
    alphas: tuple[float, ...]
    seeds: int = 1
    algorithm1: bool = False
    spectra: bool = False
    rmt: bool = False
    n_test: int = 20000


@dataclass(frozen=True)
class NetworkBlock:
    p_rule: str = "default"
    lambda_rule: str = "default"
    activation: str = "sigmoid_centered"

    def width(self, n: int) -> int | None:
        return None if self.p_rule == "default" else int(self.p_rule)

    def ridge(self, n: int) -> float | None:
        return None if self.lambda_rule == "default" else float(self.lambda_rule)


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    target: TargetBlock
    estimator: EstimatorBlock = field(default_factory=EstimatorBlock)
    sweep: SweepBlock = field(default_factory=lambda: SweepBlock((100.0,)))
    network: NetworkBlock = field(default_factory=NetworkBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    paper_scale: dict = field(default_factory=dict)
    name: str = "experiment"

    def spec(self) -> TargetSpec:
        from ..model import make_scale_free_target
        t = self.target
        return make_scale_free_target(t.m_star, t.gamma, t.link, t.delta, t.d)

    def prep(self) -> Preprocessing:
        return parse_preprocessing(self.estimator.preprocessing)

    @property
    def r_max(self) -> int:
        return self.estimator.r_max if self.estimator.r_max is not None else self.target.m_star

    def semantic_dict(self) -> dict:
        """Every field that changes results; output location and the paper-scale table are excluded."""
        return {"target": asdict(self.target), "estimator": asdict(self.estimator),
                "sweep": {**asdict(self.sweep), "alphas": list(self.sweep.alphas)},
                "network": asdict(self.network)}

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def at_paper_scale(self) -> "ExperimentConfig":
        ps = self.paper_scale
        t = replace(self.target, d=int(ps.get("d", self.target.d)))
        s = replace(self.sweep, seeds=int(ps.get("seeds", self.sweep.seeds)))
        return replace(self, target=t, sweep=s)

    def with_output(self, directory: str) -> "ExperimentConfig":
        return replace(self, output=replace(self.output, directory=str(directory)))


def _get(sec: configparser.SectionProxy | dict, key: str, conv, default=None, *, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _alpha_grid(sec) -> tuple[float, ...]:
    if "alphas" in sec:
        grid = _get(sec, "alphas", _floats)
    else:
        start = _get(sec, "alpha_start", float, required=True)
        stop = _get(sec, "alpha_stop", float, required=True)
        pts = _get(sec, "alpha_points", int, required=True)
        if pts < 1 or not 0 < start <= stop:
            raise ConfigError("need 0 < alpha_start <= alpha_stop and alpha_points >= 1")
        grid = tuple(float(x) for x in np.geomspace(start, stop, pts))
    if not grid:
        raise ConfigError("alpha grid is empty")
    if any(not (math.isfinite(a) and a > 0) for a in grid):
        raise ConfigError("alpha values must be positive and finite")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("alpha grid must be strictly increasing")
    return grid


def parse_config(text: str, name: str = "experiment") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config sections {unknown}")
    if "target" not in cp:
        raise ConfigError("config needs a [target] section")
    sec = cp["target"]
    target = TargetBlock(
        gamma=_get(sec, "gamma", float, required=True), m_star=_get(sec, "m_star", int, required=True),
        d=_get(sec, "d", int, required=True), delta=_get(sec, "delta", float, 0.1),
        link=_get(sec, "link", str, "he2"), seed=_get(sec, "seed", int, 0))
    sec = cp["estimator"] if "estimator" in cp else {}
    r_max = _get(sec, "r_max", str, None)
    est = EstimatorBlock(
        preprocessing=_get(sec, "preprocessing", str, "rational"),
        gap_constant=_get(sec, "gap_constant", float, 3.0),
        gap_scale=_get(sec, "gap_scale", str, "absolute"),
        r_max=None if r_max in (None, "auto") else int(r_max))
    if "sweep" not in cp:
        raise ConfigError("config needs a [sweep] section")
    sec = cp["sweep"]
    sweep = SweepBlock(
        alphas=_alpha_grid(sec), seeds=_get(sec, "seeds", int, 1),
        algorithm1=_get(sec, "algorithm1", _bool, False), spectra=_get(sec, "spectra", _bool, False),
        rmt=_get(sec, "rmt", _bool, False), n_test=_get(sec, "n_test", int, 20000))
    sec = cp["network"] if "network" in cp else {}
    net = NetworkBlock(p_rule=_get(sec, "p", str, "default"), lambda_rule=_get(sec, "lambda", str, "default"),
                       activation=_get(sec, "activation", str, "sigmoid_centered"))
    sec = cp["output"] if "output" in cp else {}
    out = OutputBlock(directory=_get(sec, "directory", str, "out"),
                      formats=tuple(_get(sec, "formats", lambda s: s.replace(",", " ").split(), ["csv", "json"])))
    overrides = {k: int(v) for k, v in cp["paper_scale"].items()} if "paper_scale" in cp else {}
    cfg = ExperimentConfig(target, est, sweep, net, out, overrides, name)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Every preset must resolve and every count must be admissible; raises ConfigError."""
    t = cfg.target
    if t.m_star < 1 or t.d < 2 or t.m_star > t.d:
        raise ConfigError("need 1 <= m_star <= d and d >= 2")
    if cfg.sweep.seeds < 1:
        raise ConfigError("seeds must be >= 1")
    if cfg.sweep.n_test < 1000:
        raise ConfigError("n_test must be >= 1000")
    if cfg.estimator.gap_scale not in GAP_SCALES:
        raise ConfigError(f"gap_scale must be one of {GAP_SCALES}")
    if not cfg.estimator.gap_constant > 0:
        raise ConfigError("gap_constant must be positive")
    if cfg.estimator.r_max is not None and not 1 <= cfg.estimator.r_max <= t.d:
        raise ConfigError("r_max must lie in [1, d]")
    bad = [f for f in cfg.output.formats if f not in ("csv", "json")]
    if bad:
        raise ConfigError(f"unknown output formats {bad}")
    try:
        parse_link(t.link)
        cfg.spec()
        cfg.prep()
        get_activation(cfg.network.activation)
        cfg.network.width(1)
        cfg.network.ridge(1)
    except HmiLabError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"bad network rule: {exc}") from None
    if cfg.network.p_rule != "default" and int(cfg.network.p_rule) < 1:
        raise ConfigError("p must be >= 1")
    if cfg.network.lambda_rule != "default" and not float(cfg.network.lambda_rule) > 0:
        raise ConfigError("lambda must be positive")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, name=path.stem)


def recipe_path(name: str) -> Path:
    """Location of a bundled recipe such as ``fig1``."""
    from importlib.resources import files
    p = Path(str(files("hmilab") / "recipes" / f"{name}.cfg"))
    if not p.exists():
        raise ConfigError(f"no bundled recipe {name!r}")
    return p
