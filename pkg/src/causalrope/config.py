"""Pipeline configuration: one JSON file, validated section by section."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .attnlayer import AttentionConfig
from .discovery import DiscoveryConfig
from .embed import EmbeddingConfig


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    M: int = 10
    m_attach: int = 2
    N: int = 5000
    hidden: int = 16
    weight_lo: float = 0.5
    weight_hi: float = 2.0

    def __post_init__(self):
        if self.M < 2 or not 1 <= self.m_attach < self.M:
            raise ValueError("need M >= 2 and 1 <= m_attach < M")
        if self.N < 1 or self.hidden < 1:
            raise ValueError("N and hidden must be >= 1")
        if not 0 < self.weight_lo <= self.weight_hi:
            raise ValueError("need 0 < weight_lo <= weight_hi")


@dataclass
class BenchConfig:
    D: int = 128
    distance_range: tuple[float, float] = (1.0, 5.0)
    norm_range: tuple[float, float] = (0.3, 0.98)
    grid_size: int = 20
    limit_points: int = 50
    collinear_trials: int = 100
    robustness_sigmas: tuple[float, ...] = (0.1, 0.2, 0.3)
    robustness_max_N: int = 100
    robustness_T: int = 100
    robustness_eps: tuple[float, ...] = (0.5, 1.0)
    unbiasedness_sigma: float = math.pi / 12
    unbiasedness_trials: int = 100_000
    distinguish_trials: int = 10_000
    distinguish_delta_std: float = 0.1
    distinguish_noise_std: float = 0.05
    bootstrap_resamples: int = 10_000

    def __post_init__(self):
        self.distance_range = tuple(self.distance_range)
        self.norm_range = tuple(self.norm_range)
        self.robustness_sigmas = tuple(self.robustness_sigmas)
        self.robustness_eps = tuple(self.robustness_eps)
        if self.D < 2 or self.D % 2:
            raise ValueError("D must be a positive even number")
        if not 0 < self.norm_range[0] <= self.norm_range[1] < 1:
            raise ValueError("norm_range must lie inside (0, 1)")
        if not 0 <= self.unbiasedness_sigma <= math.pi / 12:
            raise ValueError("unbiasedness_sigma must lie in [0, pi/12]")
        if self.distinguish_trials < 1000:
            raise ValueError("distinguish_trials must be >= 1000")


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "out"
    angle_scale: float = math.pi / 4
    synth: SynthConfig = field(default_factory=SynthConfig)
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    attention: AttentionConfig = field(default_factory=lambda: AttentionConfig(D=6))
    bench: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self):
        if self.attention.D != 2 * self.embedding.d:
            raise ConfigError(f"attention.D = {self.attention.D} violates D = 2d "
                              f"with embedding.d = {self.embedding.d}")
        if self.angle_scale <= 0:
            raise ConfigError("angle_scale must be positive")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        # the global seed drives every stage
        out["embedding"].pop("seed")
        return out


_SECTIONS = {"synth": SynthConfig, "discovery": DiscoveryConfig, "embedding": EmbeddingConfig,
             "attention": AttentionConfig, "bench": BenchConfig}
_TOP = {"seed", "out", "angle_scale"}


def _build(section: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - ({"seed"} if cls is EmbeddingConfig else set())
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = dict(raw.get(name, {}))
        if name == "embedding":
            if "seed" in section:
                raise ConfigError("embedding: the seed comes from the top-level 'seed'")
            section["seed"] = seed
        if name == "attention" and "D" not in section:
            section["D"] = 2 * parts["embedding"].d
        parts[name] = _build(name, cls, section) if name != "embedding" else _build_embedding(section)
    angle_scale = raw.get("angle_scale", math.pi / 4)
    if not isinstance(angle_scale, (int, float)) or isinstance(angle_scale, bool):
        raise ConfigError("angle_scale: must be a number")
    return PipelineConfig(seed=seed, out=str(raw.get("out", "out")), angle_scale=float(angle_scale), **parts)


def _build_embedding(section: dict) -> EmbeddingConfig:
    seed = section.pop("seed")
    cfg = _build("embedding", EmbeddingConfig, section)
    return dataclasses.replace(cfg, seed=seed)


def load_config(path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
