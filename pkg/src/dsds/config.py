"""Experiment configuration: flat ``key = value`` files, shipped presets and flag overrides."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Dict, List, Optional

from .nn import ConfigurationError
from .tagger import TrainConfig

LEX_MODES = ("none", "tc", "nhot", "embed")
SELECTION_MODES = ("coverage", "random")

# fields that do not change what a single run computes
_RUN_INDEPENDENT = {"out", "seeds", "sizes", "samples", "workers", "seed", "k"}


@dataclass
class ExperimentConfig:
    train: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None
    projection: Optional[str] = None
    embeddings: Optional[str] = None
    lexicons: Dict[str, str] = field(default_factory=dict)
    features: List[str] = field(default_factory=list)
    lex_mode: str = "none"
    lex_dim: int = 40
    lex_pooling: str = "concat"
    lex_lowercase: bool = False
    mode: str = "coverage"
    k: int = 5000
    sources: Optional[int] = None
    seed: int = 1
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3])
    samples: int = 5
    sizes: List[int] = field(default_factory=list)
    epochs: int = 10
    word_dropout: float = 0.25
    dropout_scheme: str = "freq"
    lr: float = 0.1
    clip: float = 5.0
    d_w: int = 64
    d_c: int = 32
    h_c: int = 50
    h_w: int = 100
    min_freq: int = 1
    workers: int = 1
    out: Optional[str] = None

    def validate(self, need_paths=()):
        if self.lex_mode not in LEX_MODES:
            raise ConfigurationError(f"lex_mode must be one of {LEX_MODES}")
        if self.mode not in SELECTION_MODES:
            raise ConfigurationError(f"mode must be one of {SELECTION_MODES}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.k < 0 or self.samples < 1 or self.workers < 1:
            raise ConfigurationError("k must be >= 0, samples and workers >= 1")
        if self.lex_mode != "none" and not self.lexicons:
            raise ConfigurationError(f"lex_mode {self.lex_mode} needs at least one lexicon")
        for name in need_paths:
            path = getattr(self, name)
            if path is None:
                raise ConfigurationError(f"missing required path: {name}")
        for name in ("train", "dev", "test", "projection", "embeddings"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ConfigurationError(f"{name} path does not exist: {path}")
        for name, path in self.lexicons.items():
            if not os.path.exists(path):
                raise ConfigurationError(f"lexicon {name} path does not exist: {path}")
        known = {lexicon_name(n) for n in self.lexicons}
        missing = [n for n in self.features if n not in known]
        if missing and self.lex_mode != "none":
            raise ConfigurationError(f"feature lexicons not supplied: {', '.join(missing)}")
        self.train_config(self.seed)
        return self

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, word_dropout=self.word_dropout, dropout_scheme=self.dropout_scheme,
            lr=self.lr, clip=self.clip, seed=seed, k=self.k, embeddings=self.embeddings,
            d_w=self.d_w, d_c=self.d_c, h_c=self.h_c, h_w=self.h_w,
            lex_mode=self.lex_mode if self.lex_mode in ("nhot", "embed") else "none",
            lex_dim=self.lex_dim, lex_pooling=self.lex_pooling, lex_lowercase=self.lex_lowercase,
            min_freq=self.min_freq)

    def digest(self) -> str:
        """Short hash of everything that determines a single run except its seed and size."""
        d = {k: v for k, v in asdict(self).items() if k not in _RUN_INDEPENDENT}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def _convert(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(ExperimentConfig)}.get(name)
    if ftype is None:
        raise ConfigurationError(f"unknown configuration key {name!r}")
    if raw.lower() in ("none", "") and "Optional" in str(ftype):
        return None
    try:
        if "List[int]" in str(ftype):
            return [int(v) for v in raw.replace(",", " ").split()]
        if "List[str]" in str(ftype):
            return raw.replace(",", " ").split()
        if "bool" in str(ftype):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if "int" in str(ftype):
            return int(raw)
        if "float" in str(ftype):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None
    return raw


def apply_settings(cfg: ExperimentConfig, items: Dict[str, str]) -> ExperimentConfig:
    for key, raw in items.items():
        key = key.strip().replace("-", "_")
        if key.startswith("lexicon."):
            cfg.lexicons[key[len("lexicon."):]] = raw
        elif key == "lexicons":
            cfg.lexicons = parse_lexicon_specs(raw.split())
        else:
            setattr(cfg, key, _convert(key, raw.strip()))
    return cfg


def parse_config_text(text: str, source="<config>") -> Dict[str, str]:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        items[k.strip()] = v.strip()
    return items


def preset_names() -> List[str]:
    return sorted(p.name[:-4] for p in resources.files("dsds.presets").iterdir()
                  if p.name.endswith(".cfg"))


def load_preset(name: str) -> Dict[str, str]:
    res = resources.files("dsds.presets").joinpath(name + ".cfg")
    if not res.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config_text(res.read_text(encoding="utf-8"), f"preset {name}")


def load_config_file(path) -> Dict[str, str]:
    try:
        with open(path, encoding="utf-8") as f:
            return parse_config_text(f.read(), path)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None


def parse_lexicon_specs(specs) -> Dict[str, str]:
    """``NAME=PATH`` items (NAME may carry a ``:tags``/``:morph`` kind suffix)."""
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise ConfigurationError(f"lexicon spec must be NAME=PATH, got {spec!r}")
        out[name] = path
    return out


def lexicon_name(spec_name: str) -> str:
    return spec_name.split(":", 1)[0]


def lexicon_kind(spec_name: str) -> Optional[str]:
    _, _, kind = spec_name.partition(":")
    if kind and kind not in ("tags", "morph"):
        raise ConfigurationError(f"lexicon kind must be tags or morph, got {kind!r}")
    return kind or None


def build_config(presets=(), config_file: Optional[str] = None,
                 overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for preset in presets:
        apply_settings(cfg, load_preset(preset))
    if config_file:
        apply_settings(cfg, load_config_file(config_file))
    if overrides:
        apply_settings(cfg, overrides)
    return cfg
