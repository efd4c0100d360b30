"""Tag dictionaries and morphological lexicons as tagger input features."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from .corpus import CorpusFormatError, TagSet

MODES = ("none", "nhot", "embed")
POOLINGS = ("concat", "mean")


@dataclass
class Lexicon:
    """A named source mapping word forms to non-empty sets of property indices."""
    name: str
    properties: List[str]
    entries: Dict[str, FrozenSet[int]] = field(default_factory=dict)
    lowercase_fallback: bool = False

    @property
    def m(self) -> int:
        return len(self.properties)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return self.props(word) is not None

    def props(self, word) -> Optional[FrozenSet[int]]:
        p = self.entries.get(word)
        if p is None and self.lowercase_fallback:
            p = self.entries.get(word.lower())
        return p

    def membership(self, words: Sequence[str]) -> np.ndarray:
        """(n, m) 0/1 matrix of property membership."""
        out = np.zeros((len(words), self.m))
        for i, w in enumerate(words):
            p = self.props(w)
            if p:
                out[i, list(p)] = 1.0
        return out


def parse_lexicon(lines, source_name: str, properties: Optional[Sequence[str]] = None,
                  tagset: Optional[TagSet] = None, source=None) -> Lexicon:
    """Read ``word<TAB>p1;p2;...`` lines.

    With ``tagset`` the property list is the tag set (Wiktionary-style); with an
    explicit ``properties`` list that list is used; otherwise it is the sorted
    set of all properties seen.
    """
    raw: Dict[str, set] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise CorpusFormatError("expected word<TAB>properties", lineno, source)
        word, field_ = cols
        props = [p for p in field_.split(";") if p]
        if not word or not props:
            raise CorpusFormatError("empty word or property field", lineno, source)
        if tagset is not None:
            for p in props:
                if p not in tagset:
                    raise CorpusFormatError(f"unknown tag {p!r}", lineno, source)
            props = [tagset.name(tagset.index(p)) for p in props]
        raw.setdefault(word, set()).update(props)

    if tagset is not None:
        plist = list(tagset.names)
    elif properties is not None:
        plist = list(properties)
    else:
        plist = sorted({p for ps in raw.values() for p in ps})
    index = {p: i for i, p in enumerate(plist)}
    entries = {}
    for word, ps in raw.items():
        missing = ps - index.keys()
        if missing:
            raise CorpusFormatError(f"properties {sorted(missing)} not in declared list", source=source)
        entries[word] = frozenset(index[p] for p in ps)
    return Lexicon(source_name, plist, entries)


def load_lexicon(path, source_name: str, properties=None, tagset: Optional[TagSet] = None) -> Lexicon:
    with open(path, encoding="utf-8") as f:
        return parse_lexicon(f, source_name, properties, tagset, source=path)


def n_hot(lex: Lexicon, word: str) -> np.ndarray:
    v = np.zeros(lex.m)
    p = lex.props(word)
    if p:
        v[list(p)] = 1.0
    return v


@dataclass
class LexiconFeatureConfig:
    mode: str = "embed"
    dim: int = 40
    pooling: str = "concat"
    sources: Optional[List[str]] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"lexicon mode must be one of {MODES}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.mode == "embed" and self.dim <= 0:
            raise ValueError("embedding length must be positive")

    def feature_dim(self, lex: Lexicon) -> int:
        if self.mode == "none":
            return 0
        if self.mode == "nhot":
            return lex.m
        return lex.m * self.dim if self.pooling == "concat" else self.dim


def embed_from_membership(M: np.ndarray, E: np.ndarray, pooling: str = "concat") -> np.ndarray:
    """Lexicon features for an (n, m) membership matrix and (m, l) property embeddings."""
    if pooling == "concat":
        return (M[:, :, None] * E[None]).reshape(len(M), -1)
    counts = M.sum(axis=1, keepdims=True)
    return (M @ E) / np.maximum(counts, 1.0)


def embed_from_membership_grad(M: np.ndarray, d_out: np.ndarray, l: int, pooling: str = "concat"):
    """Gradient w.r.t. the (m, l) property embeddings given d(features)."""
    if pooling == "concat":
        return np.einsum("nm,nml->ml", M, d_out.reshape(len(M), M.shape[1], l))
    counts = np.maximum(M.sum(axis=1, keepdims=True), 1.0)
    return (M / counts).T @ d_out


def embed_lex(lex: Lexicon, word: str, emb: np.ndarray, cfg: LexiconFeatureConfig) -> np.ndarray:
    """Embedded lexicon feature for one word: m fixed slots of length l (concat), or their mean."""
    if emb.shape != (lex.m, cfg.dim):
        raise ValueError(f"property embeddings {emb.shape} != ({lex.m}, {cfg.dim})")
    return embed_from_membership(n_hot(lex, word)[None], emb, cfg.pooling)[0]


def lexicon_features(lex: Lexicon, words: Sequence[str], cfg: LexiconFeatureConfig,
                     emb: Optional[np.ndarray] = None) -> np.ndarray:
    """(n, feature_dim) features for a word sequence under ``cfg.mode``."""
    if cfg.mode == "none":
        return np.zeros((len(words), 0))
    M = lex.membership(words)
    if cfg.mode == "nhot":
        return M
    return embed_from_membership(M, emb, cfg.pooling)


def merge_sources(lexicons: Sequence[Lexicon], word: str, cfg: LexiconFeatureConfig,
                  embs: Optional[Dict[str, np.ndarray]] = None) -> np.ndarray:
    """Concatenate each source's feature vector for ``word`` in the given order."""
    if not lexicons:
        raise ValueError("need at least one lexicon source")
    parts = [lexicon_features(lex, [word], cfg, (embs or {}).get(lex.name))[0] for lex in lexicons]
    return np.concatenate(parts)
