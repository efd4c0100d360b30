"""Tagged-corpus reading/writing, embedding files and vocabularies."""
from __future__ import annotations

import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNIVERSAL_TAGS = ("NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM",
                  "CONJ", "PRT", "PUNCT", "X")
TAG_ALIASES = {".": "PUNCT"}
UNK = "<UNK>"


class CorpusFormatError(ValueError):
    def __init__(self, message, lineno=None, source=None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.lineno = lineno


class TagSet:
    """Ordered inventory of 12 tag names; indices are positions in that order."""

    def __init__(self, names: Sequence[str] = UNIVERSAL_TAGS, aliases=None):
        names = tuple(names)
        if len(names) != 12 or len(set(names)) != 12:
            raise ValueError(f"a tag set needs exactly 12 distinct names, got {names}")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}
        for alias, target in (TAG_ALIASES if aliases is None else aliases).items():
            if target in self._index and alias not in self._index:
                self._index[alias] = self._index[target]

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name):
        return name in self._index

    def __eq__(self, other):
        return isinstance(other, TagSet) and self.names == other.names

    def __repr__(self):
        return f"TagSet({list(self.names)})"

    def index(self, name: str) -> int:
        return self._index[name]

    def name(self, index: int) -> str:
        return self.names[index]


@dataclass
class Sentence:
    tokens: List[str]
    tags: Optional[List[Optional[int]]] = None
    loss_mask: Optional[List[bool]] = None
    coverage: Optional[float] = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")
        if self.tags is None:
            self.tags = [None] * len(self.tokens)
        if self.loss_mask is None:
            self.loss_mask = [t is not None for t in self.tags]
        if not (len(self.tokens) == len(self.tags) == len(self.loss_mask)):
            raise ValueError("tokens, tags and loss_mask must have equal length")

    def __len__(self):
        return len(self.tokens)

    @property
    def is_tagged(self) -> bool:
        return any(t is not None for t in self.tags)

    @property
    def n_trainable(self) -> int:
        return sum(1 for t, m in zip(self.tags, self.loss_mask) if m and t is not None)


def _lines(text):
    if isinstance(text, str):
        return io.StringIO(text)
    return text


def parse_corpus(text, tagset: TagSet = None, source=None) -> List[Sentence]:
    """Parse two-column ``token<TAB>tag`` text (or a text stream) into sentences.

    Blank lines separate sentences, ``#`` lines are comments except
    ``# coverage=<float>`` which is attached to the following sentence.
    """
    tagset = tagset or TagSet()
    sentences = []
    tokens, tags, coverage = [], [], None
    lineno = 0

    def flush():
        nonlocal tokens, tags, coverage
        if tokens:
            sentences.append(Sentence(tokens, tags, coverage=coverage))
        elif coverage is not None:
            raise CorpusFormatError("coverage comment without a sentence", lineno, source)
        tokens, tags, coverage = [], [], None

    for lineno, line in enumerate(_lines(text), 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("coverage="):
                try:
                    coverage = float(body[len("coverage="):])
                except ValueError:
                    raise CorpusFormatError(f"bad coverage value {body!r}", lineno, source) from None
            continue
        cols = line.split("\t")
        if len(cols) > 2:
            raise CorpusFormatError(f"expected at most 2 tab-separated columns, got {len(cols)}",
                                    lineno, source)
        token = cols[0]
        if not token:
            raise CorpusFormatError("empty token", lineno, source)
        tag = None
        if len(cols) == 2 and cols[1] != "":
            if cols[1] not in tagset:
                raise CorpusFormatError(f"unknown tag {cols[1]!r}", lineno, source)
            tag = tagset.index(cols[1])
        tokens.append(token)
        tags.append(tag)
    flush()
    return sentences


def read_corpus(path, tagset: TagSet = None) -> List[Sentence]:
    with open(path, encoding="utf-8") as f:
        return parse_corpus(f, tagset, source=path)


def emit_corpus(sentences: Iterable[Sentence], tagset: TagSet = None) -> str:
    tagset = tagset or TagSet()
    out = []
    for s in sentences:
        if s.coverage is not None:
            out.append(f"# coverage={s.coverage!r}\n")
        for tok, tag in zip(s.tokens, s.tags):
            out.append(tok + "\n" if tag is None else f"{tok}\t{tagset.name(tag)}\n")
        out.append("\n")
    return "".join(out)


def write_corpus(path, sentences, tagset: TagSet = None):
    with open(path, "w", encoding="utf-8") as f:
        f.write(emit_corpus(sentences, tagset))


class EmbeddingTable:
    """Word vectors of dimension ``dim`` with a designated UNK vector."""

    def __init__(self, words: Sequence[str], vectors: np.ndarray, unk: np.ndarray):
        self.words = list(words)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.unk = np.asarray(unk, dtype=np.float64)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.dim = self.unk.shape[0]

    def __contains__(self, word):
        return word in self.index

    def __len__(self):
        return len(self.words)

    def __getitem__(self, word) -> np.ndarray:
        i = self.index.get(word)
        return self.unk if i is None else self.vectors[i]


UNK_NAMES = (UNK, "<unk>", "UNK")


def load_embeddings(path) -> EmbeddingTable:
    """Read a text embedding file (``word v1 ... vd`` per line, optional ``count dim`` header)."""
    rows = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\r\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            word, vals = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in vals])
            except ValueError:
                raise CorpusFormatError("non-numeric vector component", lineno, path) from None
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise CorpusFormatError("vector has no components", lineno, path)
            elif len(vec) != dim:
                raise CorpusFormatError(f"dimension {len(vec)} != {dim}", lineno, path)
            if word in rows:
                logger.warning("%s:%d: repeated word %r, keeping last occurrence", path, lineno, word)
                del rows[word]
            rows[word] = vec
    if not rows:
        raise CorpusFormatError("empty embeddings file", source=path)
    unk = None
    for name in UNK_NAMES:
        if name in rows:
            unk = rows.pop(name)
            break
    words = list(rows)
    vectors = np.array([rows[w] for w in words]) if words else np.zeros((0, dim))
    if unk is None:
        unk = vectors.mean(axis=0)
    return EmbeddingTable(words, vectors, unk)


def save_embeddings(path, table: EmbeddingTable, header=True):
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write(f"{len(table) + 1} {table.dim}\n")
        f.write(UNK + " " + " ".join(repr(float(v)) for v in table.unk) + "\n")
        for w, v in zip(table.words, table.vectors):
            f.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


@dataclass
class Vocab:
    """Training vocabulary; index 0 is reserved for UNK."""
    index: dict = field(default_factory=lambda: {UNK: 0})
    freq: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.index)

    def __contains__(self, word):
        return word in self.index and word != UNK

    def lookup(self, word) -> int:
        return self.index.get(word, 0)

    def words(self) -> List[str]:
        return sorted(self.index, key=self.index.get)


def build_vocab(train: Sequence[Sentence], min_freq: int = 1) -> Vocab:
    counts = Counter(tok for s in train for tok in s.tokens)
    vocab = Vocab()
    for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if counts[tok] >= min_freq and tok != UNK:
            vocab.index[tok] = len(vocab.index)
            vocab.freq[tok] = counts[tok]
    return vocab
