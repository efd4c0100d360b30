"""Multi-source annotation projection: weighted vote decoding, alignment
coverage scoring and training-instance selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import CorpusFormatError, Sentence, TagSet

DEFAULT_K = 5000


class VoteError(ValueError):
    pass


@dataclass(frozen=True)
class SourceVote:
    """One source's vote: alignment probability and a confidence distribution over tag ids."""
    source: str
    prob: float
    dist: Tuple[Tuple[int, float], ...]

    @classmethod
    def single(cls, source, prob, tag, conf=1.0):
        return cls(source, prob, ((tag, conf),))

    def validate(self, n_tags: int = 12):
        if not 0.0 <= self.prob <= 1.0 or math.isnan(self.prob):
            raise VoteError(f"alignment probability {self.prob} outside [0, 1]")
        if not self.dist:
            raise VoteError("empty confidence distribution")
        seen = set()
        for t, c in self.dist:
            if not 0 <= t < n_tags:
                raise VoteError(f"tag index {t} out of range")
            if t in seen:
                raise VoteError(f"tag index {t} listed twice")
            seen.add(t)
            if not 0.0 <= c <= 1.0 or math.isnan(c):
                raise VoteError(f"confidence {c} outside [0, 1]")
        # a single (tag, confidence) pair is a degenerate distribution
        if len(self.dist) > 1 and abs(sum(c for _, c in self.dist) - 1.0) > 1e-9:
            raise VoteError("confidence distribution does not sum to 1")


def vote_scores(votes: Iterable[SourceVote], n_tags: int = 12) -> np.ndarray:
    scores = np.zeros(n_tags)
    for v in votes:
        v.validate(n_tags)
        for t, c in v.dist:
            scores[t] += v.prob * c
    return scores


def vote_token(votes: Sequence[SourceVote], n_tags: int = 12) -> Optional[Tuple[int, float]]:
    """Weighted majority vote; ``None`` when the token is uncovered (zero vote mass).

    Ties go to the lowest tag index.
    """
    scores = vote_scores(votes, n_tags)
    if scores.sum() <= 0.0:
        return None
    best = int(np.argmax(scores))
    return best, float(scores[best])


@dataclass
class ProjectedSentence:
    tokens: List[str]
    tags: List[Optional[int]]
    mass: List[float]
    source_coverage: Dict[str, float]
    n_sources: int
    coverage: float = field(init=False)

    def __post_init__(self):
        if self.n_sources == 0:
            self.coverage = 0.0
        else:
            self.coverage = mean_coverage(
                list(self.source_coverage.values()) + [0.0] * (self.n_sources - len(self.source_coverage)))

    @property
    def loss_mask(self) -> List[bool]:
        return [t is not None for t in self.tags]

    def to_sentence(self) -> Sentence:
        return Sentence(list(self.tokens), list(self.tags), coverage=self.coverage)


def mean_coverage(coverages: Sequence[float]) -> float:
    if len(coverages) == 0:
        raise ValueError("mean coverage needs at least one source")
    return float(sum(coverages) / len(coverages))


def project_sentence(tokens: Sequence[str], votes: Iterable[Tuple[int, SourceVote]],
                     n_sources: Optional[int] = None, n_tags: int = 12) -> ProjectedSentence:
    """Decode one target sentence from ``(position, vote)`` pairs of all sources.

    ``n_sources`` is the declared source count; sources that cast no vote count
    as zero coverage. Defaults to the number of distinct voting sources.
    """
    n = len(tokens)
    per_pos: List[List[SourceVote]] = [[] for _ in range(n)]
    linked: Dict[str, set] = {}
    for j, v in votes:
        if not 0 <= j < n:
            raise IndexError(f"vote position {j} outside sentence of length {n}")
        per_pos[j].append(v)
        linked.setdefault(v.source, set()).add(j)
    if n_sources is None:
        n_sources = len(linked)
    if len(linked) > n_sources:
        raise ValueError(f"{len(linked)} voting sources exceed declared count {n_sources}")
    tags, mass = [], []
    for pv in per_pos:
        res = vote_token(pv, n_tags)
        tags.append(None if res is None else res[0])
        mass.append(float(vote_scores(pv, n_tags).sum()) if pv else 0.0)
    cov = {s: len(pos) / n for s, pos in sorted(linked.items())}
    return ProjectedSentence(list(tokens), tags, mass, cov, n_sources)


def select_top_k(corpus: Sequence, k: int = DEFAULT_K) -> list:
    """The ``k`` highest-coverage sentences, descending, ties in corpus order."""
    if k <= 0:
        return []
    order = sorted(range(len(corpus)), key=lambda i: -corpus[i].coverage)
    return [corpus[i] for i in order[:k]]


def random_select(corpus: Sequence, k: int, seed: int) -> list:
    """Uniform sample without replacement, in corpus order, deterministic per seed."""
    if k >= len(corpus):
        return list(corpus)
    if k <= 0:
        return []
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(corpus), size=k, replace=False))
    return [corpus[i] for i in idx]


# -- projection file ------------------------------------------------------------

@dataclass
class ProjectionBlock:
    tokens: List[str]
    votes: List[Tuple[int, SourceVote]]
    lineno: int


def _parse_dist(text: str, tagset: TagSet, lineno, source):
    dist = []
    for item in text.split(","):
        name, sep, conf = item.rpartition(":")
        if not sep or name not in tagset:
            raise CorpusFormatError(f"bad tag:confidence item {item!r}", lineno, source)
        try:
            dist.append((tagset.index(name), float(conf)))
        except ValueError:
            raise CorpusFormatError(f"bad confidence in {item!r}", lineno, source) from None
    return tuple(dist)


def parse_projection(lines, tagset: TagSet = None, source=None) -> List[ProjectionBlock]:
    """Read projection blocks: ``#tokens<TAB>t1 t2 ...`` then ``s<TAB>j<TAB>a<TAB>TAG:conf[,...]`` lines."""
    tagset = tagset or TagSet()
    blocks: List[ProjectionBlock] = []
    cur: Optional[ProjectionBlock] = None
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            if cur is not None:
                blocks.append(cur)
                cur = None
            continue
        cols = line.split("\t")
        if cols[0] == "#tokens":
            if cur is not None:
                raise CorpusFormatError("new block before blank line", lineno, source)
            if len(cols) != 2 or not cols[1].strip():
                raise CorpusFormatError("expected #tokens<TAB>tokens", lineno, source)
            cur = ProjectionBlock(cols[1].split(" "), [], lineno)
            if any(not t for t in cur.tokens):
                raise CorpusFormatError("empty token", lineno, source)
            continue
        if cur is None:
            raise CorpusFormatError("vote line outside a block", lineno, source)
        if len(cols) != 4:
            raise CorpusFormatError("expected source<TAB>position<TAB>prob<TAB>dist", lineno, source)
        s, j, a, d = cols
        try:
            j, a = int(j), float(a)
        except ValueError:
            raise CorpusFormatError("bad position or probability", lineno, source) from None
        if not 0 <= j < len(cur.tokens):
            raise CorpusFormatError(f"position {j} out of range", lineno, source)
        vote = SourceVote(s, a, _parse_dist(d, tagset, lineno, source))
        try:
            vote.validate(len(tagset))
        except VoteError as e:
            raise CorpusFormatError(str(e), lineno, source) from None
        cur.votes.append((j, vote))
    if cur is not None:
        blocks.append(cur)
    return blocks


def format_projection(blocks: Iterable[ProjectionBlock], tagset: TagSet = None) -> str:
    tagset = tagset or TagSet()
    out = []
    for b in blocks:
        out.append("#tokens\t" + " ".join(b.tokens) + "\n")
        for j, v in b.votes:
            dist = ",".join(f"{tagset.name(t)}:{c!r}" for t, c in v.dist)
            out.append(f"{v.source}\t{j}\t{v.prob!r}\t{dist}\n")
        out.append("\n")
    return "".join(out)


def project_file(lines, n_sources: Optional[int] = None, tagset: TagSet = None,
                 source=None) -> List[ProjectedSentence]:
    """Decode every block; undeclared source count defaults to all sources seen in the file."""
    tagset = tagset or TagSet()
    blocks = parse_projection(lines, tagset, source)
    if n_sources is None:
        n_sources = len({v.source for b in blocks for _, v in b.votes})
    return [project_sentence(b.tokens, b.votes, n_sources, len(tagset)) for b in blocks]

