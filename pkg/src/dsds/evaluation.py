"""Accuracy, OOV breakdowns, correlation, multi-seed aggregation and learning curves."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Vocab
from .lexicon import Lexicon
from .projection import random_select, select_top_k


class UndefinedMetric(ValueError):
    """A statistic that does not exist for the given data (e.g. zero variance)."""


class CurveRunError(RuntimeError):
    def __init__(self, k, sample, seed, cause):
        super().__init__(f"run k={k} sample={sample} seed={seed} failed: {cause!r}")
        self.k, self.sample, self.seed = k, sample, seed


def _check_shapes(gold, pred):
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ValueError(f"sentence {i}: {len(g)} gold tags vs {len(p)} predicted")


def accuracy(gold: Sequence[Sequence[int]], pred: Sequence[Sequence[int]]) -> float:
    """Token accuracy over all positions with a gold tag."""
    _check_shapes(gold, pred)
    correct = total = 0
    for g, p in zip(gold, pred):
        for a, b in zip(g, p):
            if a is None:
                continue
            total += 1
            correct += a == b
    if total == 0:
        raise UndefinedMetric("no gold-tagged tokens")
    return correct / total


def _ratio(c, n) -> Optional[float]:
    return c / n if n else None


@dataclass
class EvalReport:
    n_tokens: int
    n_correct: int
    per_tag: Dict[int, Tuple[int, int]]      # tag -> (correct, total)
    n_oov: int
    n_oov_correct: int
    n_oov_in_lex: int
    n_oov_in_lex_correct: int
    n_oov_not_in_lex: int
    n_oov_not_in_lex_correct: int
    n_covered: int = 0                         # tokens in at least one lexicon

    @property
    def accuracy(self):
        return _ratio(self.n_correct, self.n_tokens)

    @property
    def oov_accuracy(self):
        return _ratio(self.n_oov_correct, self.n_oov)

    @property
    def oov_in_lex_accuracy(self):
        return _ratio(self.n_oov_in_lex_correct, self.n_oov_in_lex)

    @property
    def oov_not_in_lex_accuracy(self):
        return _ratio(self.n_oov_not_in_lex_correct, self.n_oov_not_in_lex)

    @property
    def lexicon_coverage(self):
        return _ratio(self.n_covered, self.n_tokens)

    def per_tag_accuracy(self) -> Dict[int, Optional[float]]:
        return {t: _ratio(c, n) for t, (c, n) in sorted(self.per_tag.items())}

    def rows(self, tag_names=None):
        """(metric, value) pairs; undefined values are ``None``."""
        out = [("accuracy", self.accuracy), ("tokens", self.n_tokens),
               ("oov_accuracy", self.oov_accuracy), ("oov_tokens", self.n_oov),
               ("oov_in_lex_accuracy", self.oov_in_lex_accuracy), ("oov_in_lex_tokens", self.n_oov_in_lex),
               ("oov_not_in_lex_accuracy", self.oov_not_in_lex_accuracy),
               ("oov_not_in_lex_tokens", self.n_oov_not_in_lex),
               ("lexicon_token_coverage", self.lexicon_coverage)]
        for t, acc in self.per_tag_accuracy().items():
            name = tag_names[t] if tag_names else str(t)
            out.append((f"tag_accuracy:{name}", acc))
        return out


def oov_split(tokens: Sequence[Sequence[str]], gold, pred, train_vocab: Vocab,
              lexicons: Sequence[Lexicon] = ()) -> EvalReport:
    """Accuracy overall, per tag, and for OOV tokens split by lexicon membership.

    A token is OOV when absent from ``train_vocab``; it is covered when found in
    at least one lexicon.
    """
    _check_shapes(gold, pred)
    _check_shapes(tokens, gold)
    n = c = oov = oov_c = il = il_c = nl = nl_c = cov = 0
    per_tag: Dict[int, List[int]] = {}
    for toks, g, p in zip(tokens, gold, pred):
        for w, a, b in zip(toks, g, p):
            if a is None:
                continue
            ok = int(a == b)
            n += 1
            c += ok
            pt = per_tag.setdefault(a, [0, 0])
            pt[0] += ok
            pt[1] += 1
            covered = any(w in lex for lex in lexicons)
            cov += covered
            if w in train_vocab:
                continue
            oov += 1
            oov_c += ok
            if covered:
                il += 1
                il_c += ok
            else:
                nl += 1
                nl_c += ok
    return EvalReport(n, c, {t: (v[0], v[1]) for t, v in per_tag.items()},
                      oov, oov_c, il, il_c, nl, nl_c, cov)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length sequences of at least 2 values")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt((dx * dx).sum()), math.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetric("correlation undefined for zero variance")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def multi_seed(results: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for a single run.

    Exact rational arithmetic, so identical runs give std exactly 0.
    """
    r = [float(v) for v in results]
    if not r:
        raise ValueError("no run results")
    if len(r) == 1:
        return r[0], 0.0
    return float(statistics.mean(r)), float(statistics.stdev(r))


def better_of(a: Sequence[float], b: Sequence[float]) -> int:
    """Which run set to highlight: higher mean, then lower std. Returns 0 or 1 (0 on full ties)."""
    (ma, sa), (mb, sb) = multi_seed(a), multi_seed(b)
    if ma != mb:
        return 0 if ma > mb else 1
    return 1 if sb < sa else 0


@dataclass
class CurvePoint:
    k: int
    runs: List[Tuple[int, int, float]] = field(default_factory=list)  # (sample, seed, accuracy)

    @property
    def mean(self) -> float:
        return multi_seed([r[2] for r in self.runs])[0]

    @property
    def std(self) -> float:
        return multi_seed([r[2] for r in self.runs])[1]


def curve_subsets(pool: Sequence, k: int, mode: str, samples: int):
    """(sample index, subset) pairs for one training size."""
    if mode == "coverage":
        return [(0, select_top_k(pool, k))]
    if mode == "random":
        return [(s, random_select(pool, k, seed=s)) for s in range(samples)]
    raise ValueError(f"unknown selection mode {mode!r}")


def learning_curve(pool: Sequence, sizes: Sequence[int], samples: int, seeds: Sequence[int],
                   train_and_eval: Callable, mode: str = "random") -> List[CurvePoint]:
    """Train ``train_and_eval(subset, seed, k, sample) -> accuracy`` for every size,
    subset and seed. Coverage mode uses the single deterministic top-k subset."""
    points = []
    for k in sizes:
        pt = CurvePoint(k)
        for sample, subset in curve_subsets(pool, k, mode, samples):
            for seed in seeds:
                try:
                    acc = train_and_eval(subset, seed, k, sample)
                except Exception as e:
                    raise CurveRunError(k, sample, seed, e) from e
                pt.runs.append((sample, seed, float(acc)))
        points.append(pt)
    return points
