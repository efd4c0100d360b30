"""Synthetic benchmark bundles: an HMM "language" over the 12 tags, gold
corpora, a noisy multi-source projection file, lexicons and word vectors."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from .corpus import UNIVERSAL_TAGS, EmbeddingTable, Sentence, TagSet, save_embeddings, write_corpus
from .projection import ProjectionBlock, SourceVote, format_projection

VOWELS = "aeiou"
CONSONANTS = "bcdfghklmnprstvz"
PUNCT_FORMS = [".", ",", "!", "?", ";", ":"]

# word types per tag; open classes are large and Zipfian
TYPE_COUNTS = {"NOUN": 900, "VERB": 500, "ADJ": 300, "ADV": 120, "PRON": 15, "DET": 10,
               "ADP": 20, "NUM": 60, "CONJ": 8, "PRT": 12, "PUNCT": 6, "X": 40}
OPEN = ("NOUN", "VERB", "ADJ", "ADV")
# inflection suffix -> morphological feature bundle
FEATURES = {"NOUN": ["N;SG", "N;PL", "N;GEN"], "VERB": ["V;PRS", "V;PST", "V;NFIN"],
            "ADJ": ["ADJ;POS", "ADJ;CMPR"], "ADV": ["ADV"]}


@dataclass
class SynthParams:
    pool: int = 3000
    dev: int = 300
    test: int = 500
    sources: int = 8
    vote_base: float = 0.6
    vote_gain: float = 0.35
    confusion_rate: float = 0.7
    min_coverage: float = 0.05
    source_jitter: float = 0.15
    min_len: int = 3
    max_len: int = 14
    regular_morphology: float = 0.4
    ambiguity: float = 0.15
    lexicon_coverage: float = 0.4
    morph_coverage: float = 0.3
    emb_dim: int = 32
    emb_signal: float = 0.4
    zipf: float = 1.0
    type_counts: Dict[str, int] = field(default_factory=lambda: dict(TYPE_COUNTS))


@dataclass
class Language:
    start: np.ndarray                 # (12,)
    trans: np.ndarray                 # (12, 12)
    emit_words: List[List[str]]       # per tag
    emit_probs: List[np.ndarray]
    word_tags: Dict[str, set]
    word_features: Dict[str, str]     # open-class word -> feature bundle
    confusion: np.ndarray             # (12,) systematic wrong tag per gold tag


def _syllables(rng, lo, hi):
    n = rng.integers(lo, hi + 1)
    return "".join(rng.choice(list(CONSONANTS)) + rng.choice(list(VOWELS)) for _ in range(n))


def make_language(rng: np.random.Generator, params: SynthParams) -> Language:
    K = len(UNIVERSAL_TAGS)
    start = rng.dirichlet(np.full(K, 0.5))
    trans = rng.dirichlet(np.full(K, 0.3), size=K)
    suffixes = {}
    used = set()
    for tag in OPEN:
        for feat in FEATURES[tag]:
            while True:
                suf = rng.choice(list(VOWELS)) + rng.choice(list(CONSONANTS)) + rng.choice(list(VOWELS))
                if suf not in used:
                    used.add(suf)
                    suffixes[(tag, feat)] = suf
                    break
    shared = [rng.choice(list(CONSONANTS)) + rng.choice(list(VOWELS)) for _ in range(6)]

    taken: set = set()
    emit_words, word_features = [], {}
    for tag in UNIVERSAL_TAGS:
        n = params.type_counts[tag]
        words = []
        while len(words) < n:
            if tag == "PUNCT":
                w = PUNCT_FORMS[len(words) % len(PUNCT_FORMS)] * (1 + len(words) // len(PUNCT_FORMS))
            elif tag == "NUM":
                w = str(int(rng.integers(0, 10 ** rng.integers(1, 5))))
            elif tag == "X":
                w = _syllables(rng, 1, 2).upper()
            elif tag in OPEN:
                feat = FEATURES[tag][int(rng.integers(len(FEATURES[tag])))]
                stem = _syllables(rng, 1, 3)
                if rng.random() < params.regular_morphology:
                    w = stem + suffixes[(tag, feat)]
                else:
                    w = stem + shared[int(rng.integers(len(shared)))]
            else:
                w = _syllables(rng, 1, 1) + rng.choice(list(VOWELS))
            if w in taken:
                continue
            taken.add(w)
            words.append(w)
            if tag in OPEN:
                word_features[w] = feat
        emit_words.append(words)

    # cross-class ambiguity among open classes
    for ti, tag in enumerate(UNIVERSAL_TAGS):
        if tag not in OPEN:
            continue
        others = [UNIVERSAL_TAGS.index(t) for t in OPEN if t != tag]
        n_amb = int(round(params.ambiguity * len(emit_words[ti])))
        for w in list(rng.choice(emit_words[ti], size=n_amb, replace=False)):
            tj = others[int(rng.integers(len(others)))]
            emit_words[tj].append(str(w))

    emit_probs = []
    for words in emit_words:
        ranks = np.arange(1, len(words) + 1, dtype=float)
        perm = rng.permutation(len(words))
        p = 1.0 / ranks[perm] ** params.zipf
        emit_probs.append(p / p.sum())
    word_tags: Dict[str, set] = {}
    for ti, words in enumerate(emit_words):
        for w in words:
            word_tags.setdefault(w, set()).add(ti)
    confusion = np.array([(t + 1 + int(rng.integers(K - 1))) % K for t in range(K)])
    return Language(start, trans, emit_words, emit_probs, word_tags, word_features, confusion)


def sample_sentence(rng, lang: Language, params: SynthParams) -> Sentence:
    n = int(rng.integers(params.min_len, params.max_len + 1))
    tags = [int(rng.choice(12, p=lang.start))]
    for _ in range(n - 1):
        tags.append(int(rng.choice(12, p=lang.trans[tags[-1]])))
    words = [lang.emit_words[t][int(rng.choice(len(lang.emit_words[t]), p=lang.emit_probs[t]))]
             for t in tags]
    return Sentence(words, tags)


def vote_accuracy(coverage: float, params: SynthParams) -> float:
    """Probability that a single source's vote is the gold tag."""
    return min(1.0, params.vote_base + params.vote_gain * coverage)


def project_noisy(rng, sent: Sentence, lang: Language, params: SynthParams) -> ProjectionBlock:
    c = float(rng.uniform(params.min_coverage, 1.0))
    q = vote_accuracy(c, params)
    votes = []
    for s in range(params.sources):
        cs = float(np.clip(c + rng.normal(0.0, params.source_jitter), 0.0, 1.0))
        for j, gold in enumerate(sent.tags):
            if rng.random() >= cs:
                continue
            a = round(float(rng.uniform(0.5, 1.0)), 4)
            if rng.random() < q:
                tag, conf = gold, float(rng.uniform(0.6, 1.0))
            else:
                if rng.random() < params.confusion_rate:
                    tag = int(lang.confusion[gold])
                else:
                    tag = (gold + 1 + int(rng.integers(11))) % 12
                conf = float(rng.uniform(0.4, 0.9))
            votes.append((j, SourceVote.single(f"src{s:02d}", a, tag, round(conf, 4))))
    return ProjectionBlock(list(sent.tokens), votes, 0)


def make_embeddings(rng, lang: Language, params: SynthParams) -> EmbeddingTable:
    centroids = rng.normal(0.0, 0.5, size=(12, params.emb_dim))
    words = sorted(lang.word_tags)
    vecs = []
    for w in words:
        tags = sorted(lang.word_tags[w])
        v = params.emb_signal * centroids[tags].mean(axis=0) + rng.normal(0.0, 0.5, size=params.emb_dim)
        vecs.append(np.round(v, 5))
    vecs = np.array(vecs)
    return EmbeddingTable(words, vecs, np.round(vecs.mean(axis=0), 5))


def sample_types(rng, words: List[str], fraction: float) -> List[str]:
    n = int(round(fraction * len(words)))
    return sorted(rng.choice(sorted(words), size=n, replace=False).tolist()) if n else []


def generate_language(out_dir, seed_seq: np.random.SeedSequence, params: SynthParams):
    rng = np.random.default_rng(seed_seq)
    os.makedirs(out_dir, exist_ok=True)
    tagset = TagSet()
    lang = make_language(rng, params)
    pool = [sample_sentence(rng, lang, params) for _ in range(params.pool)]
    dev = [sample_sentence(rng, lang, params) for _ in range(params.dev)]
    test = [sample_sentence(rng, lang, params) for _ in range(params.test)]
    blocks = [project_noisy(rng, s, lang, params) for s in pool]

    with open(os.path.join(out_dir, "projection.txt"), "w", encoding="utf-8") as f:
        f.write(format_projection(blocks, tagset))
    write_corpus(os.path.join(out_dir, "pool.gold.tsv"), pool, tagset)
    write_corpus(os.path.join(out_dir, "dev.tsv"), dev, tagset)
    write_corpus(os.path.join(out_dir, "test.tsv"), test, tagset)

    with open(os.path.join(out_dir, "wiktionary.tsv"), "w", encoding="utf-8") as f:
        for w in sample_types(rng, list(lang.word_tags), params.lexicon_coverage):
            f.write(w + "\t" + ";".join(tagset.name(t) for t in sorted(lang.word_tags[w])) + "\n")
    with open(os.path.join(out_dir, "unimorph.tsv"), "w", encoding="utf-8") as f:
        for w in sample_types(rng, list(lang.word_features), params.morph_coverage):
            f.write(w + "\t" + lang.word_features[w] + "\n")
    save_embeddings(os.path.join(out_dir, "embeddings.txt"), make_embeddings(rng, lang, params))

    meta = {"params": asdict(params), "n_types": len(lang.word_tags)}
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")
    return lang


def generate_bundle(out_dir, seed: int = 1, languages: int = 1, params: SynthParams = None) -> List[str]:
    """Write ``languages`` reproducible language directories under ``out_dir``."""
    params = params or SynthParams()
    dirs = []
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(languages)):
        d = os.path.join(out_dir, f"lang{i}")
        generate_language(d, ss, params)
        dirs.append(d)
    return dirs
