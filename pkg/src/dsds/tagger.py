"""The bi-LSTM tagger: word embedding ∘ character bi-LSTM ∘ lexicon features
fed to a word-level bi-LSTM and a softmax tag classifier."""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .corpus import UNK, EmbeddingTable, Sentence, TagSet, Vocab, build_vocab
from .lexicon import (Lexicon, LexiconFeatureConfig, embed_from_membership,
                      embed_from_membership_grad)
from .nn import BiEncoderParams, BiLSTMRun, ConfigurationError, NumericalError, RowGrad

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"DSDSMODEL\n"
DROPOUT_SCHEMES = ("freq", "fixed")


@dataclass
class TrainConfig:
    epochs: int = 10
    word_dropout: float = 0.25
    dropout_scheme: str = "freq"
    lr: float = 0.1
    clip: float = 5.0
    seed: int = 1
    k: int = 5000
    embeddings: Optional[str] = None
    d_w: int = 64
    d_c: int = 32
    h_c: int = 50
    h_w: int = 100
    lex_mode: str = "none"
    lex_dim: int = 40
    lex_pooling: str = "concat"
    lex_lowercase: bool = False
    min_freq: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ConfigurationError("word dropout must lie in [0, 1)")
        if self.dropout_scheme not in DROPOUT_SCHEMES:
            raise ConfigurationError(f"dropout scheme must be one of {DROPOUT_SCHEMES}")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")
        for name in ("d_w", "d_c", "h_c", "h_w"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        try:
            self.lex_config()
        except ValueError as e:
            raise ConfigurationError(str(e)) from None

    def lex_config(self) -> LexiconFeatureConfig:
        return LexiconFeatureConfig(self.lex_mode, self.lex_dim, self.lex_pooling)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def dropout_probability(freq: int, p: float, scheme: str = "freq") -> float:
    """Probability that a training token of frequency ``freq`` is replaced by UNK."""
    if p == 0.0:
        return 0.0
    if scheme == "fixed":
        return p
    return p / (p + freq)


@dataclass
class Encoded:
    """Index arrays for one sentence, precomputed once per corpus."""
    words: np.ndarray          # (n,) row in the word table
    chars: np.ndarray          # (T, n) character ids, 0-padded
    char_lengths: np.ndarray   # (n,)
    memberships: List[np.ndarray]  # per lexicon, (n, m)
    gold: np.ndarray           # (n,) tag ids, -1 where unknown
    mask: np.ndarray           # (n,) bool, trainable positions
    dropout_p: np.ndarray      # (n,) UNK-replacement probabilities


@dataclass
class Model:
    config: TrainConfig
    tagset: TagSet
    vocab: Vocab
    words: List[str]              # word-table rows; row 0 is UNK
    chars: List[str]              # char-table rows; row 0 is the unknown character
    lexicons: List[Lexicon]
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.char_index = {c: i for i, c in enumerate(self.chars)}
        self.lex_cfg = self.config.lex_config()

    # -- dimensions ---------------------------------------------------------
    def lexicon_dim(self) -> int:
        return sum(self.lex_cfg.feature_dim(lex) for lex in self.lexicons)

    def input_dim(self) -> int:
        c = self.config
        return c.d_w + 2 * c.h_c + self.lexicon_dim()

    def check_dimensions(self):
        c, p = self.config, self.params
        K = len(self.tagset)
        expected = {
            "word_emb": (len(self.words), c.d_w),
            "char_emb": (len(self.chars), c.d_c),
            "char_W": (2, c.d_c, 4 * c.h_c), "char_U": (2, c.h_c, 4 * c.h_c), "char_b": (2, 4 * c.h_c),
            "word_W": (2, self.input_dim(), 4 * c.h_w), "word_U": (2, c.h_w, 4 * c.h_w),
            "word_b": (2, 4 * c.h_w),
            "out_W": (2 * c.h_w, K), "out_b": (K,),
        }
        if self.lex_cfg.mode == "embed":
            for lex in self.lexicons:
                expected["lex_" + lex.name] = (lex.m, c.lex_dim)
        if set(expected) != set(p):
            raise ConfigurationError(f"parameter set mismatch: {sorted(set(expected) ^ set(p))}")
        for k, shape in expected.items():
            if p[k].shape != shape:
                raise ConfigurationError(f"{k} has shape {p[k].shape}, expected {shape}")

    @property
    def char_params(self) -> BiEncoderParams:
        p = self.params
        return BiEncoderParams(p["char_W"], p["char_U"], p["char_b"])

    @property
    def word_params(self) -> BiEncoderParams:
        p = self.params
        return BiEncoderParams(p["word_W"], p["word_U"], p["word_b"])

    # -- encoding -----------------------------------------------------------
    def encode(self, sentence: Sentence) -> Encoded:
        toks = sentence.tokens
        if not toks:
            raise ValueError("empty sentence")
        words = np.array([self.word_index.get(w, 0) for w in toks], dtype=np.int64)
        lens = np.array([len(w) for w in toks], dtype=np.int64)
        chars = np.zeros((lens.max(), len(toks)), dtype=np.int64)
        for j, w in enumerate(toks):
            chars[:len(w), j] = [self.char_index.get(ch, 0) for ch in w]
        mem = [lex.membership(toks) for lex in self.lexicons] if self.lex_cfg.mode != "none" else []
        gold = np.array([-1 if t is None else t for t in sentence.tags], dtype=np.int64)
        mask = np.array(sentence.loss_mask, dtype=bool) & (gold >= 0)
        c = self.config
        dp = np.array([dropout_probability(self.vocab.freq.get(w, 0), c.word_dropout, c.dropout_scheme)
                       for w in toks])
        return Encoded(words, chars, lens, mem, gold, mask, dp)

    # -- forward / backward -------------------------------------------------
    def build_inputs(self, enc: Encoded, word_ids: np.ndarray = None):
        """Token input matrix (n, input_dim) plus the state needed for backprop."""
        p = self.params
        wid = enc.words if word_ids is None else word_ids
        parts = [p["word_emb"][wid]]
        crun = BiLSTMRun(self.char_params, p["char_emb"][enc.chars], enc.char_lengths)
        parts.append(crun.final)
        if self.lex_cfg.mode == "nhot":
            parts.extend(enc.memberships)
        elif self.lex_cfg.mode == "embed":
            for lex, M in zip(self.lexicons, enc.memberships):
                parts.append(embed_from_membership(M, p["lex_" + lex.name], self.lex_cfg.pooling))
        return np.concatenate(parts, axis=1), (wid, crun)

    def forward(self, sentence, word_ids=None, keep=False):
        """Per-position tag logits (n, |TagSet|)."""
        enc = sentence if isinstance(sentence, Encoded) else self.encode(sentence)
        X, (wid, crun) = self.build_inputs(enc, word_ids)
        wrun = BiLSTMRun(self.word_params, X[:, None, :])
        O = wrun.outputs()[:, 0]
        logits = O @ self.params["out_W"] + self.params["out_b"]
        if keep:
            return logits, (enc, wid, crun, wrun, O)
        return logits

    def loss_and_grads(self, enc: Encoded, word_ids=None):
        """Mean cross-entropy over trainable positions and gradients for every parameter."""
        logits, (enc, wid, crun, wrun, O) = self.forward(enc, word_ids, keep=True)
        idx = np.flatnonzero(enc.mask)
        if len(idx) == 0:
            raise ValueError("sentence has no trainable positions")
        losses, g = nn.softmax_xent_rows(logits[idx], enc.gold[idx])
        loss = float(losses.mean())
        dlogits = np.zeros_like(logits)
        dlogits[idx] = g / len(idx)
        return loss, self._backward(enc, wid, crun, wrun, O, dlogits)

    def _backward(self, enc, wid, crun, wrun, O, dlogits):
        p, c = self.params, self.config
        grads = {"out_W": O.T @ dlogits, "out_b": dlogits.sum(axis=0)}
        dO = dlogits @ p["out_W"].T
        dX, grads["word_W"], grads["word_U"], grads["word_b"] = wrun.backward(dO[:, None, :])
        dX = dX[:, 0]
        grads["word_emb"] = RowGrad(wid, dX[:, :c.d_w])
        off = c.d_w + 2 * c.h_c
        dCX, grads["char_W"], grads["char_U"], grads["char_b"] = crun.backward(None, dX[:, c.d_w:off])
        grads["char_emb"] = RowGrad(enc.chars.ravel(), dCX.reshape(-1, c.d_c))
        if self.lex_cfg.mode == "embed":
            for lex, M in zip(self.lexicons, enc.memberships):
                width = self.lex_cfg.feature_dim(lex)
                grads["lex_" + lex.name] = embed_from_membership_grad(
                    M, dX[:, off:off + width], c.lex_dim, self.lex_cfg.pooling)
                off += width
        return grads

    # -- decoding -----------------------------------------------------------
    def tag(self, sentence: Sentence) -> List[int]:
        return [int(i) for i in np.argmax(self.forward(sentence), axis=1)]

    def tag_with_type_constraints(self, sentence: Sentence, dictionary: Lexicon) -> List[int]:
        return constrained_argmax(self.forward(sentence), sentence.tokens, dictionary, self.tagset)

    def fingerprint(self) -> str:
        return hashlib.sha256(serialize(self)).hexdigest()


def constrained_argmax(logits: np.ndarray, tokens: Sequence[str], dictionary: Lexicon,
                       tagset: TagSet) -> List[int]:
    """Argmax per position, restricted to the dictionary's tags for listed words."""
    if list(dictionary.properties) != list(tagset.names):
        raise ConfigurationError("type-constraint dictionary must use the tag set as properties")
    out = []
    for row, tok in zip(logits, tokens):
        allowed = dictionary.props(tok)
        if allowed:
            cand = sorted(allowed)
            out.append(cand[int(np.argmax(row[cand]))])
        else:
            out.append(int(np.argmax(row)))
    return out


def tag(model: Model, sentence: Sentence) -> List[int]:
    return model.tag(sentence)


def tag_with_type_constraints(model: Model, sentence: Sentence, dictionary: Lexicon) -> List[int]:
    return model.tag_with_type_constraints(sentence, dictionary)


def forward(model: Model, sentence: Sentence) -> np.ndarray:
    return model.forward(sentence)


# -- construction ---------------------------------------------------------------

def _lookup_init(rng, rows: int, dim: int) -> np.ndarray:
    # Row-wise Glorot: each row is the image of a one-hot input.
    return nn.glorot(rng, 1, dim, shape=(rows, dim))


def init_model(train: Sequence[Sentence], cfg: TrainConfig, lexicons: Sequence[Lexicon] = (),
               embeddings: Optional[EmbeddingTable] = None, tagset: TagSet = None,
               rng: np.random.Generator = None) -> Model:
    tagset = tagset or TagSet()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    vocab = build_vocab(train, cfg.min_freq)
    words = vocab.words()
    if embeddings is not None:
        if embeddings.dim != cfg.d_w:
            raise ConfigurationError(f"embedding dimension {embeddings.dim} != d_w={cfg.d_w}")
        seen = set(words)
        words += [w for w in embeddings.words if w not in seen]
    chars = [UNK] + sorted({ch for s in train for tok in s.tokens for ch in tok})
    lexicons = [replace(lex, lowercase_fallback=cfg.lex_lowercase) for lex in lexicons]
    if len({lex.name for lex in lexicons}) != len(lexicons):
        raise ConfigurationError("lexicon source names must be distinct")
    model = Model(cfg, tagset, vocab, words, chars, lexicons)

    p = model.params
    p["word_emb"] = _lookup_init(rng, len(words), cfg.d_w)
    if embeddings is not None:
        p["word_emb"][0] = embeddings.unk
        for i, w in enumerate(words):
            if w in embeddings:
                p["word_emb"][i] = embeddings[w]
    p["char_emb"] = _lookup_init(rng, len(chars), cfg.d_c)
    enc = BiEncoderParams.init(rng, cfg.d_c, cfg.h_c)
    p["char_W"], p["char_U"], p["char_b"] = enc.W, enc.U, enc.b
    enc = BiEncoderParams.init(rng, model.input_dim(), cfg.h_w)
    p["word_W"], p["word_U"], p["word_b"] = enc.W, enc.U, enc.b
    p["out_W"] = nn.glorot(rng, 2 * cfg.h_w, len(tagset))
    p["out_b"] = np.zeros(len(tagset))
    if model.lex_cfg.mode == "embed":
        for lex in lexicons:
            p["lex_" + lex.name] = nn.glorot(rng, lex.m, cfg.lex_dim)
    model.check_dimensions()
    return model


def apply_word_dropout(enc: Encoded, rng: np.random.Generator) -> np.ndarray:
    drop = rng.random(len(enc.words)) < enc.dropout_p
    return np.where(drop, 0, enc.words)


def train(train_corpus: Sequence[Sentence], cfg: TrainConfig, dev: Sequence[Sentence] = None,
          lexicons: Sequence[Lexicon] = (), embeddings: Optional[EmbeddingTable] = None,
          tagset: TagSet = None, on_epoch=None) -> Model:
    """Train for ``cfg.epochs`` passes of per-sentence SGD and return the final model."""
    if not train_corpus:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(train_corpus, cfg, lexicons, embeddings, tagset, rng)
    encoded = [model.encode(s) for s in train_corpus]
    encoded = [e for e in encoded if e.mask.any()]
    if not encoded:
        raise ValueError("training corpus has no unmasked tagged token")
    dev_enc = [model.encode(s) for s in dev] if dev else None
    for epoch in range(cfg.epochs):
        total = 0.0
        for i in rng.permutation(len(encoded)):
            enc = encoded[i]
            loss, grads = model.loss_and_grads(enc, apply_word_dropout(enc, rng))
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss in epoch {epoch + 1}")
            nn.clip_grads(grads, cfg.clip)
            nn.sgd_step(model.params, grads, cfg.lr)
            total += loss
        msg = f"epoch {epoch + 1}/{cfg.epochs} loss {total / len(encoded):.4f}"
        if dev_enc:
            msg += f" dev acc {encoded_accuracy(model, dev_enc):.4f}"
        logger.info(msg)
        if on_epoch is not None:
            on_epoch(epoch, total / len(encoded), model)
    return model


def encoded_accuracy(model: Model, encoded: Sequence[Encoded]) -> float:
    correct = total = 0
    for enc in encoded:
        pred = np.argmax(model.forward(enc), axis=1)
        known = enc.gold >= 0
        correct += int((pred[known] == enc.gold[known]).sum())
        total += int(known.sum())
    return correct / total if total else float("nan")


def tag_corpus(model: Model, corpus: Sequence[Sentence], dictionary: Lexicon = None) -> List[List[int]]:
    if dictionary is None:
        return [model.tag(s) for s in corpus]
    return [model.tag_with_type_constraints(s, dictionary) for s in corpus]


# -- serialization --------------------------------------------------------------

def serialize(model: Model) -> bytes:
    """Deterministic single-blob encoding: magic, header length, JSON header, raw float64 tensors."""
    tensors, blobs, offset = [], [], 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        data = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "tagset": list(model.tagset.names),
        "vocab": [[w, model.vocab.freq.get(w, 0)] for w in model.vocab.words()],
        "words": model.words,
        "chars": model.chars,
        "lexicons": [{"name": lex.name, "properties": lex.properties,
                      "entries": sorted([w, sorted(p)] for w, p in lex.entries.items())}
                     for lex in model.lexicons],
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)


def deserialize(data: bytes) -> Model:
    if not data.startswith(MAGIC):
        raise ValueError("not a model file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {header.get('format_version')}")
    cfg = TrainConfig.from_dict(header["config"])
    vocab = Vocab()
    for w, f in header["vocab"]:
        vocab.index[w] = len(vocab.index) if w != UNK else 0
        if f:
            vocab.freq[w] = f
    lexicons = [Lexicon(d["name"], d["properties"], {w: frozenset(p) for w, p in d["entries"]},
                        lowercase_fallback=cfg.lex_lowercase)
                for d in header["lexicons"]]
    model = Model(cfg, TagSet(header["tagset"]), vocab, header["words"], header["chars"], lexicons)
    for t in header["tensors"]:
        start = pos + t["offset"]
        arr = np.frombuffer(data[start:start + t["nbytes"]], dtype="<f8").reshape(t["shape"])
        model.params[t["name"]] = arr.astype(np.float64)
    model.check_dimensions()
    return model


def save_model(path, model: Model):
    with open(path, "wb") as f:
        f.write(serialize(model))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        return deserialize(f.read())
