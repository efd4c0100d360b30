"""Command-line front end.

Exit codes: 0 success, 1 validation/configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, fields

import numpy as np

from . import config as cfgmod
from .config import ExperimentConfig, build_config, lexicon_kind, lexicon_name
from .corpus import (CorpusFormatError, Sentence, TagSet, build_vocab, emit_corpus, load_embeddings,
                     read_corpus)
from .evaluation import UndefinedMetric, multi_seed, oov_split
from .lexicon import Lexicon, load_lexicon
from .nn import ConfigurationError, NumericalError, dense_grad, grad_check_tensors
from .projection import DEFAULT_K, project_file, random_select, select_top_k
from .synth import SynthParams, generate_bundle
from .tagger import (Model, TrainConfig, init_model, load_model, save_model, serialize,
                     tag_corpus, train)

logger = logging.getLogger("dsds")

LEDGER_HEADER = ["config", "k", "sample", "seed", "metric", "value"]
COVERAGE_NOTE = "lexicon token coverage measured on the evaluation corpus (gold-tagged tokens)"


# -- shared loading -------------------------------------------------------------

def load_lexicons(cfg: ExperimentConfig, tagset: TagSet):
    lexs = []
    for spec, path in cfg.lexicons.items():
        name, kind = lexicon_name(spec), lexicon_kind(spec)
        if kind is None:
            probe = load_lexicon(path, name)
            kind = "tags" if probe.properties and all(p in tagset for p in probe.properties) else "morph"
        lexs.append(load_lexicon(path, name, tagset=tagset if kind == "tags" else None))
    return lexs


def feature_lexicons(cfg: ExperimentConfig, lexs):
    if cfg.features:
        by_name = {lex.name: lex for lex in lexs}
        return [by_name[n] for n in cfg.features if n in by_name]
    return list(lexs)


def tc_dictionary(cfg: ExperimentConfig, lexs, tagset: TagSet):
    for lex in feature_lexicons(cfg, lexs):
        if lex.properties == list(tagset.names):
            return lex
    raise ConfigurationError("type constraints need a tag-dictionary lexicon")


def load_pool(cfg: ExperimentConfig, tagset: TagSet):
    if cfg.projection:
        with open(cfg.projection, encoding="utf-8") as f:
            return [p.to_sentence() for p in project_file(f, cfg.sources, tagset, cfg.projection)]
    if cfg.train:
        return read_corpus(cfg.train, tagset)
    raise ConfigurationError("need a training corpus (train) or a projection file (projection)")


def select(pool, mode: str, k: int, seed: int):
    if mode == "coverage":
        if any(s.coverage is None for s in pool):
            raise ConfigurationError("coverage selection needs coverage-annotated sentences")
        return select_top_k(pool, k)
    return random_select(pool, k, seed)


def train_one(cfg: ExperimentConfig, subset, seed: int, tagset: TagSet, lexs, emb, dev=None) -> Model:
    tcfg = cfg.train_config(seed)
    feats = feature_lexicons(cfg, lexs) if tcfg.lex_mode != "none" else []
    return train(subset, tcfg, dev=dev, lexicons=feats, embeddings=emb, tagset=tagset)


def decode(cfg: ExperimentConfig, model: Model, corpus, lexs, tagset):
    dictionary = tc_dictionary(cfg, lexs, tagset) if cfg.lex_mode == "tc" else None
    return tag_corpus(model, corpus, dictionary)


def evaluate(model: Model, corpus, pred, lexs):
    return oov_split([s.tokens for s in corpus], [s.tags for s in corpus], pred, model.vocab, lexs)


def fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_rows(report, tagset, label=("-", "-", "-", "-")):
    return [list(label) + [metric, fmt(v)] for metric, v in report.rows(tagset.names)]


# -- ledger ---------------------------------------------------------------------

def read_ledger(path):
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8", newline="") as f:
        rows = [r for r in csv.reader(f, delimiter="\t") if r and not r[0].startswith("#")]
    return [r for r in rows if r != LEDGER_HEADER]


def append_ledger(path, rows):
    new = not os.path.exists(path)
    with open(path, "a", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        if new:
            w.writerow(LEDGER_HEADER)
        w.writerows(rows)


def summarize_ledger(rows, digest):
    """(k, mean, std, n_runs) per size from the ledger's accuracy rows for one config."""
    by_k = {}
    for cfg, k, sample, seed, metric, value in rows:
        if cfg == digest and metric == "accuracy" and value != "NA":
            by_k.setdefault(int(k), []).append(float(value))
    return [(k, *multi_seed(v), len(v)) for k, v in sorted(by_k.items())]


# -- curve runs -----------------------------------------------------------------

_CACHE = {}


def _curve_context(cfg: ExperimentConfig):
    key = cfg.digest()
    if key not in _CACHE:
        tagset = TagSet()
        lexs = load_lexicons(cfg, tagset)
        emb = load_embeddings(cfg.embeddings) if cfg.embeddings else None
        pool = load_pool(cfg, tagset)
        evalset = read_corpus(cfg.test or cfg.dev, tagset)
        _CACHE.clear()
        _CACHE[key] = (tagset, lexs, emb, pool, evalset)
    return _CACHE[key]


def curve_run(cfg: ExperimentConfig, k: int, sample: int, seed: int):
    """Train and evaluate one (k, sample, seed) cell; returns ledger rows."""
    tagset, lexs, emb, pool, evalset = _curve_context(cfg)
    subset = select(pool, cfg.mode, k, sample)
    model = train_one(cfg, subset, seed, tagset, lexs, emb)
    pred = decode(cfg, model, evalset, lexs, tagset)
    report = evaluate(model, evalset, pred, lexs)
    label = (cfg.digest(), str(k), str(sample), str(seed))
    rows = [r for r in report_rows(report, tagset, label) if r[4] != "accuracy"]
    rows.append(list(label) + ["model_sha256", hashlib.sha256(serialize(model)).hexdigest()])
    rows.append(list(label) + ["accuracy", fmt(report.accuracy)])  # written last: marks completion
    return rows


def _curve_worker(cfg_dict, k, sample, seed):
    return curve_run(ExperimentConfig(**cfg_dict), k, sample, seed)


def run_curve(cfg: ExperimentConfig, out_dir):
    if not cfg.sizes:
        raise ConfigurationError("curve needs sizes")
    if not (cfg.test or cfg.dev):
        raise ConfigurationError("curve needs a test or dev corpus")
    os.makedirs(out_dir, exist_ok=True)
    ledger = os.path.join(out_dir, "runs.tsv")
    digest = cfg.digest()
    done = {(int(r[1]), int(r[2]), int(r[3])) for r in read_ledger(ledger)
            if r[0] == digest and r[4] == "accuracy"}
    samples = 1 if cfg.mode == "coverage" else cfg.samples
    todo = [(k, s, seed) for k in cfg.sizes for s in range(samples) for seed in cfg.seeds
            if (k, s, seed) not in done]
    logger.info("curve %s: %d runs to do, %d already in ledger", digest, len(todo), len(done))
    if cfg.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            futs = {ex.submit(_curve_worker, asdict(cfg), *t): t for t in todo}
            for fut in as_completed(futs):
                append_ledger(ledger, fut.result())
    else:
        for k, s, seed in todo:
            append_ledger(ledger, curve_run(cfg, k, s, seed))
            logger.info("done k=%d sample=%d seed=%d", k, s, seed)
    summary = summarize_ledger(read_ledger(ledger), digest)
    path = os.path.join(out_dir, f"curve.{cfg.mode}.{digest}.tsv")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# config={digest} mode={cfg.mode} lex_mode={cfg.lex_mode}\n")
        f.write("k\tmean\tstd\tn_runs\n")
        for k, mean, std, n in summary:
            f.write(f"{k}\t{mean!r}\t{std!r}\t{n}\n")
    return path, summary


# -- subcommands ----------------------------------------------------------------

def _write_out(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def cmd_project(args):
    tagset = TagSet()
    with open(args.projection, encoding="utf-8") as f:
        sents = [p.to_sentence() for p in project_file(f, args.sources, tagset, args.projection)]
    _write_out(emit_corpus(sents, tagset), args.out)
    return 0


def cmd_select(args):
    tagset = TagSet()
    pool = read_corpus(args.corpus, tagset)
    _write_out(emit_corpus(select(pool, args.mode, args.k, args.seed), tagset), args.out)
    return 0


def experiment_config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[k] = v
    for flag in ("train", "dev", "test", "projection", "embeddings", "k", "mode", "lex_mode",
                 "epochs", "word_dropout", "lex_dim", "seed", "sources", "samples", "workers"):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[flag] = str(v)
    for flag in ("seeds", "sizes", "features"):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[flag] = v
    cfg = build_config(args.preset or (), args.config, overrides)
    for spec in args.lexicon or []:
        cfg.lexicons.update(cfgmod.parse_lexicon_specs([spec]))
    return cfg


def cmd_train(args):
    cfg = experiment_config(args).validate()
    tagset = TagSet()
    lexs = load_lexicons(cfg, tagset)
    emb = load_embeddings(cfg.embeddings) if cfg.embeddings else None
    pool = load_pool(cfg, tagset)
    subset = select(pool, cfg.mode, cfg.k, cfg.seed) if (cfg.projection or pool[0].coverage is not None) else pool
    dev = read_corpus(cfg.dev, tagset) if cfg.dev else None
    model = train_one(cfg, subset, cfg.seed, tagset, lexs, emb, dev)
    save_model(args.out, model)
    digest = model.fingerprint()
    train_acc = evaluate(model, subset, tag_corpus(model, subset), lexs).accuracy
    label = [cfg.digest(), str(len(subset)), "0", str(cfg.seed)]
    rows = [label + ["train_accuracy", fmt(train_acc)], label + ["model_sha256", digest]]
    if dev:
        rows.append(label + ["dev_accuracy", fmt(evaluate(model, dev, decode(cfg, model, dev, lexs, tagset),
                                                          lexs).accuracy)])
    ledger = args.ledger or os.path.join(os.path.dirname(os.path.abspath(args.out)), "runs.tsv")
    append_ledger(ledger, rows)
    print(f"model\t{args.out}\nsha256\t{digest}\ntrain_accuracy\t{fmt(train_acc)}")
    return 0


def cmd_tag(args):
    tagset = TagSet()
    model = load_model(args.model)
    corpus = read_corpus(args.corpus, model.tagset)
    dictionary = load_lexicon(args.type_constraints, "TC", tagset=model.tagset) if args.type_constraints else None
    pred = tag_corpus(model, corpus, dictionary)
    out = [type(s)(list(s.tokens), list(p)) for s, p in zip(corpus, pred)]
    _write_out(emit_corpus(out, tagset), args.out)
    return 0


def cmd_eval(args):
    tagset = TagSet()
    gold = read_corpus(args.gold, tagset)
    pred = read_corpus(args.pred, tagset)
    if len(gold) != len(pred) or any(g.tokens != p.tokens for g, p in zip(gold, pred)):
        raise ConfigurationError("gold and predicted corpora do not align")
    if args.model:
        vocab = load_model(args.model).vocab
    elif args.train:
        vocab = build_vocab(read_corpus(args.train, tagset))
    else:
        raise ConfigurationError("eval needs --model or --train for the training vocabulary")
    lcfg = ExperimentConfig(lexicons=cfgmod.parse_lexicon_specs(args.lexicon or []))
    lexs = load_lexicons(lcfg, tagset)
    report = oov_split([g.tokens for g in gold], [g.tags for g in gold], [p.tags for p in pred], vocab, lexs)
    label = (args.label, args.k, args.sample, args.seed)
    lines = [f"# {COVERAGE_NOTE}\n", "\t".join(LEDGER_HEADER) + "\n"]
    lines += ["\t".join(r) + "\n" for r in report_rows(report, tagset, label)]
    _write_out("".join(lines), args.out)
    return 0


def cmd_curve(args):
    cfg = experiment_config(args).validate()
    path, summary = run_curve(cfg, args.out)
    print(f"curve\t{path}")
    for k, mean, std, n in summary:
        print(f"{k}\t{mean:.4f}\t{std:.4f}\t{n}")
    return 0


def synth_params(items) -> SynthParams:
    params = SynthParams()
    types = {f.name: f.type for f in fields(SynthParams)}
    for item in items or []:
        k, sep, v = item.partition("=")
        k = k.replace("-", "_")
        if not sep or k not in types or k == "type_counts":
            raise ConfigurationError(f"bad synth parameter {item!r}")
        try:
            setattr(params, k, int(v) if types[k] == "int" else float(v))
        except ValueError:
            raise ConfigurationError(f"bad value in {item!r}") from None
    return params


def cmd_synth(args):
    params = synth_params(args.param)
    if args.pool is not None:
        params.pool = args.pool
    if args.sources is not None:
        params.sources = args.sources
    if args.lexicon_coverage is not None:
        params.lexicon_coverage = args.lexicon_coverage
    if args.languages < 1:
        raise ConfigurationError("languages must be >= 1")
    for d in generate_bundle(args.out, args.seed, args.languages, params):
        print(d)
    return 0


def toy_grad_setup(seed: int = 0):
    """Toy tagger (vocab 20, d_w=8, d_c=4, h_c=5, h_w=6, one lexicon m=4, l=3) and a
    summed loss over a 3-sentence corpus, for gradient checking."""
    rng = np.random.default_rng(seed)
    letters = list("abcdefghij")
    vocab = []
    while len(vocab) < 20:
        w = "".join(rng.choice(letters, size=int(rng.integers(1, 6))))
        if w not in vocab:
            vocab.append(w)
    order = [vocab[i] for i in rng.permutation(20)]
    corpus = [Sentence(order[a:b], [int(t) for t in rng.integers(0, 12, size=b - a)])
              for a, b in ((0, 7), (7, 14), (14, 20))]
    lex = Lexicon("L", ["p0", "p1", "p2", "p3"],
                  {w: frozenset(int(j) for j in rng.choice(4, size=int(rng.integers(1, 4)), replace=False))
                   for w in vocab[::2]})
    cfg = TrainConfig(d_w=8, d_c=4, h_c=5, h_w=6, lex_mode="embed", lex_dim=3, word_dropout=0.0, seed=seed)
    model = init_model(corpus, cfg, [lex], rng=rng)
    for name, p in model.params.items():
        p += rng.normal(0.0, 0.1, size=p.shape)
    encoded = [model.encode(s) for s in corpus]

    def loss_and_grad():
        total, grads = 0.0, {}
        for enc in encoded:
            loss, g = model.loss_and_grads(enc)
            total += loss
            for k, v in g.items():
                v = dense_grad(v, model.params[k].shape)
                grads[k] = grads[k] + v if k in grads else v
        return total, grads

    return model, loss_and_grad


def cmd_check_grad(args):
    if not args.eps > 0:
        raise ConfigurationError("--eps must be positive")
    model, loss_and_grad = toy_grad_setup(args.seed)
    if args.corrupt:
        clean = loss_and_grad

        def loss_and_grad():
            loss, g = clean()
            g["out_b"] = g["out_b"] * 1.1 + 1e-3
            return loss, g
    report = grad_check_tensors(loss_and_grad, model.params, args.eps)
    worst = max(report.values())
    for name, err in sorted(report.items()):
        print(f"{name}\t{err:.3e}")
    print(f"max_relative_error\t{worst:.3e}")
    if worst >= args.tolerance:
        print(f"FAIL: max relative error {worst:.3e} >= {args.tolerance:g}", file=sys.stderr)
        return 1
    return 0


# -- parser ---------------------------------------------------------------------

def _add_experiment_flags(p, curve=False):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--preset", action="append", help=f"shipped preset ({', '.join(cfgmod.preset_names())})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--projection")
    p.add_argument("--embeddings")
    p.add_argument("--lexicon", action="append", metavar="NAME=PATH")
    p.add_argument("--features", help="comma-separated lexicon names used as features")
    p.add_argument("--lex-mode", dest="lex_mode", choices=cfgmod.LEX_MODES)
    p.add_argument("--lex-dim", dest="lex_dim", type=int, help="embedding length per property (default 40)")
    p.add_argument("--mode", choices=cfgmod.SELECTION_MODES)
    p.add_argument("--k", type=int)
    p.add_argument("--sources", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--word-dropout", dest="word_dropout", type=float)
    if curve:
        p.add_argument("--sizes", required=True)
        p.add_argument("--samples", type=int)
        p.add_argument("--workers", type=int)


def build_parser():
    ap = argparse.ArgumentParser(prog="dsds", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("project", help="decode a projection file into a coverage-annotated corpus")
    p.add_argument("projection")
    p.add_argument("--sources", type=int, help="declared source count (default: sources seen)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_project)

    p = add("select", help="select training instances")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=cfgmod.SELECTION_MODES, default="coverage")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = add("train", help="train a tagger")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--ledger", help="run ledger TSV (default: runs.tsv next to the model)")
    p.set_defaults(func=cmd_train)

    p = add("tag", help="tag a corpus")
    p.add_argument("model")
    p.add_argument("corpus")
    p.add_argument("--type-constraints", dest="type_constraints", metavar="LEXICON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tag)

    p = add("eval", help="accuracy and OOV report")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--model")
    p.add_argument("--train")
    p.add_argument("--lexicon", action="append", metavar="NAME=PATH")
    p.add_argument("--label", default="-")
    p.add_argument("--k", default="-")
    p.add_argument("--sample", default="-")
    p.add_argument("--seed", default="-")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = add("curve", help="learning-curve sweep with a resumable run ledger")
    _add_experiment_flags(p, curve=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_curve)

    p = add("synth", help="generate a synthetic benchmark bundle")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--languages", type=int, default=1)
    p.add_argument("--pool", type=int)
    p.add_argument("--sources", type=int)
    p.add_argument("--lexicon-coverage", dest="lexicon_coverage", type=float)
    p.add_argument("--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = add("check-grad", help="finite-difference gradient check on a toy model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help="perturb one analytic gradient (negative control)")
    p.set_defaults(func=cmd_check_grad)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"dsds: numerical error: {e}", file=sys.stderr)
        return 2
    except (ConfigurationError, CorpusFormatError, UndefinedMetric, ValueError, KeyError,
            FileNotFoundError, IndexError) as e:
        print(f"dsds: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
