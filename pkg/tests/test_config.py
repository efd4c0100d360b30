import pytest

from dsds.config import (ExperimentConfig, build_config, lexicon_kind, parse_config_text,
                         parse_lexicon_specs, preset_names)
from dsds.nn import ConfigurationError


def test_presets_cover_table_columns():
    assert {"5k", "tc_w", "nhot_w", "e_w", "dsds", "desk"} <= set(preset_names())


@pytest.mark.parametrize("preset,mode", [("5k", "none"), ("tc_w", "tc"), ("nhot_w", "nhot"),
                                         ("e_w", "embed"), ("dsds", "embed")])
def test_preset_lexicon_modes(preset, mode):
    cfg = build_config([preset])
    assert cfg.lex_mode == mode and cfg.k == 5000 and cfg.mode == "coverage"


def test_layering_order():
    cfg = build_config(["desk", "e_w"], overrides={"lex_dim": "8", "seeds": "4,5"})
    assert (cfg.d_w, cfg.lex_mode, cfg.lex_dim, cfg.seeds) == (32, "embed", 8, [4, 5])


def test_config_file(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("# comment\nk = 250\nlexicon.W = w.tsv\nlex_lowercase = yes\n")
    cfg = build_config(config_file=str(p))
    assert cfg.k == 250 and cfg.lexicons == {"W": "w.tsv"} and cfg.lex_lowercase is True


@pytest.mark.parametrize("text", ["bogus = 1", "k = abc", "no equals sign", "lex_lowercase = maybe"])
def test_bad_config(tmp_path, text):
    p = tmp_path / "x.cfg"
    p.write_text(text)
    with pytest.raises(ConfigurationError):
        build_config(config_file=str(p))


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        build_config(["nope"])


def test_validate_paths(tmp_path):
    with pytest.raises(ConfigurationError, match="embeddings"):
        ExperimentConfig(embeddings=str(tmp_path / "missing.txt")).validate()
    with pytest.raises(ConfigurationError):
        ExperimentConfig(seeds=[]).validate()
    with pytest.raises(ConfigurationError):
        ExperimentConfig(lex_mode="embed").validate()


def test_digest_ignores_run_coordinates():
    a, b = ExperimentConfig(), ExperimentConfig(seeds=[9], k=10, sizes=[1, 2])
    assert a.digest() == b.digest()
    assert a.digest() != ExperimentConfig(lex_mode="nhot").digest()


def test_tc_trains_without_lexicon_features():
    assert ExperimentConfig(lex_mode="tc").train_config(3).lex_mode == "none"


def test_lexicon_specs():
    assert parse_lexicon_specs(["W:tags=a.tsv", "U=b.tsv"]) == {"W:tags": "a.tsv", "U": "b.tsv"}
    assert lexicon_kind("W:tags") == "tags" and lexicon_kind("U") is None
    with pytest.raises(ConfigurationError):
        parse_lexicon_specs(["W"])
    with pytest.raises(ConfigurationError):
        lexicon_kind("W:other")


def test_parse_config_text_strips_comments():
    assert parse_config_text("a = 1  # x\n\n b=2") == {"a": "1", "b": "2"}
