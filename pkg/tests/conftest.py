import numpy as np
import pytest

from dsds.synth import SynthParams, make_language, sample_sentence


def toy_corpus(n=30, seed=0, **overrides):
    """Sentences drawn from a small synthetic language."""
    params = SynthParams(min_len=3, max_len=8, **overrides)
    rng = np.random.default_rng(seed)
    lang = make_language(rng, params)
    return [sample_sentence(rng, lang, params) for _ in range(n)], lang


@pytest.fixture
def small_corpus():
    return toy_corpus(12, seed=3)[0]


@pytest.fixture(scope="session")
def default_bundle(tmp_path_factory):
    """One synthetic language with generator defaults."""
    from dsds.synth import generate_bundle
    return generate_bundle(str(tmp_path_factory.mktemp("bundle")), seed=7)[0]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
