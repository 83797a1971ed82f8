import numpy as np
import pytest

from ipi_detect.evaluation import PipelineConfig, WindowCache, build_context, make_folds
from ipi_detect.synthetic import CorpusConfig, generate_corpus

# acceptance lines collected by test_acceptance.py and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


TINY_PAIRS = [["u00", "u01"], ["u02", "u03"], ["u04", "u05"]]


def tiny_corpus_config(**kw) -> CorpusConfig:
    base = dict(n_users=10, pairs=TINY_PAIRS, minutes=6.5, separability=2.0, seed=3)
    base.update(kw)
    return CorpusConfig(**base)


def tiny_pipeline_config(**kw) -> PipelineConfig:
    base = dict(ae_epochs=3, intent_epochs=3, max_pretrain_windows=384)
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_corpus(tiny_corpus_config())


@pytest.fixture(scope="session")
def tiny_folds(tiny_corpus):
    return make_folds(tiny_corpus.manifest, n_genuine=2, n_synthetic=1)


@pytest.fixture(scope="session")
def tiny_cache(tiny_corpus):
    return WindowCache(tiny_corpus)


@pytest.fixture(scope="session")
def tiny_context(tiny_cache, tiny_folds):
    return build_context(tiny_cache, tiny_folds[0], tiny_pipeline_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
