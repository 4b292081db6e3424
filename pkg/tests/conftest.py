import pytest

from phic.core import build_positional_datasets
from phic.features import assemble_features
from phic.ingest import SyntheticConfig, generate_synthetic
from phic.rasch import loo_difficulties


@pytest.fixture(scope="session")
def small_corpus():
    corpus, truth = generate_synthetic(SyntheticConfig(n_subjects=120, seed=5))
    return corpus, truth


@pytest.fixture(scope="session")
def small_tables(small_corpus):
    corpus, _ = small_corpus
    loo = loo_difficulties(corpus.matrix, item_ids=corpus.item_ids)
    datasets = build_positional_datasets(corpus.matrix, corpus.items, corpus.order)
    return assemble_features(datasets, corpus.profiles, corpus.items, loo, corpus.schema)


def pytest_terminal_summary(terminalreporter):
    from _criteria import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
