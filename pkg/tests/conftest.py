from __future__ import annotations

import pytest

from nefix.corpus import NoiseConfig, mention_surfaces, synth_corpus, synth_gazetteer
from nefix.index import build_index
from nefix.tagging import GazetteerTagger


@pytest.fixture(scope="session")
def gazetteer_10k():
    return synth_gazetteer(10000, seed=0)


@pytest.fixture(scope="session")
def index_10k(gazetteer_10k):
    return build_index(gazetteer_10k)


@pytest.fixture(scope="session")
def small_gazetteer():
    return synth_gazetteer(400, seed=7)


@pytest.fixture(scope="session")
def small_index(small_gazetteer):
    return build_index(small_gazetteer)


@pytest.fixture(scope="session")
def small_corpus(small_gazetteer):
    return synth_corpus(small_gazetteer, 60, NoiseConfig(max_edits=2), seed=11)


@pytest.fixture(scope="session")
def small_tagger(small_index, small_corpus):
    return GazetteerTagger(small_index.surfaces()).extended(mention_surfaces(small_corpus))


ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the test fails when ``ok`` is false."""

    def record(criterion: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {criterion} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
