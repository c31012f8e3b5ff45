import numpy as np
import pytest
import torch

from paec.corpus import Corpus, make_synthetic_corpus
from paec.rir import ImageSourceProvider

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    return make_synthetic_corpus(tmp_path_factory.mktemp("corpus"), n_speakers=12, utts_per_speaker=3, seconds=3.0, seed=0)


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    return Corpus(corpus_dir)


@pytest.fixture(scope="session")
def rirs():
    return ImageSourceProvider(n_rooms=3, positions_per_room=2, seed=5, duration=0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_features(corpus, rirs):
    from paec.datagen import toy_clips
    from paec.training import prepare_clip

    clips = toy_clips(corpus, {"DT": 3, "FEST": 1, "NEST": 2}, seed=1, seconds=1.0, rir_provider=rirs)
    return [prepare_clip(c) for c in clips]


ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str = "") -> bool:
    """Register an acceptance outcome for the end-of-run summary."""
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


@pytest.fixture
def accept():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
