import numpy as np
import pytest

from grumt.corpus import make_batches
from grumt.toy import copy_corpus, random_table
from grumt.training import TrainingConfig, train

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    def record(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class CopyTask:
    """Copy corpus with a model trained until it reproduces every pair."""

    def __init__(self):
        # word lengths 2..5, so every encoded sequence (EOS included) has length <= 6
        self.vocab, self.pairs = copy_corpus(20, 28, [2, 3, 4, 5], seed=1)
        self.table = random_table(self.vocab, 16, seed=2)
        self.batches = make_batches(self.pairs, batch_size=5, max_len=50)
        self.config = TrainingConfig(layers=2, hidden_size=16, learning_rate=0.3,
                                     max_epochs=500, rng_seed=3, batch_size=5)
        self.params, self.log = train(self.config, self.batches, self.table, self.table)


@pytest.fixture(scope="session")
def copy_task():
    return CopyTask()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
