import numpy as np
import pytest

from exprfv.core import ExpressionSequence, LabeledDataset, SymptomRecord, scale_preset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(n_videos=2, T=5, N=3, scale="PANSS-NEG", seed=0):
    rng = np.random.default_rng(seed)
    sc = scale_preset(scale)
    names = tuple(f"e{i}" for i in range(N))
    seqs = [ExpressionSequence(f"v{i}", rng.uniform(0, 1, (T, N)), names) for i in range(n_videos)]
    recs = [SymptomRecord(f"v{i}", tuple([sc.min_score] * sc.W), sc.total_min) for i in range(n_videos)]
    return LabeledDataset(tuple(seqs), tuple(recs), sc)


@pytest.fixture
def small_dataset():
    return make_dataset()


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.summary_lines():
            terminalreporter.write_line(line)
