import numpy as np
import pytest

from copfrail.event_data import Dataset, SubjectData
from copfrail.simulate import SimConfig, generate_dataset


def make_subject(sid, x, tau, *events):
    return SubjectData(sid, np.atleast_1d(np.asarray(x, dtype=float)), float(tau), tuple(list(e) for e in events))


@pytest.fixture
def tiny():
    """Three subjects, two types, one covariate."""
    subs = [
        make_subject("a", 0.0, 1.0, [0.2, 0.5], [0.7]),
        make_subject("b", 1.0, 2.0, [0.5], []),
        make_subject("c", 0.5, 3.0, [2.5], [1.5, 2.0]),
    ]
    return Dataset(subs, type_labels=["A", "B"], covariate_names=["x"])


@pytest.fixture(scope="session")
def sim50():
    cfg = SimConfig(n_subjects=50, n_types=2, model="Cg", copula_truth=1.0, alpha_truth=(0.8, 0.8), beta_truth=(0.7, 0.3))
    return generate_dataset(cfg, np.random.default_rng(11))


@pytest.fixture(scope="session")
def sim200():
    cfg = SimConfig(n_subjects=200, n_types=3, model="Cg", copula_truth=1.333)
    return generate_dataset(cfg, np.random.default_rng(5))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
