import numpy as np
import pytest

from varclust.datagen import DatasetSpec, generate_dataset
from varclust.varfit import build_qr_cache


@pytest.fixture(scope="session")
def small_dataset():
    """m=2, p=1, T=80, K=3, 8 series per cluster."""
    data, truth, models = generate_dataset(DatasetSpec(m=2, p=1, T=80, K=3, n_per_cluster=8, seed=11))
    return data, truth, models


@pytest.fixture(scope="session")
def small_cache(small_dataset):
    data = small_dataset[0]
    return build_qr_cache(data, [1], 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")
