from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from fewtreat import Dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw, min_n1=1, max_n1=3, min_n0=2, max_n0=8, covariates=False):
    n1 = draw(st.integers(min_n1, max_n1))
    n0 = draw(st.integers(min_n0, max_n0))
    y = draw(st.lists(finite, min_size=n1 + n0, max_size=n1 + n0))
    x = None
    if covariates:
        x = draw(st.lists(st.floats(0.5, 50.0), min_size=n1 + n0, max_size=n1 + n0))
    return Dataset.from_arrays(y, [1] * n1 + [0] * n0, x)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(test_acceptance.RESULTS):
        ok, detail = test_acceptance.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
