import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture
def toy_path():
    return DATA / "toy_table1.csv"


@pytest.fixture
def toy_marks_path():
    return DATA / "toy_table1_marks.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
