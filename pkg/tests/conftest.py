import numpy as np
import pytest

from quadwbc.model import load_model, bundled_model_path


@pytest.fixture(scope="session")
def hyq_arm():
    return load_model(bundled_model_path("hyq_arm"))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
