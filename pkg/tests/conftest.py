import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tilestyle.extractor import tinynet


@pytest.fixture(scope="session")
def tiny():
    return tinynet(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
