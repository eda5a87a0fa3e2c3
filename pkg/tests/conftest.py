import numpy as np
import pytest

from itconsensus.config import paper_config


@pytest.fixture
def paper_cfg():
    return paper_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
