import numpy as np
import pytest

from shiftlab.sft import build_subshift


@pytest.fixture
def full2():
    return build_subshift(2, [[1, 1], [1, 1]], 0.5)


@pytest.fixture
def golden():
    return build_subshift(2, [[1, 1], [1, 0]], 0.5)


@pytest.fixture
def golden_fast():
    # Same combinatorics, stronger contraction; used where the constant
    # solver needs a short working depth.
    return build_subshift(2, [[1, 1], [1, 0]], 0.25)


@pytest.fixture
def three_chain():
    # 3-symbol mixing example with a non-symmetric transition pattern.
    return build_subshift(3, [[1, 1, 0], [0, 1, 1], [1, 0, 1]], 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20250810)
