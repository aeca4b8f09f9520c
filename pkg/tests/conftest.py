import numpy as np
import pytest

from slipbound import TransferFunction, pll_spec, pll_to_volterra
from slipbound.search import pll_recipe

PLL_T = 0.1
PLL_S = 0.4
PLL_H0 = 1.0
PLL_H = PLL_H0 * PLL_T
PAPER_ROWS = ((0.9, 1), (0.92, 2), (0.95, 5))


@pytest.fixture(scope="session")
def recipe_params():
    return pll_recipe(PLL_T, PLL_S, PLL_H0)


@pytest.fixture(scope="session")
def pll_tf():
    return TransferFunction.from_pll(PLL_T, PLL_S, PLL_H)


@pytest.fixture(scope="session")
def pll09():
    return pll_spec(PLL_T, PLL_S, 0.9, PLL_H)


@pytest.fixture(scope="session")
def vol09(pll09):
    return pll_to_volterra(pll09)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
