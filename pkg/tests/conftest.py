import numpy as np
import pytest

from conservrl.envs import build_inventory_mdp
from conservrl.mdp import TabularMdp


@pytest.fixture(scope="session")
def inventory():
    return build_inventory_mdp()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def chain_mdp(H=4):
    """Two states; action 0 stays, action 1 swaps.  Deterministic."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    P[0, 1, 1] = P[1, 1, 0] = 1.0
    R = np.array([[0.1, 0.2], [0.3, 0.4]])
    return TabularMdp(P=P, R=R, H=H, s1=0)
