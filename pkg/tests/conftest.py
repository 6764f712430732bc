import numpy as np
import pytest

from nlch.config import RunConfig, initial_state
from nlch.dynamics import Params, State
from nlch.kernel import build_kernel
from nlch.potential import Potential
from nlch.spectral import SpectralSpace


class Setup:
    """Reference quench: 33 nodes on [0, 1], gaussian kernel sigma 0.1 amplitude 10, double well."""

    def __init__(self, n=33, sigma=0.1, amplitude=10.0, validate=True, **params):
        self.sp = SpectralSpace.unit(1, n)
        self.k = build_kernel("gaussian", {"sigma": sigma, "amplitude": amplitude}, self.sp, validate=validate)
        self.pot = Potential.double_well()
        self.p = Params(**params)

    def state(self, phi, theta):
        return State.initial(self.sp, phi, theta)

    def quench(self, seed=0):
        return initial_state(RunConfig(), self.sp, seed)

    def smooth(self, amp=0.02):
        x = self.sp.nodes[0]
        phi = amp * (np.cos(np.pi * x) + 0.6 * np.cos(2 * np.pi * x) + 0.3 * np.cos(3 * np.pi * x))
        return self.state(phi, amp * np.cos(np.pi * x))


@pytest.fixture
def ref():
    return Setup()
