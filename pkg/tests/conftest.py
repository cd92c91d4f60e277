import numpy as np
import pytest

from collisim.qcore import QuantumState


@pytest.fixture
def bell():
    vec = np.zeros(4, dtype=complex)
    vec[0] = vec[3] = 1.0 / np.sqrt(2.0)
    return QuantumState.from_vector(vec)
