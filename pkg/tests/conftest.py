import numpy as np
import pytest

from rhythmseg.gradcheck import reduced_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """Reduced-width model: 256 samples, 4 base filters, 4 classes."""
    return reduced_config()


def numeric_grad(f, arr, h=1e-6):
    """Full central-difference gradient of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g
