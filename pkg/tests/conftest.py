import numpy as np
import pytest

from elasto.io import RfFrame
from elasto.phantom import DeformationModel, FrameGeometry, make_phantom_pair


@pytest.fixture(scope="session")
def speckle_pair():
    """Small noiseless rigid-shift pair shared by solver-level tests."""
    grid = FrameGeometry.from_frequencies(m=120, n=12, sampling_mhz=40.0)
    model = DeformationModel("rigid_shift", shift_samples=3.4)
    pre, post, truth = make_phantom_pair(model, grid, seed=42, psnr_db=None)
    return pre, post, truth


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def smooth_frame(rng, m, n, scale=1.0):
    """Band-limited random frame: white noise blurred along depth."""
    raw = rng.standard_normal((m + 8, n))
    kernel = np.hanning(9)
    kernel /= kernel.sum()
    out = np.empty((m, n))
    for j in range(n):
        out[:, j] = np.convolve(raw[:, j], kernel, mode="valid")[:m]
    return RfFrame(out * scale, 0.01925, 0.2, 7.27, 40.0)
