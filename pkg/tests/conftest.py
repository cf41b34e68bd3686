import numpy as np
import pytest

from ubp.blurprior import Image
from ubp.numkernel import Rng


@pytest.fixture
def rng():
    return Rng(12345)


def textured_image(size=64, channels=1, seed=7) -> Image:
    """Deterministic image with energy at several spatial scales."""
    gen = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    canvas = (
        np.sin(2 * np.pi * xx / 5.0)
        + np.sin(2 * np.pi * (xx + yy) / 11.0)
        + 0.8 * np.sin(2 * np.pi * yy / 3.0)
        + gen.normal(0.0, 0.35, (size, size))
    )
    canvas = (canvas - canvas.min()) / (canvas.max() - canvas.min())
    return Image(np.repeat(canvas[None, :, :], channels, axis=0))


@pytest.fixture
def texture():
    return textured_image()
