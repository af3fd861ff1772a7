import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def smooth_texture(seed, shape=(240, 320), sigma=6.0):
    """Band-limited noise scaled to [20, 235] (float image)."""
    rng = np.random.default_rng(seed)
    h, w = shape
    noise = rng.standard_normal(shape)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    tex = np.real(np.fft.ifft2(np.fft.fft2(noise) * np.exp(-2 * (np.pi * sigma) ** 2 * (fx**2 + fy**2))))
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 20.0 + 215.0 * tex


def fourier_shift(img, dx, dy):
    """Periodic sub-pixel translation: out(x, y) = img(x - dx, y - dy)."""
    h, w = img.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return np.real(np.fft.ifft2(np.fft.fft2(img) * np.exp(-2j * np.pi * (fx * dx + fy * dy))))


@pytest.fixture
def texture():
    return smooth_texture(7)
