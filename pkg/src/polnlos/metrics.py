"""Image-quality metrics on [0, 1] images: PSNR, ZNCC and SSIM."""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PSNR_IDENTICAL = float("inf")


@dataclass(eq=False)
class ImageBuffer:
    """Row-major image; ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"image pixels must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image pixels must be finite")
        self.pixels = px

    @classmethod
    def from_vector(cls, values, width, height):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != width * height:
            raise ValueError(f"{values.size} values cannot fill a {width}x{height} image")
        return cls(values.reshape(height, width))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


def _pair(reference, test):
    a = reference.pixels if isinstance(reference, ImageBuffer) else np.asarray(reference, float)
    b = test.pixels if isinstance(test, ImageBuffer) else np.asarray(test, float)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(reference, test, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _pair(reference, test)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak**2 / mse))


def zncc(reference, test):
    """Zero-mean normalized cross-correlation (Pearson correlation)."""
    a, b = _pair(reference, test)
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        raise ValueError("zncc is undefined for a constant image")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def ssim(reference, test, sigma=1.5, win_size=11, k1=0.01, k2=0.03, data_range=1.0):
    """Mean structural similarity with a Gaussian window.

    Local statistics use an 11x11 Gaussian window (sigma 1.5) and population
    variances; the mean is taken over window positions that lie fully inside
    the image.
    """
    a, b = _pair(reference, test)
    if min(a.shape) < win_size:
        raise ValueError(f"images must be at least {win_size}x{win_size} for SSIM")
    radius = (win_size - 1) // 2
    filt = lambda x: ndimage.gaussian_filter(x, sigma, mode="reflect", truncate=radius / sigma)
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    inner = s[radius:s.shape[0] - radius, radius:s.shape[1] - radius]
    return float(inner.mean())
