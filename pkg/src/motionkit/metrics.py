"""Image/video quality metrics computable without pretrained networks.

Images are float64 arrays in ``[0, 1]`` shaped ``(H, W)`` or ``(H, W, C)``
with ``C`` in {1, 3}. Fréchet distance works on feature matrices supplied
by the caller (rows are samples).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DegenerateError, IoError, NumericError, ShapeError

MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
FRAME_SUFFIXES = (".png", ".ppm")


def as_image(a) -> np.ndarray:
    """Validate and return an image as a float64 ``(H, W, C)`` array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3) or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected (H, W) or (H, W, 1|3) image, got shape {a.shape}")
    if not (np.all(a >= 0.0) and np.all(a <= 1.0)):
        raise ArgumentError("image values must lie in [0, 1]")
    return a


def _pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for peak value 1."""
    m = mse(a, b)
    if m == 0.0:
        raise DegenerateError("PSNR is unbounded for identical images; use psnr_star")
    return 10.0 * math.log10(1.0 / m)


def psnr_star(frames_a, frames_b) -> float:
    """Video PSNR over the MSE pooled across all frames, floored at 1e-10 (cap 100 dB)."""
    frames_a, frames_b = list(frames_a), list(frames_b)
    if len(frames_a) != len(frames_b) or not frames_a:
        raise ShapeError(f"need equal non-zero frame counts, got {len(frames_a)} and {len(frames_b)}")
    sq, n = 0.0, 0
    for fa, fb in zip(frames_a, frames_b):
        a, b = _pair(fa, fb)
        sq += float(np.sum((a - b) ** 2))
        n += a.size
    return 10.0 * math.log10(1.0 / max(sq / n, MSE_FLOOR))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, window=None) -> np.ndarray:
    """Per-window SSIM over valid positions, shape (H-10, W-10, C)."""
    a, b = _pair(a, b)
    w = gaussian_window() if window is None else window
    k = w.shape[0]
    if a.shape[0] < k or a.shape[1] < k:
        raise ShapeError(f"image {a.shape[:2]} smaller than the {k}x{k} SSIM window")
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2

    def filt(x):
        return np.einsum("ijcuv,uv->ijc", sliding_window_view(x, (k, k), axis=(0, 1)), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a, b) -> float:
    """SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, data range 1.

    Valid windows only; multichannel images average over channels.
    """
    return float(np.mean(ssim_map(a, b)))


# ---------------------------------------------------------------------------
# Fréchet distance


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ShapeError(f"mean {mean.shape} and covariance {cov.shape} are inconsistent")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9):
            raise ArgumentError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and unbiased covariance of the rows of ``features``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"features must be a matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ArgumentError("need at least two feature rows")
    mu = x.mean(axis=0)
    xc = x - mu
    c = xc.T @ xc / (x.shape[0] - 1)
    return GaussianStats(mu, (c + c.T) / 2)


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def trace_sqrt_product(cov_p, cov_q) -> float:
    """Tr((cov_p cov_q)^(1/2)) via the symmetric form sqrt(S_p cov_q S_p), S_p = cov_p^(1/2)."""
    try:
        sp = _psd_sqrt(cov_p)
        vals = np.linalg.eigvalsh((sp @ cov_q @ sp + (sp @ cov_q @ sp).T) / 2)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"eigendecomposition failed: {e}") from None
    return float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    if p.dim != q.dim:
        raise ShapeError(f"dimension mismatch: {p.dim} vs {q.dim}")
    diff = p.mean - q.mean
    d = float(diff @ diff) + float(np.trace(p.cov) + np.trace(q.cov)) \
        - 2.0 * trace_sqrt_product(p.cov, q.cov)
    return max(d, 0.0)


# ---------------------------------------------------------------------------
# image files


def read_image(path) -> np.ndarray:
    """Decode an 8-bit PNG or PPM (binary or ASCII) to ``[0, 1]`` floats."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            a = np.asarray(im, dtype=np.float64) / 255.0
    except OSError as e:
        raise IoError(path, str(e)) from None
    return as_image(a)


def list_frames(directory) -> list[str]:
    """Frame files in lexicographic filename order."""
    try:
        names = sorted(n for n in os.listdir(directory) if n.lower().endswith(FRAME_SUFFIXES))
    except OSError as e:
        raise IoError(directory, e.strerror or str(e)) from None
    return [os.path.join(directory, n) for n in names]


def read_frames(directory) -> list[np.ndarray]:
    return [read_image(p) for p in list_frames(directory)]
