"""Evaluation metrics: BT.601 luma conversion, Y-channel PSNR and SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# BT.601 limited-range RGB -> YCbCr, for unit-range RGB inputs
_YCBCR_MATRIX = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
)
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])

PSNR_IDENTICAL = math.inf


@dataclass
class Image:
    """(H, W, 3) image; uint8 in [0, 255] or float in [0, 1], tagged by space."""

    data: np.ndarray
    space: str = "rgb"

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {self.data.shape}")
        if self.space not in ("rgb", "ycbcr"):
            raise ValueError(f"unknown color space {self.space!r}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def as_float01(self) -> np.ndarray:
        if self.data.dtype == np.uint8:
            return self.data.astype(np.float64) / 255.0
        return self.data.astype(np.float64)


def rgb_to_ycbcr(img: Image) -> Image:
    """Limited-range BT.601 conversion; channels land on the 8-bit scale.

    Black maps to Y=16, white to Y=235.
    """
    if img.space != "rgb":
        raise ValueError(f"expected an rgb image, got {img.space!r}")
    rgb = img.as_float01()
    ycbcr = rgb @ _YCBCR_MATRIX.T + _YCBCR_OFFSET
    return Image(ycbcr, space="ycbcr")


def _luma(img: Image) -> np.ndarray:
    """Y channel on the 0..255 scale."""
    if img.space == "ycbcr":
        data = img.data
        if data.dtype == np.uint8:
            data = data.astype(np.float64)
        return data[:, :, 0]
    return rgb_to_ycbcr(img).data[:, :, 0]


def _crop_border(a: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return a
    if 2 * border >= min(a.shape[:2]):
        raise ValueError(f"border {border} swallows the whole {a.shape[:2]} image")
    return a[border:-border, border:-border]


def psnr(a: Image, b: Image, border_crop: int = 0) -> float:
    """Peak signal-to-noise ratio in dB over the Y channel.

    `border_crop` pixels are shaved from every side first (the customary
    `scale` pixels for super-resolution scoring). Identical inputs return
    the infinity sentinel.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    ya = _crop_border(_luma(a), border_crop)
    yb = _crop_border(_luma(b), border_crop)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1D kernel along both axes."""
    from numpy.lib.stride_tricks import sliding_window_view

    size = kernel.size
    rows = sliding_window_view(img, size, axis=0) @ kernel
    return sliding_window_view(rows, size, axis=1) @ kernel


def ssim(a: Image, b: Image) -> float:
    """Structural similarity over the Y channel.

    11x11 Gaussian window (sigma 1.5), C1=(0.01*255)^2, C2=(0.03*255)^2,
    averaged over positions where the window fits entirely.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    x = _luma(a)
    y = _luma(b)
    if min(x.shape) < 11:
        raise ValueError(f"image {x.shape} smaller than the 11x11 ssim window")
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    k = _gaussian_kernel()
    mu_x = _filter_valid(x, k)
    mu_y = _filter_valid(y, k)
    var_x = _filter_valid(x * x, k) - mu_x**2
    var_y = _filter_valid(y * y, k) - mu_y**2
    cov = _filter_valid(x * y, k) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
