"""Degradation and training-data pipeline: bicubic resampling, paired patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import Image

_CUBIC_A = -0.5  # Catmull-Rom family


def _cubic(t: np.ndarray) -> np.ndarray:
    a = _CUBIC_A
    at = np.abs(t)
    w = np.where(
        at <= 1,
        (a + 2) * at**3 - (a + 3) * at**2 + 1,
        a * at**3 - 5 * a * at**2 + 8 * a * at - 4 * a,
    )
    return np.where(at < 2, w, 0.0)


def _resample_matrix(n_in: int, n_out: int, scale: float) -> np.ndarray:
    """Row-stochastic (n_out, n_in) bicubic resampling operator.

    Downscaling widens the kernel by 1/scale (antialiasing); indices are
    clamped at the edges; rows are normalized so constants are preserved
    exactly.
    """
    out = np.zeros((n_out, n_in))
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centers - support).astype(int) + 1
    ntaps = int(np.ceil(2 * support)) + 2
    for o in range(n_out):
        idx = left[o] + np.arange(ntaps)
        w = _cubic((centers[o] - idx) * kscale) * kscale
        np.add.at(out[o], np.clip(idx, 0, n_in - 1), w)
    return out / out.sum(axis=1, keepdims=True)


def bicubic_resize(img: Image, scale_factor: float) -> Image:
    """Separable bicubic resampling with edge clamping; scale 1 is identity."""
    if scale_factor <= 0:
        raise ValueError(f"scale factor must be positive, got {scale_factor}")
    if scale_factor == 1.0:
        return Image(img.as_float01(), img.space)
    h, w = img.height, img.width
    ho = int(round(h * scale_factor))
    wo = int(round(w * scale_factor))
    if ho < 1 or wo < 1:
        raise ValueError(f"target size {(ho, wo)} degenerate for scale {scale_factor}")
    rh = _resample_matrix(h, ho, scale_factor)
    rw = _resample_matrix(w, wo, scale_factor)
    src = img.as_float01()
    out = np.einsum("oh,hwc->owc", rh, src)
    out = np.einsum("pw,owc->opc", rw, out)
    return Image(out, img.space)


@dataclass
class PatchPair:
    """Aligned LR/HR training crops in CHW layout, values in [0, 1]."""

    lr_patch: np.ndarray
    hr_patch: np.ndarray
    lr_origin: tuple[int, int]

    def __post_init__(self):
        if self.lr_patch.ndim != 3 or self.lr_patch.shape[0] != 3:
            raise ValueError(f"lr patch must be (3, p, p), got {self.lr_patch.shape}")
        r, rem = divmod(self.hr_patch.shape[1], self.lr_patch.shape[1])
        if rem or self.hr_patch.shape != (3, r * self.lr_patch.shape[1], r * self.lr_patch.shape[2]):
            raise ValueError(
                f"hr patch {self.hr_patch.shape} is not an integer multiple of "
                f"lr patch {self.lr_patch.shape}"
            )

    @property
    def scale(self) -> int:
        return self.hr_patch.shape[1] // self.lr_patch.shape[1]


def _chw(img: Image) -> np.ndarray:
    return img.as_float01().transpose(2, 0, 1)


def sample_patch_pairs(
    hr: Image, lr: Image, p: int, count: int, seed: int
) -> list[PatchPair]:
    """Draw `count` aligned LR/HR patch pairs uniformly at random.

    The HR crop sits at exactly `scale` times the LR origin; the sequence is
    reproducible from `seed`.
    """
    r, rem_h = divmod(hr.height, lr.height)
    _, rem_w = divmod(hr.width, lr.width)
    if rem_h or rem_w or hr.width != r * lr.width:
        raise ValueError(
            f"hr {hr.data.shape[:2]} is not an integer multiple of lr {lr.data.shape[:2]}"
        )
    if p > lr.height or p > lr.width:
        raise ValueError(f"patch size {p} exceeds lr extent {lr.data.shape[:2]}")
    rng = np.random.default_rng(seed)
    lr_chw = _chw(lr)
    hr_chw = _chw(hr)
    pairs = []
    for _ in range(count):
        y = int(rng.integers(0, lr.height - p + 1))
        x = int(rng.integers(0, lr.width - p + 1))
        pairs.append(
            PatchPair(
                lr_patch=lr_chw[:, y : y + p, x : x + p].copy(),
                hr_patch=hr_chw[:, r * y : r * (y + p), r * x : r * (x + p)].copy(),
                lr_origin=(y, x),
            )
        )
    return pairs


def augment(pair: PatchPair, rot: int = 0, hflip: bool = False) -> PatchPair:
    """Rotate by 0/90/180/270 degrees and optionally flip horizontally.

    The identical transform is applied to both members, so alignment and the
    value multiset are preserved. Requires square patches.
    """
    if rot not in (0, 90, 180, 270):
        raise ValueError(f"rotation must be one of 0/90/180/270, got {rot}")
    if pair.lr_patch.shape[1] != pair.lr_patch.shape[2]:
        raise ValueError(f"augment needs square patches, got {pair.lr_patch.shape}")

    def apply(a: np.ndarray) -> np.ndarray:
        if rot:
            a = np.rot90(a, k=rot // 90, axes=(1, 2))
        if hflip:
            a = a[:, :, ::-1]
        return np.ascontiguousarray(a)

    return PatchPair(
        lr_patch=apply(pair.lr_patch),
        hr_patch=apply(pair.hr_patch),
        lr_origin=pair.lr_origin,
    )
