"""Image file I/O: binary PPM (P6) natively, PNG through Pillow when present."""

from __future__ import annotations

import numpy as np

from .metrics import Image

_MAX_SIDE = 1 << 20  # dimension overflow guard


class ImageFormatError(ValueError):
    """Malformed or unsupported image file."""


def to_uint8(img: Image) -> Image:
    """Clamp to [0, 1] and quantize to 8 bits (identity on uint8 input)."""
    if img.data.dtype == np.uint8:
        return img
    data = np.clip(img.data, 0.0, 1.0)
    return Image((data * 255.0 + 0.5).astype(np.uint8), img.space)


def _read_ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read whitespace-separated header tokens, honoring '#' comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(buf):
            raise ImageFormatError("truncated PPM header")
        ch = buf[pos : pos + 1]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == b"#":
            nl = buf.find(b"\n", pos)
            if nl < 0:
                raise ImageFormatError("truncated PPM header")
            pos = nl + 1
        else:
            end = pos
            while end < len(buf) and buf[end : end + 1] not in b" \t\r\n":
                end += 1
            tokens.append(buf[pos:end])
            pos = end
    return tokens, pos


def read_ppm(path) -> Image:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] in (b"P1", b"P2", b"P3", b"P4", b"P5"):
        raise ImageFormatError(
            f"unsupported PPM variant {buf[:2].decode('ascii', 'replace')}; only binary P6 is handled"
        )
    if buf[:2] != b"P6":
        raise ImageFormatError("not a PPM file (missing P6 magic)")
    tokens, pos = _read_ppm_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ImageFormatError(f"non-numeric PPM header fields {tokens[1:4]!r}") from None
    if not (0 < width <= _MAX_SIDE and 0 < height <= _MAX_SIDE):
        raise ImageFormatError(f"PPM dimensions {width}x{height} out of range")
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM supported, got maxval {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    raster = buf[pos : pos + width * height * 3]
    if len(raster) != width * height * 3:
        raise ImageFormatError(
            f"truncated PPM raster: expected {width * height * 3} bytes, got {len(raster)}"
        )
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return Image(data.copy(), space="rgb")


def write_ppm(img: Image, path) -> None:
    if img.space != "rgb":
        raise ValueError(f"PPM stores rgb images, got {img.space!r}")
    u8 = to_uint8(img)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{u8.width} {u8.height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(u8.data).tobytes())


def read_image(path) -> Image:
    p = str(path)
    if p.lower().endswith((".png", ".jpg", ".jpeg", ".bmp")):
        return _read_via_pillow(p)
    return read_ppm(p)


def write_image(img: Image, path) -> None:
    p = str(path)
    if p.lower().endswith((".png", ".jpg", ".jpeg", ".bmp")):
        _write_via_pillow(img, p)
        return
    write_ppm(img, p)


def _read_via_pillow(path: str) -> Image:
    try:
        from PIL import Image as PILImage
    except ImportError as exc:
        raise ImageFormatError(
            "reading non-PPM images requires Pillow (pip install elansr[png])"
        ) from exc
    with PILImage.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return Image(data, space="rgb")


def _write_via_pillow(img: Image, path: str) -> None:
    try:
        from PIL import Image as PILImage
    except ImportError as exc:
        raise ImageFormatError(
            "writing non-PPM images requires Pillow (pip install elansr[png])"
        ) from exc
    PILImage.fromarray(to_uint8(img).data, mode="RGB").save(path)
