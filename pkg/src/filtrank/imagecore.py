"""Image container, PNG I/O, and the deterministic geometry primitives
(resize / crop / flip) shared by every stage of the pipeline.

Pixels live in float32 [0, 1], HxWx3 row-major. Every operation clamps its
output so the range invariant holds locally, not just at save time.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

CHANNELS = 3

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Seeded generator; identical seed yields an identical draw sequence."""
    return np.random.default_rng(seed)


class ImageError(Exception):
    """Base class for image-layer failures."""


class MissingFile(ImageError):
    pass


class DecodeError(ImageError):
    pass


class ZeroDimension(ImageError):
    pass


class CropLargerThanImage(ImageError):
    pass


@dataclass(frozen=True)
class Image:
    """An RGB raster with float32 intensities in [0, 1].

    Treated as immutable: operations return new instances and never write
    through ``pixels``.
    """

    pixels: np.ndarray  # (H, W, 3) float32

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @staticmethod
    def from_array(arr: np.ndarray) -> "Image":
        """Build an Image from any float/int array shaped (H, W, 3), clamping to [0, 1]."""
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim != 3 or a.shape[2] != CHANNELS:
            raise DecodeError(f"expected (H, W, 3) array, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ZeroDimension("images must be at least 1x1")
        return Image(np.clip(a, 0.0, 1.0))


def load_image(path: str | Path) -> Image:
    """Load an 8-bit RGB PNG, mapping {0..255} to [0, 1] by division by 255."""
    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    try:
        with _PILImage.open(p) as im:
            if im.format != "PNG":
                raise DecodeError(f"{p}: not a PNG file (format={im.format})")
            if im.mode != "RGB":
                raise DecodeError(f"{p}: mode {im.mode} is not 8-bit RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except DecodeError:
        raise
    except Exception as exc:  # corrupt file, truncated stream, ...
        raise DecodeError(f"{p}: {exc}") from exc
    return Image(arr.astype(np.float32) / 255.0)


def save_image(img: Image, path: str | Path) -> None:
    """Write an Image as an 8-bit RGB PNG (deterministic bytes for equal pixels)."""
    arr = np.clip(img.pixels, 0.0, 1.0)
    u8 = np.rint(arr * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _PILImage.fromarray(u8, mode="RGB").save(str(path), format="PNG")


def resize(img: Image, w: int, h: int) -> Image:
    """Bilinear resize to exactly (w, h) using half-pixel-centre sampling.

    Resizing to the input dimensions reproduces the input pixels exactly.
    """
    if w < 1 or h < 1:
        raise ZeroDimension(f"resize target must be >= 1x1, got {w}x{h}")
    src = img.pixels
    in_h, in_w = src.shape[0], src.shape[1]
    if (w, h) == (in_w, in_h):
        return Image(src.copy())

    # Source coordinate of each output sample, clamped to the valid range.
    ys = (np.arange(h, dtype=np.float64) + 0.5) * (in_h / h) - 0.5
    xs = (np.arange(w, dtype=np.float64) + 0.5) * (in_w / w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)

    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]

    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return Image(np.clip(out.astype(np.float32), 0.0, 1.0))


def random_crop(img: Image, w: int, h: int, rng: Rng) -> Image:
    """Contiguous sub-rectangle with offsets drawn uniformly (row first, then column)."""
    if w > img.width or h > img.height:
        raise CropLargerThanImage(
            f"crop {w}x{h} exceeds image {img.width}x{img.height}"
        )
    top = int(rng.integers(0, img.height - h + 1))
    left = int(rng.integers(0, img.width - w + 1))
    return Image(img.pixels[top : top + h, left : left + w].copy())


def center_crop(img: Image, w: int, h: int) -> Image:
    """Deterministic centre crop, used at test time instead of random offsets."""
    if w > img.width or h > img.height:
        raise CropLargerThanImage(
            f"crop {w}x{h} exceeds image {img.width}x{img.height}"
        )
    top = (img.height - h) // 2
    left = (img.width - w) // 2
    return Image(img.pixels[top : top + h, left : left + w].copy())


def hflip(img: Image) -> Image:
    """Mirror horizontally: column j maps to column width-1-j."""
    return Image(img.pixels[:, ::-1].copy())
