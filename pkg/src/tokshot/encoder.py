"""Deterministic toy patch encoder.

Splits a raw image into P x P patches and projects each flattened patch to a
D-dimensional token through a fixed seeded random matrix.  This is a linear
stand-in for a trained patch-embedding backbone: no nonlinearity, no
attention, no positional information.  It exists so the classifier and the
inner loop can be exercised end to end without any network weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .episode import TokenGrid
from .errors import DataError

__all__ = ["RawImage", "PatchProjector", "PnmError", "extract_patches", "encode",
           "read_pnm"]


class PnmError(DataError):
    """A PPM/PGM file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class RawImage:
    """H x W x C pixel values in [0, 1]; C is 1 (gray) or 3 (RGB)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be HxWxC with C in (1, 3), got {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        pixels = pixels.copy()
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def _projection_matrix(patch_size: int, channels: int, out_dim: int, seed: int) -> np.ndarray:
    # Pinned generation procedure: the raw 64-bit PCG64 stream seeded with
    # `seed`, each word mapped to [0, 1) by w * 2**-64, then affinely onto
    # [-b, b] with b = 1/sqrt(P*P*C), filling the matrix row-major.  Working
    # from the raw stream (not Generator convenience methods) ties the result
    # to the PCG64 algorithm itself, so one seed means one matrix everywhere.
    n_in = patch_size * patch_size * channels
    raw = np.random.PCG64(seed).random_raw(n_in * out_dim)
    uniform = raw * 2.0 ** -64
    bound = 1.0 / math.sqrt(n_in)
    return ((2.0 * uniform - 1.0) * bound).reshape(n_in, out_dim)


@dataclass(frozen=True, eq=False)
class PatchProjector:
    """Seeded random projection from flattened P x P x C patches to D dims."""

    patch_size: int
    channels: int
    out_dim: int
    seed: int
    projection: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.patch_size < 1 or self.out_dim < 1 or self.channels not in (1, 3):
            raise ValueError(
                f"bad projector shape: P={self.patch_size} C={self.channels} "
                f"D={self.out_dim}"
            )
        projection = _projection_matrix(self.patch_size, self.channels,
                                        self.out_dim, self.seed)
        projection.flags.writeable = False
        object.__setattr__(self, "projection", projection)


def extract_patches(image: RawImage, patch_size: int) -> np.ndarray:
    """Split into M = (H/P)*(W/P) flattened patches, row-major grid order.

    Within a patch, pixel values are concatenated row-major with the channel
    index varying fastest.
    """
    h, w, c = image.pixels.shape
    if patch_size < 1 or h % patch_size or w % patch_size:
        raise DataError(
            f"image dimensions not divisible by patch size: H={h}, W={w}, P={patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    patches = image.pixels.reshape(gh, patch_size, gw, patch_size, c)
    return patches.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch_size * patch_size * c)


def encode(image: RawImage, projector: PatchProjector, image_id: str = "") -> TokenGrid:
    """Project every patch of the image to a token; linear in pixel values."""
    if image.channels != projector.channels:
        raise DataError(
            f"image has {image.channels} channels, projector expects {projector.channels}"
        )
    patches = extract_patches(image, projector.patch_size)
    tokens = patches @ projector.projection
    gh = image.height // projector.patch_size
    gw = image.width // projector.patch_size
    return TokenGrid(tokens, gh, gw, image_id=image_id)


def read_pnm(path) -> RawImage:
    """Read a binary PGM (P5, gray) or PPM (P6, RGB) file with maxval 255."""
    from pathlib import Path

    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PnmError(f"{path}: cannot read file: {exc}") from exc

    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            byte = data[pos:pos + 1]
            if byte == b"#":
                while pos < len(data) and data[pos:pos + 1] != b"\n":
                    pos += 1
            elif byte.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PnmError(f"{path}: unexpected end of header")
        return data[start:pos]

    magic = token()
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"{path}: unsupported magic {magic!r}, need binary P5 or P6")
    channels = 1 if magic == b"P5" else 3
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise PnmError(f"{path}: non-numeric header field: {exc}") from exc
    if maxval != 255:
        raise PnmError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # exactly one whitespace byte separates the header from the raster
    expected = width * height * channels
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise PnmError(
            f"{path}: raster has {len(raster)} bytes, expected {expected} "
            f"for {width}x{height}x{channels}"
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return RawImage(pixels / 255.0)
