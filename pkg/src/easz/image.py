"""Image representation, PGM/PPM I/O, and the two-stage patchify transforms.

Pixels live as uint8 arrays of shape (height, width, channels).  Images that
do not divide evenly into n x n patches are padded by edge replication; the
pre-padding dimensions ride along so output is always cropped back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GeometryError, ParameterError, ParseError


@dataclass(frozen=True)
class Image:
    """A raster plus its pre-padding dimensions.

    pixels has shape (height, width, channels), dtype uint8,
    channel-interleaved.  orig_height/orig_width record the region that is
    meaningful; anything beyond it is replication padding.
    """

    pixels: np.ndarray
    orig_height: int
    orig_width: int

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.dtype != np.uint8:
            raise DimensionError(
                f"pixels must be uint8 (H, W, C), got dtype {self.pixels.dtype}, "
                f"shape {self.pixels.shape}"
            )
        if self.pixels.shape[2] not in (1, 3):
            raise DimensionError(f"channels must be 1 or 3, got {self.pixels.shape[2]}")
        if self.orig_height > self.height or self.orig_width > self.width:
            raise DimensionError("original dims exceed stored dims")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def make_image(pixels: np.ndarray) -> Image:
    """Wrap a (H, W, C) or (H, W) uint8 array with orig dims = stored dims."""
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return Image(arr, arr.shape[0], arr.shape[1])


@dataclass(frozen=True)
class PatchGrid:
    """Row-major n x n patches of a (possibly padded) image.

    patches has shape (patch_rows * patch_cols, n, n, C).  subgrid_side is
    the number of b x b sub-patches per patch side.
    """

    patches: np.ndarray
    patch_size_n: int
    subpatch_size_b: int
    patch_rows: int
    patch_cols: int
    orig_height: int
    orig_width: int

    @property
    def subgrid_side(self) -> int:
        return self.patch_size_n // self.subpatch_size_b

    @property
    def channels(self) -> int:
        return self.patches.shape[3]

    @property
    def padded_height(self) -> int:
        return self.patch_rows * self.patch_size_n

    @property
    def padded_width(self) -> int:
        return self.patch_cols * self.patch_size_n


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ParseError("truncated header: expected token")
    return data[start:pos], pos


def load_raster(data: bytes) -> Image:
    """Parse a binary PGM (P5) or PPM (P6) stream with maxval 255."""
    magic, pos = _read_token(data, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ParseError(f"unsupported magic {magic!r}; want P5 or P6")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise ParseError(f"bad {name}: {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"maxval must be 255, got {maxval}")
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise ParseError(f"truncated payload: want {need} bytes, have {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(pixels.copy(), height, width)


def store_raster(img: Image) -> bytes:
    """Serialize the unpadded region as P5 (1 channel) or P6 (3 channels)."""
    region = img.pixels[: img.orig_height, : img.orig_width]
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.orig_width, img.orig_height)
    return header + region.tobytes()


def patchify(img: Image, n: int, b: int) -> PatchGrid:
    """Split into non-overlapping n x n patches of b x b sub-patches.

    Edge-replication pads the image up to multiples of n first.
    """
    if b < 1 or n < b:
        raise ParameterError(f"need n >= b >= 1, got n={n}, b={b}")
    if n % b != 0:
        raise ParameterError(f"patch size {n} not divisible by sub-patch size {b}")
    h, w = img.height, img.width
    ph = (h + n - 1) // n * n
    pw = (w + n - 1) // n * n
    px = img.pixels
    if (ph, pw) != (h, w):
        px = np.pad(px, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")
    rows, cols = ph // n, pw // n
    patches = (
        px.reshape(rows, n, cols, n, img.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, n, n, img.channels)
    )
    return PatchGrid(patches, n, b, rows, cols, img.orig_height, img.orig_width)


def unpatchify(grid: PatchGrid) -> Image:
    """Reassemble patches and crop back to the original region."""
    n = grid.patch_size_n
    expected = grid.patch_rows * grid.patch_cols
    if grid.patches.shape[0] != expected:
        raise GeometryError(
            f"patch count {grid.patches.shape[0]} != {grid.patch_rows}x{grid.patch_cols}"
        )
    c = grid.channels
    px = (
        grid.patches.reshape(grid.patch_rows, grid.patch_cols, n, n, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.padded_height, grid.padded_width, c)
    )
    cropped = px[: grid.orig_height, : grid.orig_width].copy()
    return Image(cropped, grid.orig_height, grid.orig_width)
