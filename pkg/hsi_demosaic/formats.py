"""File formats.

Two little-endian binary containers, plus standard images and CSV tables:

- ``HSC1`` hypercube: magic, ``<u4`` B, H, W, then B*H*W ``<f4`` values in band-major,
  row-major order.
- ``MOS1`` snapshot: magic, ``<u4`` H, W, ``<u2`` period k, k*k ``<u2`` band indices
  row-major, then H*W ``<u2`` raw pixel values.

Decoding failures raise `ParseError` naming the byte offset. All writers are atomic.
"""

from __future__ import annotations

import io
import logging
from pathlib import Path

import numpy as np
import polars as pl
from PIL import Image

from ._utils import atomic_write, atomic_write_bytes
from .errors import ConfigurationError, ParseError, ShapeError
from .hypercube import Hypercube, MsfaPattern, RgbImage, SnapshotMosaic, normalize_raw

logger = logging.getLogger(__name__)

HSC_MAGIC = b"HSC1"
MOS_MAGIC = b"MOS1"
DEFAULT_WHITE_LEVEL = 65535
MAX_ELEMENTS = 1 << 34

_U16 = np.dtype("<u2")
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


class _Reader:
    """Sequential little-endian reader that tracks its byte offset."""

    def __init__(self, data: bytes, path: str | Path | None):
        self.data = data
        self.path = path
        self.offset = 0

    def fail(self, message: str, offset: int | None = None) -> ParseError:
        return ParseError(message, self.offset if offset is None else offset, self.path)

    def magic(self, expected: bytes) -> None:
        found = self.data[: len(expected)]
        if found != expected:
            raise self.fail(f"Bad magic {found!r}, expected {expected!r}")
        self.offset = len(expected)

    def array(self, dtype: np.dtype, count: int, what: str) -> np.ndarray:
        end = self.offset + dtype.itemsize * count
        if end > len(self.data):
            raise self.fail(
                f"Truncated {what}: need {end - self.offset} bytes, "
                f"have {len(self.data) - self.offset}",
                len(self.data),
            )
        values = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset = end
        return values

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise self.fail(f"{len(self.data) - self.offset} trailing bytes")


def _check_dims(reader: _Reader, dims: np.ndarray, header_offset: int) -> None:
    if (dims == 0).any():
        raise reader.fail(
            f"Zero dimension in {tuple(int(d) for d in dims)}", header_offset
        )
    if np.prod(dims.astype(object)) > MAX_ELEMENTS:
        raise reader.fail(
            f"Dimension overflow: {tuple(int(d) for d in dims)}", header_offset
        )


def encode_hypercube(cube: Hypercube) -> bytes:
    """Serialise a cube to ``HSC1`` bytes (values stored as float32)."""
    values = np.asarray(cube.values)
    if values.dtype != np.float32:
        logger.debug("Storing %s cube as float32", values.dtype)
    header = np.array(values.shape, dtype=_U32).tobytes()
    return HSC_MAGIC + header + values.astype(_F32).tobytes(order="C")


def decode_hypercube(
    data: bytes,
    band_centers: tuple[float, ...] = (),
    path: str | Path | None = None,
) -> Hypercube:
    """Parse ``HSC1`` bytes.

    Raises:
        ParseError: On bad magic, truncation, zero or overflowing dimensions,
            trailing bytes or non-finite values.

    """
    reader = _Reader(data, path)
    reader.magic(HSC_MAGIC)
    dims = reader.array(_U32, 3, "header").astype(np.int64)
    _check_dims(reader, dims, len(HSC_MAGIC))
    start = reader.offset
    values = reader.array(_F32, int(np.prod(dims)), "payload").reshape(dims)
    reader.finish()
    try:
        return Hypercube(values.astype(np.float32), band_centers)
    except (ValueError, ShapeError) as exc:
        raise reader.fail(f"Invalid cube payload ({exc})", start) from exc


def save_hypercube(cube: Hypercube, path: str | Path) -> Path:
    """Atomically write ``cube`` as ``HSC1``."""
    return atomic_write_bytes(path, encode_hypercube(cube))


def load_hypercube(path: str | Path, band_centers: tuple[float, ...] = ()) -> Hypercube:
    """Read an ``HSC1`` file."""
    return decode_hypercube(Path(path).read_bytes(), band_centers, path)


def quantize(values: np.ndarray, white_level: int = DEFAULT_WHITE_LEVEL) -> np.ndarray:
    """Map [0, 1] intensities to unsigned 16-bit codes ``round(v * white_level)``."""
    if not 0 < white_level <= np.iinfo(np.uint16).max:
        raise ConfigurationError(f"white_level {white_level} does not fit 16 bits.")
    return np.rint(np.asarray(values) * white_level).astype(np.uint16)


def encode_mosaic(
    mosaic: SnapshotMosaic, white_level: int = DEFAULT_WHITE_LEVEL
) -> bytes:
    """Serialise a mosaic to ``MOS1`` bytes."""
    pattern = mosaic.pattern
    parts = [
        MOS_MAGIC,
        np.array([mosaic.height, mosaic.width], dtype=_U32).tobytes(),
        np.array([pattern.period], dtype=_U16).tobytes(),
        np.asarray(pattern.band_map, dtype=_U16).tobytes(order="C"),
        quantize(mosaic.values, white_level).astype(_U16).tobytes(order="C"),
    ]
    return b"".join(parts)


def decode_mosaic(
    data: bytes,
    white_level: int = DEFAULT_WHITE_LEVEL,
    path: str | Path | None = None,
) -> SnapshotMosaic:
    """Parse ``MOS1`` bytes and normalise pixels by ``white_level``.

    Raises:
        ParseError: On bad magic, truncation, zero or overflowing dimensions, a pattern
            table inconsistent with the period or frame, out-of-range pixels or
            trailing bytes.

    """
    reader = _Reader(data, path)
    reader.magic(MOS_MAGIC)
    dims = reader.array(_U32, 2, "header").astype(np.int64)
    _check_dims(reader, dims, len(MOS_MAGIC))
    period_offset = reader.offset
    period = int(reader.array(_U16, 1, "period")[0])
    if period == 0:
        raise reader.fail("MSFA period is zero", period_offset)
    table_offset = reader.offset
    table = reader.array(_U16, period * period, "pattern table").reshape(period, period)
    try:
        pattern = MsfaPattern(period, tuple(map(tuple, table.tolist())))
        pattern.check_frame(int(dims[0]), int(dims[1]))
    except (ConfigurationError, ShapeError) as exc:
        raise reader.fail(f"Inconsistent pattern table ({exc})", table_offset) from exc
    pixel_offset = reader.offset
    raw = reader.array(_U16, int(np.prod(dims)), "pixels").reshape(dims)
    reader.finish()
    try:
        values = normalize_raw(raw, white_level)
    except ValueError as exc:
        raise reader.fail(str(exc), pixel_offset) from exc
    logger.debug("Decoded %dx%d mosaic, period %d", dims[0], dims[1], period)
    return SnapshotMosaic(values, pattern)


def save_mosaic(
    mosaic: SnapshotMosaic, path: str | Path, white_level: int = DEFAULT_WHITE_LEVEL
) -> Path:
    """Atomically write ``mosaic`` as ``MOS1``."""
    return atomic_write_bytes(path, encode_mosaic(mosaic, white_level))


def load_mosaic(
    path: str | Path, white_level: int = DEFAULT_WHITE_LEVEL
) -> SnapshotMosaic:
    """Read a ``MOS1`` file."""
    return decode_mosaic(Path(path).read_bytes(), white_level, path)


def _save_image(image: Image.Image, path: str | Path) -> Path:
    path = Path(path)
    fmt = Image.registered_extensions().get(path.suffix.lower())
    if fmt is None:
        raise ConfigurationError(f"Unsupported image extension {path.suffix!r}.")
    return atomic_write(path, lambda f: image.save(f, format=fmt))


def save_rgb_png(rgb: RgbImage, path: str | Path) -> Path:
    """Write an 8-bit RGB image (PNG by default; any Pillow format by suffix)."""
    codes = np.rint(np.moveaxis(rgb.values, 0, -1) * 255.0).astype(np.uint8)
    return _save_image(Image.fromarray(codes), path)


def load_rgb_image(path: str | Path) -> RgbImage:
    """Read an 8- or 16-bit RGB image into [0, 1]."""
    with Image.open(path) as image:
        array = np.asarray(image)
        mode = image.mode
    if array.ndim == 2:  # noqa: PLR2004
        array = np.repeat(array[..., None], 3, axis=-1)
    array = array[..., :3]
    scale = 65535.0 if array.dtype == np.uint16 or mode.startswith("I") else 255.0
    return RgbImage(np.moveaxis(array.astype(np.float64) / scale, -1, 0))


def save_mosaic_image(
    mosaic: SnapshotMosaic, path: str | Path, white_level: int = DEFAULT_WHITE_LEVEL
) -> Path:
    """Write a mosaic as a lossless 16-bit single-channel PNG or TIFF."""
    return _save_image(Image.fromarray(quantize(mosaic.values, white_level)), path)


def load_mosaic_image(
    path: str | Path,
    pattern: MsfaPattern,
    white_level: int = DEFAULT_WHITE_LEVEL,
) -> SnapshotMosaic:
    """Read a 16-bit single-channel image as a mosaic taken through ``pattern``."""
    with Image.open(path) as image:
        raw = np.asarray(image).astype(np.int64)
    if raw.ndim != 2:  # noqa: PLR2004
        raise ShapeError(f"{path} is not a single-channel image.")
    return SnapshotMosaic(normalize_raw(raw, white_level), pattern)


def load_any_mosaic(
    path: str | Path,
    pattern: MsfaPattern | None = None,
    white_level: int = DEFAULT_WHITE_LEVEL,
) -> SnapshotMosaic:
    """Dispatch on suffix: ``.mos`` containers carry their pattern, images need one."""
    path = Path(path)
    if path.suffix.lower() == ".mos":
        return load_mosaic(path, white_level)
    return load_mosaic_image(path, pattern or MsfaPattern.default(), white_level)


def write_table(frame: pl.DataFrame, path: str | Path) -> Path:
    """Atomically write a polars frame as CSV."""
    buffer = io.BytesIO()
    frame.write_csv(buffer)
    return atomic_write_bytes(path, buffer.getvalue())


def read_table(path: str | Path) -> pl.DataFrame:
    """Read a CSV table."""
    try:
        return pl.read_csv(path)
    except pl.exceptions.PolarsError as exc:
        raise ParseError(f"Unreadable CSV ({exc})", 0, path) from exc
