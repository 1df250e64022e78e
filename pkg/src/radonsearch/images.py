"""Grayscale image decoding, preprocessing, and dataset-manifest ingestion.

Supported raster formats are 8/16-bit grayscale PNG and binary PGM (P5).
Intensities are mapped linearly from the source bit depth into [0, 1].
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ParameterError, ParseError, ValidationError
from .irma import IrmaCode, parse_code

SPLITS = ("train", "test")
MANIFEST_HEADER = ["image_id", "file_path", "irma_code", "split"]
RAW_FACTORS = (0.25, 0.5, 1.0)


@dataclass(frozen=True)
class GrayImage:
    """2-D grayscale intensity grid with values in [0, 1].

    ``pixels`` is a ``(height, width)`` float64 array in row-major order.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"pixels must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("pixels contain non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("pixel intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def is_square(self) -> bool:
        return self.height == self.width


def _decode_pgm(data: bytes) -> GrayImage:
    """Decode binary PGM (P5); honours the header's maxval for rescaling."""
    pos = 2  # past the "P5" magic
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise OSError("truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":  # comment runs to end of line
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError(f"malformed PGM header fields {fields!r}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"invalid PGM dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"invalid PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    needed = width * height * dtype.itemsize
    raster = data[pos : pos + needed]
    if len(raster) < needed:
        raise OSError(f"truncated PGM raster: expected {needed} bytes, got {len(raster)}")
    values = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return GrayImage(values.astype(np.float64) / float(maxval))


def _decode_png(data: bytes) -> GrayImage:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except UnidentifiedImageError as exc:
        raise FormatError(f"unsupported image format: {exc}") from exc
    if img.format != "PNG":
        raise FormatError(f"unsupported image format {img.format!r}; PNG or PGM required")
    if img.mode == "L":
        scale = 255.0
    elif img.mode in ("I", "I;16", "I;16B", "I;16L"):
        scale = 65535.0
    else:
        raise FormatError(f"unsupported PNG mode {img.mode!r}; grayscale required")
    values = np.asarray(img, dtype=np.float64)
    return GrayImage(values / scale)


def load_gray(path: str | Path) -> GrayImage:
    """Load a grayscale PNG or binary PGM image.

    Returns:
        GrayImage with intensities mapped linearly into [0, 1].

    Raises:
        OSError: unreadable or truncated file.
        FormatError: content is not grayscale PNG or binary PGM.
    """
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        return _decode_pgm(data)
    return _decode_png(data)


def _resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resampling with half-pixel centers and edge clamp."""

    def axis_interp(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
        in_len = arr.shape[axis]
        src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
        src = np.clip(src, 0.0, in_len - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, in_len - 1)
        w = src - lo
        lo_vals = np.take(arr, lo, axis=axis)
        hi_vals = np.take(arr, hi, axis=axis)
        shape = [1, 1]
        shape[axis] = out_len
        w = w.reshape(shape)
        return lo_vals * (1.0 - w) + hi_vals * w

    out = axis_interp(pixels, out_h, axis=0)
    return axis_interp(out, out_w, axis=1)


def pad_to_square(img: GrayImage) -> GrayImage:
    """Zero-pad the shorter dimension symmetrically (extra pixel bottom/right)."""
    side = max(img.height, img.width)
    pad_rows = side - img.height
    pad_cols = side - img.width
    top, left = pad_rows // 2, pad_cols // 2
    padded = np.zeros((side, side), dtype=np.float64)
    padded[top : top + img.height, left : left + img.width] = img.pixels
    return GrayImage(padded)


def preprocess(img: GrayImage, target_side: int) -> GrayImage:
    """Pad to square and bilinearly resize to ``target_side`` x ``target_side``.

    Raises:
        ParameterError: target_side < 1.
    """
    if target_side < 1:
        raise ParameterError(f"target_side must be >= 1, got {target_side}")
    squared = pad_to_square(img)
    resized = _resize_bilinear(squared.pixels, target_side, target_side)
    return GrayImage(np.clip(resized, 0.0, 1.0))


def downsample_raw(img: GrayImage, factor: float):
    """Bilinearly shrink a square image and vectorize it row-major.

    Args:
        img: square image.
        factor: side ratio, one of 0.25, 0.5, 1.0; ``factor * side`` must be
            an integer.

    Returns:
        FeatureVector of kind ``raw`` with ``(factor * side) ** 2`` values.
    """
    from .features import FeatureVector  # deferred: features imports this module

    if not img.is_square:
        raise ParameterError(f"image must be square, got {img.height}x{img.width}")
    if factor not in RAW_FACTORS:
        raise ParameterError(f"factor must be one of {RAW_FACTORS}, got {factor}")
    out_side = factor * img.height
    if abs(out_side - round(out_side)) > 1e-9:
        raise ParameterError(
            f"factor {factor} times side {img.height} is not an integer"
        )
    out_side = int(round(out_side))
    if factor == 1.0:
        values = img.pixels.reshape(-1).copy()
    else:
        values = _resize_bilinear(img.pixels, out_side, out_side).reshape(-1)
    return FeatureVector(values=values, kind="raw")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    file_path: str
    irma_code: IrmaCode
    split: str


@dataclass
class DatasetManifest:
    """Validated list of dataset rows with unique image ids."""

    entries: list[ManifestEntry]

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def code_of(self, image_id: str) -> IrmaCode:
        for entry in self.entries:
            if entry.image_id == image_id:
                return entry.irma_code
        raise KeyError(f"unknown image id {image_id!r}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest CSV.

    The file must be UTF-8 with header ``image_id,file_path,irma_code,split``,
    unique image ids, 4-axis codes, and splits in {train, test}.

    Raises:
        ValidationError: structural problems; messages cite the row number.
        OSError: unreadable file.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("manifest is empty; header row required") from None
        if header != MANIFEST_HEADER:
            raise ValidationError(
                f"manifest header must be {','.join(MANIFEST_HEADER)!r}, got {','.join(header)!r}"
            )
        entries: list[ManifestEntry] = []
        seen: set[str] = set()
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ValidationError(f"row {row_num}: expected 4 fields, got {len(row)}")
            image_id, file_path, code_str, split = row
            if image_id in seen:
                raise ValidationError(f"row {row_num}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            try:
                code = parse_code(code_str)
            except ParseError as exc:
                raise ValidationError(f"row {row_num}: {exc}") from exc
            if split not in SPLITS:
                raise ValidationError(
                    f"row {row_num}: split must be one of {SPLITS}, got {split!r}"
                )
            entries.append(ManifestEntry(image_id, file_path, code, split))
    return DatasetManifest(entries=entries)
