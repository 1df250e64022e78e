"""Feature extraction: Radon projections, HOG descriptors, raw pixels.

The Radon transform used here rotates pixel centers about the image center
and splits each pixel's mass linearly between the two nearest detector
bins, so every projection conserves the image's total intensity.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    FormatError,
    ParameterError,
    ValidationError,
)
from .images import GrayImage, downsample_raw

FEATURE_KINDS = ("radon", "hog", "raw")

DUMP_MAGIC = b"radonsearch-feat"  # 16 bytes
DUMP_VERSION = 1
_KIND_TAGS = {kind: i for i, kind in enumerate(FEATURE_KINDS)}
_TAG_KINDS = {i: kind for kind, i in _KIND_TAGS.items()}


@dataclass(frozen=True)
class RadonConfig:
    """Equidistant projection setup: N angles k*(180/N) over a half turn."""

    num_projections: int = 16
    target_side: int = 256

    def __post_init__(self) -> None:
        if self.num_projections < 1:
            raise ParameterError(f"num_projections must be >= 1, got {self.num_projections}")
        if self.target_side < 1:
            raise ParameterError(f"target_side must be >= 1, got {self.target_side}")


@dataclass(frozen=True)
class HogConfig:
    """Square cell grid with per-cell orientation histograms."""

    num_histograms: int = 8
    orientation_bins: int = 9
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if self.num_histograms < 1:
            raise ParameterError(f"num_histograms must be >= 1, got {self.num_histograms}")
        if self.orientation_bins < 1:
            raise ParameterError(f"orientation_bins must be >= 1, got {self.orientation_bins}")
        if self.epsilon <= 0.0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class RawConfig:
    """Raw-pixel vectorization at a downsampling ratio."""

    factor: float = 1.0


@dataclass(frozen=True)
class FeatureVector:
    """1-D real-valued descriptor tagged with its family and source image."""

    values: np.ndarray
    kind: str
    source_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError(f"feature values must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("feature values contain non-finite entries")
        if self.kind not in FEATURE_KINDS:
            raise ValidationError(f"kind must be one of {FEATURE_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]


def projection_bin_count(side: int) -> int:
    """Detector bins per projection: ceil(side * sqrt(2)), diagonal coverage."""
    return math.ceil(side * math.sqrt(2.0))


def radon_angles(num_projections: int) -> np.ndarray:
    """Projection angles in degrees: k * (180 / N) for k = 0..N-1."""
    return np.arange(num_projections, dtype=np.float64) * (180.0 / num_projections)


def radon_transform(img: GrayImage, cfg: RadonConfig) -> list[np.ndarray]:
    """Compute equidistant parallel-ray projections of a square image.

    Angle 0 projects along image columns; angles grow counterclockwise.
    Each pixel's intensity is split linearly between the two detector bins
    nearest its rotated center, so the bin sum of every projection equals
    the total pixel intensity.

    Returns:
        One 1-D array of bin sums per angle, each of length
        ``projection_bin_count(side)``.

    Raises:
        ParameterError: the image is not square.
    """
    if not img.is_square:
        raise ParameterError(f"image must be square, got {img.height}x{img.width}")
    side = img.height
    bins = projection_bin_count(side)
    center = (side - 1) / 2.0
    coords = np.arange(side, dtype=np.float64) - center
    xs = np.tile(coords, side)      # column offset of each row-major pixel
    ys = np.repeat(coords, side)    # row offset of each row-major pixel
    mass = img.pixels.reshape(-1)
    offset = (bins - 1) / 2.0
    n = mass.shape[0]
    indices = np.empty(2 * n, dtype=np.int64)
    weights = np.empty(2 * n, dtype=np.float64)
    sinogram = []
    for angle_deg in radon_angles(cfg.num_projections):
        theta = math.radians(angle_deg)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        positions = xs * cos_t + ys * sin_t + offset
        low = np.floor(positions).astype(np.int64)
        frac = positions - low
        # interleave (low, high) per pixel so accumulation order is row-major
        indices[0::2] = low
        indices[1::2] = low + 1
        weights[0::2] = mass * (1.0 - frac)
        weights[1::2] = mass * frac
        sinogram.append(np.bincount(indices, weights=weights, minlength=bins))
    return sinogram


def normalize_radon(sinogram: Sequence[np.ndarray], source_id: str = "") -> FeatureVector:
    """Scale each projection by its own maximum, concatenate, standardize.

    Projections whose maximum is 0 are left all-zero.  The concatenated
    vector is shifted and scaled to mean 0 and population standard
    deviation 1.

    Raises:
        ParameterError: empty sinogram.
        DegenerateInputError: the concatenated vector is constant.
    """
    if len(sinogram) == 0:
        raise ParameterError("sinogram must contain at least one projection")
    scaled = []
    for projection in sinogram:
        projection = np.asarray(projection, dtype=np.float64)
        top = projection.max()
        scaled.append(projection / top if top > 0.0 else projection)
    concat = np.concatenate(scaled)
    mean = concat.mean()
    std = math.sqrt(float(np.mean((concat - mean) ** 2)))
    if std == 0.0:
        raise DegenerateInputError("concatenated sinogram is constant; cannot standardize")
    return FeatureVector(values=(concat - mean) / std, kind="radon", source_id=source_id)


def hog_features(img: GrayImage, cfg: HogConfig, source_id: str = "") -> FeatureVector:
    """Histogram-of-oriented-gradients descriptor over a square cell grid.

    Gradients come from central differences with replicated borders.
    Unsigned orientations in [0, 180) vote, weighted by gradient magnitude,
    into the two nearest orientation-bin centers (linear split, wrapping at
    180).  Each cell histogram is L2-normalized with an epsilon guard and
    the histograms are concatenated row-major.

    Raises:
        ParameterError: non-square image, or a cell side below 2 pixels.
    """
    if not img.is_square:
        raise ParameterError(f"image must be square, got {img.height}x{img.width}")
    side = img.height
    cell = side // cfg.num_histograms
    if cell < 2:
        raise ParameterError(
            f"cell side {cell} is below 2 (side {side}, {cfg.num_histograms} histograms)"
        )
    padded = np.pad(img.pixels, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    magnitude = np.hypot(gx, gy)
    orientation = np.degrees(np.arctan2(gy, gx)) % 180.0
    orientation[orientation >= 180.0] = 0.0  # modulo can round up to exactly 180

    bins = cfg.orientation_bins
    position = orientation / (180.0 / bins)
    low_bin = np.floor(position).astype(np.int64)
    frac = position - low_bin
    high_bin = (low_bin + 1) % bins

    histograms = []
    for ci in range(cfg.num_histograms):
        for cj in range(cfg.num_histograms):
            rows = slice(ci * cell, (ci + 1) * cell)
            cols = slice(cj * cell, (cj + 1) * cell)
            lo = low_bin[rows, cols].reshape(-1)
            hi = high_bin[rows, cols].reshape(-1)
            f = frac[rows, cols].reshape(-1)
            m = magnitude[rows, cols].reshape(-1)
            hist = np.bincount(lo, weights=m * (1.0 - f), minlength=bins)
            hist += np.bincount(hi, weights=m * f, minlength=bins)
            hist /= math.sqrt(float(np.sum(hist**2)) + cfg.epsilon**2)
            histograms.append(hist)
    return FeatureVector(values=np.concatenate(histograms), kind="hog", source_id=source_id)


def extract(
    img: GrayImage,
    kind: str,
    config: RadonConfig | HogConfig | RawConfig,
    source_id: str = "",
) -> FeatureVector:
    """Dispatch to the extractor for ``kind``, tagging the result.

    Raises:
        ParameterError: unknown kind, or config type not matching kind.
    """
    if kind == "radon":
        if not isinstance(config, RadonConfig):
            raise ParameterError("radon extraction requires a RadonConfig")
        if img.height != config.target_side or img.width != config.target_side:
            raise ParameterError(
                f"image side {img.height} does not match configured side {config.target_side}"
            )
        return normalize_radon(radon_transform(img, config), source_id=source_id)
    if kind == "hog":
        if not isinstance(config, HogConfig):
            raise ParameterError("hog extraction requires a HogConfig")
        return hog_features(img, config, source_id=source_id)
    if kind == "raw":
        if not isinstance(config, RawConfig):
            raise ParameterError("raw extraction requires a RawConfig")
        fv = downsample_raw(img, config.factor)
        return FeatureVector(values=fv.values, kind="raw", source_id=source_id)
    raise ParameterError(f"unknown feature kind {kind!r}; expected one of {FEATURE_KINDS}")


def feature_length(kind: str, config, target_side: int) -> int:
    """Expected descriptor length for a feature family and image side."""
    if kind == "radon":
        return config.num_projections * projection_bin_count(target_side)
    if kind == "hog":
        return config.num_histograms**2 * config.orientation_bins
    if kind == "raw":
        out_side = config.factor * target_side
        if abs(out_side - round(out_side)) > 1e-9:
            raise ParameterError(
                f"factor {config.factor} times side {target_side} is not an integer"
            )
        return int(round(out_side)) ** 2
    raise ParameterError(f"unknown feature kind {kind!r}")


def write_feature_dump(path: str | Path, features: Iterable[FeatureVector]) -> None:
    """Write features as a length-prefixed little-endian binary stream."""
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<B", DUMP_VERSION))
        for fv in features:
            ident = fv.source_id.encode("utf-8")
            payload = struct.pack("<H", len(ident)) + ident
            payload += struct.pack("<BI", _KIND_TAGS[fv.kind], len(fv))
            payload += fv.values.astype("<f4").tobytes()
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def read_feature_dump(path: str | Path) -> list[FeatureVector]:
    """Read a feature dump written by :func:`write_feature_dump`.

    Raises:
        FormatError: bad magic or version.
        OSError: truncated stream.
    """
    data = Path(path).read_bytes()
    if data[: len(DUMP_MAGIC)] != DUMP_MAGIC:
        raise FormatError("not a feature dump: bad magic")
    pos = len(DUMP_MAGIC)
    if pos >= len(data):
        raise OSError("truncated feature dump: missing version byte")
    version = data[pos]
    pos += 1
    if version != DUMP_VERSION:
        raise FormatError(f"unsupported feature dump version {version}")
    features = []
    while pos < len(data):
        if pos + 4 > len(data):
            raise OSError("truncated feature dump: incomplete record length")
        (rec_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + rec_len > len(data):
            raise OSError("truncated feature dump: incomplete record")
        record = data[pos : pos + rec_len]
        pos += rec_len
        (id_len,) = struct.unpack_from("<H", record, 0)
        ident = record[2 : 2 + id_len].decode("utf-8")
        tag, count = struct.unpack_from("<BI", record, 2 + id_len)
        if tag not in _TAG_KINDS:
            raise FormatError(f"unknown feature kind tag {tag}")
        values = np.frombuffer(
            record, dtype="<f4", count=count, offset=2 + id_len + 5
        ).astype(np.float64)
        features.append(FeatureVector(values=values, kind=_TAG_KINDS[tag], source_id=ident))
    return features
