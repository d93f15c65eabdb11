"""Domain value types and bit-exact image / annotation / density I/O.

All raster types wrap read-only numpy arrays so instances can be shared
freely across threads.  File formats:

* images: binary PGM (magic ``P5``, ASCII width/height, maxval 255),
* annotations: JSON object with a ``points`` list of ``[x, y]`` pairs,
* density maps: ``RADM`` header + row-major little-endian float32 payload.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DENSITY_MAGIC = b"RADM"
DENSITY_VERSION = 1


class FormatError(ValueError):
    """A file does not conform to its declared on-disk format."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GrayImage:
    """Single-channel raster with pixel values in [0, 1]."""

    pixels: np.ndarray  # 2D float64, row-major

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2D grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite pixels")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(
                f"pixel values must lie in [0, 1], got range "
                f"[{px.min():.6g}, {px.max():.6g}]"
            )
        object.__setattr__(self, "pixels", _readonly(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PointAnnotations:
    """Head-point ground truth: continuous (x=column, y=row) coordinates.

    Coordinates are referenced to pixel centers, origin at the top-left
    pixel.  The list may be empty (background-only scene).
    """

    points: np.ndarray  # shape (N, 2), columns (x, y); float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (N, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("annotation coordinates must be finite")
        object.__setattr__(self, "points", _readonly(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    def inside(self, height: int, width: int) -> bool:
        """True when every point lies within [0, width) x [0, height)."""
        if len(self) == 0:
            return True
        x, y = self.points[:, 0], self.points[:, 1]
        return bool(
            (x >= 0).all() and (x < width).all() and (y >= 0).all() and (y < height).all()
        )


@dataclass(frozen=True)
class PriorityMap:
    """Image-sized [0, 1] field marking candidate crowd regions."""

    values: np.ndarray  # 2D float64

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"priority map must be a non-empty 2D grid, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("priority map contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("priority values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DensityMap:
    """Non-negative per-pixel density; the grid sum is the predicted count.

    Values live as float64 in memory; the RADM file format quantizes to
    float32, and loading gives those float32 values back exactly.
    """

    values: np.ndarray  # 2D float64

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"density map must be a non-empty 2D grid, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density map contains non-finite values")
        if v.min() < 0.0:
            raise ValueError(f"density values must be >= 0, min is {v.min():.6g}")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def count(self) -> float:
        """Predicted person count: the sum of all cells (float64 accumulation)."""
        return float(self.values.sum(dtype=np.float64))


@dataclass(frozen=True)
class Scene:
    """One sample: an image, its head annotations, optional reference density."""

    image: GrayImage
    annotations: PointAnnotations
    density: DensityMap | None = field(default=None)

    def __post_init__(self):
        if not self.annotations.inside(self.image.height, self.image.width):
            raise ValueError("annotation coordinates fall outside the image bounds")
        if self.density is not None and (
            self.density.height != self.image.height
            or self.density.width != self.image.width
        ):
            raise ValueError("reference density shape differs from the image shape")


# ---------------------------------------------------------------------------
# PGM image I/O
# ---------------------------------------------------------------------------


def _pgm_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    pos = 0
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            start = pos
            while pos < n and data[pos : pos + 1] not in b" \t\r\n":
                pos += 1
            yield data[start:pos].decode("ascii", errors="replace"), pos
            pos += 1  # consume the single whitespace after the token


def load_image(path) -> GrayImage:
    """Read a binary PGM file into a GrayImage (byte b maps to b / 255)."""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = _pgm_tokens(data)
    try:
        magic, _ = next(tokens)
    except StopIteration:
        raise FormatError(f"{path}: empty file, missing PGM magic") from None
    if magic != "P5":
        raise FormatError(f"{path}: bad magic {magic!r}, expected 'P5'")

    fields = []
    end = 0
    for name in ("width", "height", "maxval"):
        try:
            tok, end = next(tokens)
        except StopIteration:
            raise FormatError(f"{path}: truncated header, missing {name}") from None
        if not tok.isdigit():
            raise FormatError(f"{path}: non-numeric {name} field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"{path}: degenerate size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")

    payload = data[end + 1 :]
    expected = width * height
    if len(payload) < expected:
        raise FormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}"
        )
    raster = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(height, width)
    return GrayImage(raster.astype(np.float64) / 255.0)


def save_image(img: GrayImage, path) -> None:
    """Write a GrayImage as binary PGM; values are quantized by round(p * 255)."""
    raster = np.rint(img.pixels * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raster.tobytes(order="C"))


def quantize_image(img: GrayImage) -> GrayImage:
    """The image as it will read back after a save/load round trip."""
    return GrayImage(np.rint(img.pixels * 255.0) / 255.0)


# ---------------------------------------------------------------------------
# Annotation I/O
# ---------------------------------------------------------------------------


def load_annotations(path) -> PointAnnotations:
    """Read a JSON annotation file: object with a 'points' list of [x, y] pairs."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "points" not in doc:
        raise FormatError(f"{path}: missing top-level 'points' key")
    raw = doc["points"]
    if not isinstance(raw, list):
        raise FormatError(f"{path}: 'points' must be a list")
    pts = []
    for i, entry in enumerate(raw):
        if (
            not isinstance(entry, (list, tuple))
            or len(entry) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry)
        ):
            raise FormatError(f"{path}: points[{i}] is not a numeric [x, y] pair")
        x, y = float(entry[0]), float(entry[1])
        if not (math.isfinite(x) and math.isfinite(y)):
            raise FormatError(f"{path}: points[{i}] has a non-finite coordinate")
        if x < 0 or y < 0:
            raise FormatError(f"{path}: points[{i}] has a negative coordinate")
        pts.append((x, y))
    return PointAnnotations(np.array(pts, dtype=np.float64).reshape(len(pts), 2))


def save_annotations(ann: PointAnnotations, path) -> None:
    """Write annotations as the JSON format load_annotations reads."""
    doc = {"points": [[float(x), float(y)] for x, y in ann.points]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Reference density rasterization
# ---------------------------------------------------------------------------


def rasterize_density(
    ann: PointAnnotations, height: int, width: int, sigma: float
) -> DensityMap:
    """Sum of per-point isotropic Gaussians, each renormalized to unit mass.

    Renormalization over the raster (rather than the analytic 2D integral)
    keeps near-border heads contributing exactly one person to the total.
    Used for visualization and reference targets only; the training loss
    consumes the points directly.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    acc = np.zeros((height, width), dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    inv = 1.0 / (2.0 * sigma * sigma)
    for x, y in ann.points:
        g = np.exp(-((ys - y) ** 2 + (xs - x) ** 2) * inv)
        total = g.sum()
        if total > 0:
            acc += g / total
    return DensityMap(acc)


# ---------------------------------------------------------------------------
# RADM density-map I/O
# ---------------------------------------------------------------------------


def save_density(dmap: DensityMap, path) -> None:
    """Write a density map in the RADM binary format (bit-exact round trip)."""
    header = DENSITY_MAGIC + np.array(
        [DENSITY_VERSION, dmap.height, dmap.width], dtype="<u4"
    ).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dmap.values.astype("<f4").tobytes(order="C"))


def load_density(path) -> DensityMap:
    """Read a RADM density-map file written by save_density."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise FormatError(f"{path}: file shorter than the 16-byte RADM header")
    if data[:4] != DENSITY_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {DENSITY_MAGIC!r}")
    version, height, width = np.frombuffer(data[4:16], dtype="<u4")
    if version != DENSITY_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = int(height) * int(width) * 4
    payload = data[16:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes but {height}x{width} "
            f"needs {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(int(height), int(width))
    return DensityMap(values.astype(np.float64))
