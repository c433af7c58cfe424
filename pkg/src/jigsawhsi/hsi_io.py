"""Raster I/O: cubes, label rasters and class maps on disk, plus synthetic scenes.

Every raster is a small text header of ``key=value`` lines next to a raw
little-endian band-sequential payload::

    # jigsawhsi raster
    height=145
    width=145
    bands=200
    dtype=float32
    interleave=bsq
    byteorder=le
    data_file=indian_pines.raw

``data_file`` is relative to the header.  When it is absent the payload is
looked up at the header path with its suffix replaced by ``.raw``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

_MODULE = "hsi-io"

DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint16": np.dtype("<u2"),
}


@dataclass
class HSICube:
    """H x W x B raster, stored in memory as an ``(H, W, B)`` array."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or 0 in self.data.shape:
            raise ValidationError(f"cube must be a non-empty H x W x B array, got shape {self.data.shape}", _MODULE)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def pixels(self) -> np.ndarray:
        """(H*W) x B pixel matrix, row-major pixel order."""
        return self.data.reshape(-1, self.bands)


@dataclass
class LabelRaster:
    """H x W class map of ground truth; 0 marks unlabeled pixels."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or 0 in labels.shape:
            raise ValidationError(f"label raster must be a non-empty 2-D array, got shape {labels.shape}", _MODULE)
        if labels.dtype.kind not in "iu":
            raise ValidationError(f"labels must be integers, got {labels.dtype}", _MODULE)
        if labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max:
            raise ValidationError("labels must fit in uint16", _MODULE)
        self.labels = labels.astype(np.uint16, copy=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    @property
    def num_classes(self) -> int:
        # The largest label, so every label indexes into [0, K].
        return int(self.labels.max())

    def class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels[self.labels > 0], return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


@dataclass
class ClassMap:
    """Predicted labels for a scene; ``num_classes`` fixes the graymap scaling."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ValidationError("class map is empty", _MODULE)
        if self.num_classes < 1:
            raise ValidationError("class map needs num_classes >= 1", _MODULE)
        if labels.min() < 0 or labels.max() > self.num_classes:
            raise ValidationError(f"class map values must lie in [0, {self.num_classes}]", _MODULE)
        self.labels = labels.astype(np.uint16, copy=False)

    @property
    def shape(self):
        return self.labels.shape


# ---------------------------------------------------------------- headers

def write_header(path, fields: dict, comment: str | None = None) -> None:
    lines = [f"# {comment}"] if comment else []
    for key, value in fields.items():
        text = str(value)
        if "\n" in text:
            raise ValidationError(f"header value for {key!r} contains a newline", _MODULE)
        lines.append(f"{key}={text}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write header {path}: {exc.strerror or exc}", _MODULE) from exc


def read_header(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, keys are lowercased."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"header file not found: {path}")
    fields = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {raw!r}", _MODULE)
        key, value = line.split("=", 1)
        fields[key.strip().lower()] = value.strip()
    return fields


def payload_path(header_path) -> Path:
    header_path = Path(header_path)
    if header_path.suffix == ".raw":
        return header_path.with_name(header_path.name + ".raw")
    return header_path.with_suffix(".raw")


def _header_int(fields, key, path) -> int:
    try:
        value = int(fields[key])
    except KeyError:
        raise FormatError(f"{path}: header lacks {key!r}", _MODULE) from None
    except ValueError:
        raise FormatError(f"{path}: {key}={fields[key]!r} is not an integer", _MODULE) from None
    if value <= 0:
        raise FormatError(f"{path}: {key} must be positive, got {value}", _MODULE)
    return value


def _read_raster(header_path, expected_dtype: str) -> np.ndarray:
    """Read a BSQ payload into an (H, W, B) array of the payload's dtype."""
    header_path = Path(header_path)
    fields = read_header(header_path)
    h = _header_int(fields, "height", header_path)
    w = _header_int(fields, "width", header_path)
    b = _header_int(fields, "bands", header_path) if "bands" in fields else 1
    dtype_name = fields.get("dtype", "").lower()
    if dtype_name != expected_dtype:
        raise FormatError(f"{header_path}: expected dtype={expected_dtype}, header says {dtype_name or '<missing>'}", _MODULE)
    if fields.get("interleave", "bsq").lower() != "bsq":
        raise FormatError(f"{header_path}: only interleave=bsq is supported", _MODULE)
    if fields.get("byteorder", "le").lower() != "le":
        raise FormatError(f"{header_path}: only byteorder=le is supported", _MODULE)

    data_path = header_path.parent / fields["data_file"] if "data_file" in fields else payload_path(header_path)
    if not data_path.is_file():
        raise FileNotFoundError(f"data file not found: {data_path}")
    dtype = DTYPES[expected_dtype]
    expected_bytes = h * w * b * dtype.itemsize
    actual_bytes = data_path.stat().st_size
    if actual_bytes != expected_bytes:
        raise FormatError(
            f"{data_path}: header declares {h}x{w}x{b} {expected_dtype} ({expected_bytes} bytes) "
            f"but file holds {actual_bytes} bytes",
            _MODULE,
        )
    flat = np.fromfile(data_path, dtype=dtype)
    # BSQ: band-major, then rows, then columns.
    return np.ascontiguousarray(flat.reshape(b, h, w).transpose(1, 2, 0))


def _write_raster(array: np.ndarray, header_path, dtype_name: str, extra: dict | None = None) -> None:
    header_path = Path(header_path)
    data_path = payload_path(header_path)
    h, w, b = array.shape
    fields = {
        "height": h,
        "width": w,
        "bands": b,
        "dtype": dtype_name,
        "interleave": "bsq",
        "byteorder": "le",
        "data_file": data_path.name,
    }
    if extra:
        fields.update(extra)
    bsq = np.ascontiguousarray(array.transpose(2, 0, 1), dtype=DTYPES[dtype_name])
    try:
        bsq.tofile(data_path)
    except OSError as exc:
        raise FormatError(f"cannot write {data_path}: {exc.strerror or exc}", _MODULE) from exc
    write_header(header_path, fields, comment="jigsawhsi raster")


# ---------------------------------------------------------------- public I/O

def read_cube(header_path) -> HSICube:
    data = _read_raster(header_path, "float32")
    if not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise FormatError(f"{header_path}: cube contains {bad} non-finite values", _MODULE)
    return HSICube(data)


def write_cube(cube: HSICube, header_path) -> None:
    _write_raster(cube.data, header_path, "float32")


def read_labels(header_path) -> LabelRaster:
    data = _read_raster(header_path, "uint16")
    if data.shape[2] != 1:
        raise FormatError(f"{header_path}: label raster must have bands=1, got {data.shape[2]}", _MODULE)
    return LabelRaster(data[:, :, 0])


def write_labels(raster: LabelRaster, header_path) -> None:
    _write_raster(raster.labels[:, :, None], header_path, "uint16")


def read_class_map(header_path) -> ClassMap:
    fields = read_header(header_path)
    data = _read_raster(header_path, "uint16")
    if "num_classes" not in fields:
        raise FormatError(f"{header_path}: class map header lacks num_classes", _MODULE)
    return ClassMap(data[:, :, 0], int(fields["num_classes"]))


def graymap_levels(cmap: ClassMap) -> np.ndarray:
    return np.rint(cmap.labels.astype(np.float64) * 255.0 / cmap.num_classes).astype(np.uint8)


def write_class_map(cmap: ClassMap, header_path) -> Path:
    """Write the uint16 raster and an ASCII P2 graymap beside it; return the graymap path."""
    if cmap.labels.size == 0:
        raise ValidationError("refusing to write an empty class map", _MODULE)
    header_path = Path(header_path)
    _write_raster(cmap.labels[:, :, None], header_path, "uint16", {"num_classes": cmap.num_classes})

    gray = graymap_levels(cmap)
    h, w = gray.shape
    lines = ["P2", f"# jigsawhsi class map, {cmap.num_classes} classes", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in gray)
    pgm_path = header_path.with_suffix(".pgm")
    pgm_path.write_text("\n".join(lines) + "\n")
    return pgm_path


def read_pgm(path) -> np.ndarray:
    """Minimal ASCII P2 reader, used to inspect the graymaps we write."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise FormatError(f"{path}: not an ASCII P2 graymap", _MODULE)
    w, h, _maxval = (int(t) for t in tokens[1:4])
    values = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if values.size != w * h:
        raise FormatError(f"{path}: expected {w * h} samples, found {values.size}", _MODULE)
    return values.reshape(h, w)


# ---------------------------------------------------------------- synthetic scenes

def class_spectra(bands: int, num_classes: int, smoothing: float | None = None) -> np.ndarray:
    """Per-class mean spectra: smoothed unit bumps at evenly spaced band positions.

    Returns a (K, B) array with unit-norm rows.
    """
    if smoothing is None:
        smoothing = max(bands / (4.0 * num_classes), 0.5)
    grid = np.arange(bands, dtype=np.float64)
    centers = (np.arange(num_classes) + 0.5) * bands / num_classes
    spectra = np.exp(-0.5 * ((grid[None, :] - centers[:, None]) / smoothing) ** 2)
    return spectra / np.linalg.norm(spectra, axis=1, keepdims=True)


def generate_synthetic_scene(
    height: int,
    width: int,
    bands: int,
    num_classes: int,
    blob_count: int,
    noise_sigma: float,
    seed: int,
    coverage: float = 0.6,
    max_attempts: int = 50,
) -> tuple[HSICube, LabelRaster]:
    """Build a labeled toy scene of disk-shaped class blobs over an unlabeled background.

    Blob ``i`` gets class ``i % K + 1``; blobs never overwrite earlier blobs.  A class
    spectrum is ``0.2 + bump_k`` (see :func:`class_spectra`), the background uses a
    flat spectrum, and Gaussian noise of std ``noise_sigma`` is added everywhere.
    """
    if num_classes < 2:
        raise ValidationError("synthetic scene needs at least 2 classes", _MODULE)
    if bands < num_classes:
        raise ValidationError(f"need bands >= classes, got B={bands}, K={num_classes}", _MODULE)
    if blob_count < num_classes:
        raise ValidationError(f"blob_count={blob_count} cannot cover {num_classes} classes", _MODULE)
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be >= 0", _MODULE)
    min_pixels = int(np.ceil(0.01 * height * width))
    if num_classes * min_pixels >= height * width:
        raise ValidationError(f"{height}x{width} scene too small for {num_classes} classes at 1% each", _MODULE)

    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:height, 0:width]
    mean_radius = np.sqrt(coverage * height * width / (np.pi * blob_count))
    for _ in range(max_attempts):
        labels = np.zeros((height, width), dtype=np.uint16)
        for i in range(blob_count):
            r0 = rng.uniform(0, height)
            c0 = rng.uniform(0, width)
            radius = mean_radius * rng.uniform(0.6, 1.3)
            disk = (rows - r0) ** 2 + (cols - c0) ** 2 <= radius**2
            labels[disk & (labels == 0)] = i % num_classes + 1
        counts = np.bincount(labels.ravel(), minlength=num_classes + 1)
        if counts[1:].min() >= min_pixels and counts[0] > 0:
            break
    else:
        raise ValidationError(
            f"could not pack {blob_count} blobs for {num_classes} classes into {height}x{width} "
            f"with >=1% of pixels per class after {max_attempts} attempts",
            _MODULE,
        )

    spectra = np.vstack([np.full(bands, 1.0 / np.sqrt(bands)), class_spectra(bands, num_classes)])
    spectra += 0.2
    data = spectra[labels]
    if noise_sigma > 0:
        data = data + rng.normal(0.0, noise_sigma, size=data.shape)
    return HSICube(data.astype(np.float32)), LabelRaster(labels)
