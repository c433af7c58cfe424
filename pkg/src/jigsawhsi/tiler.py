"""Cut S x S x c tiles around labeled pixels and split them into train/test sets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ValidationError
from .hsi_io import HSICube, LabelRaster

_MODULE = "tiler"


class Tile(NamedTuple):
    data: np.ndarray
    center_row: int
    center_col: int
    label: int


@dataclass(frozen=True)
class TileSet:
    """Tiles stored as one (N, S, S, c) array plus per-tile coordinates and labels."""

    data: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = len(self.labels)
        if self.data.ndim != 4 or self.data.shape[0] != n or self.data.shape[1] != self.data.shape[2]:
            raise ValidationError(f"tile array must be (N, S, S, c) with N={n}, got {self.data.shape}", _MODULE)
        if len(self.rows) != n or len(self.cols) != n:
            raise ValidationError("rows/cols/labels lengths differ", _MODULE)
        if n and (self.labels.min() < 1 or self.labels.max() > self.num_classes):
            raise ValidationError(f"tile labels must lie in [1, {self.num_classes}]", _MODULE)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> Tile:
        return Tile(self.data[i], int(self.rows[i]), int(self.cols[i]), int(self.labels[i]))

    def __iter__(self) -> Iterator[Tile]:
        return (self[i] for i in range(len(self)))

    @property
    def window(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def class_counts(self) -> dict[int, int]:
        counts = np.bincount(self.labels, minlength=self.num_classes + 1)
        return {k: int(counts[k]) for k in range(1, self.num_classes + 1)}

    def subset(self, index) -> "TileSet":
        index = np.asarray(index, dtype=np.int64)
        return TileSet(self.data[index], self.rows[index], self.cols[index], self.labels[index], self.num_classes)


def _check_window(window: int) -> None:
    if not isinstance(window, (int, np.integer)) or window < 1 or window % 2 == 0:
        raise ValidationError(f"window size must be a positive odd integer, got {window!r}", _MODULE)


def pad_cube(data: np.ndarray, window: int) -> np.ndarray:
    m = window // 2
    return np.pad(data, ((m, m), (m, m), (0, 0)))


def extract_tiles(data: np.ndarray, rows, cols, window: int, padded: np.ndarray | None = None) -> np.ndarray:
    """Zero-padded windows of ``data`` (H, W, c) centred on each (row, col)."""
    _check_window(window)
    if padded is None:
        padded = pad_cube(data, window)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    offsets = np.arange(window)
    # Centre (r, c) sits at (r + m, c + m) in the padded cube, so its window starts at (r, c).
    ri = rows[:, None, None] + offsets[None, :, None]
    ci = cols[:, None, None] + offsets[None, None, :]
    return padded[ri, ci]


def build_dataset(cube: HSICube, labels: LabelRaster, window: int, num_classes: int | None = None) -> TileSet:
    """One tile per labeled pixel, in row-major scan order."""
    _check_window(window)
    if cube.data.shape[:2] != labels.shape:
        raise ValidationError(f"cube is {cube.height}x{cube.width} but labels are {labels.height}x{labels.width}", _MODULE)
    rows, cols = np.nonzero(labels.labels)
    if rows.size == 0:
        raise ValidationError("label raster has no labeled pixels", _MODULE)
    k = labels.num_classes if num_classes is None else num_classes
    data = extract_tiles(cube.data, rows, cols, window)
    return TileSet(data, rows, cols, labels.labels[rows, cols].astype(np.int64), k)


def split_indices(labels, train_frac: float, seed: int, num_classes: int | None = None, stratified: bool = True):
    """Return sorted (train, test) index arrays.

    Stratified: each class sends ceil(train_frac * n_k) of its members, drawn
    uniformly under ``seed``, to the training side.  Otherwise the same rule is
    applied once to the whole set.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValidationError(f"train_frac must lie strictly between 0 and 1, got {train_frac}", _MODULE)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    if not stratified:
        n_train = int(np.ceil(train_frac * len(labels)))
        perm = rng.permutation(len(labels))
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])

    k = int(labels.max()) if num_classes is None else num_classes
    train, test = [], []
    for cls in range(1, k + 1):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            raise ValidationError(f"class {cls} has no tiles to split", _MODULE)
        n_train = int(np.ceil(train_frac * members.size))
        perm = rng.permutation(members)
        train.append(perm[:n_train])
        test.append(perm[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(ts: TileSet, train_frac: float, seed: int, stratified: bool = True) -> tuple[TileSet, TileSet]:
    train, test = split_indices(ts.labels, train_frac, seed, ts.num_classes, stratified)
    return ts.subset(train), ts.subset(test)


def one_hot(labels, num_classes: int, dtype=np.float32) -> np.ndarray:
    """Row per label with a 1 at column ``label - 1``; works on a scalar or an array."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise ValidationError(f"labels must lie in [1, {num_classes}] for one-hot encoding", _MODULE)
    return np.eye(num_classes, dtype=dtype)[labels - 1]


def epoch_order(n: int, shuffle_seed: int | None, epoch: int) -> np.ndarray:
    if shuffle_seed is None:
        return np.arange(n)
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def batch_iter(ts: TileSet, batch_size: int, shuffle_seed: int | None = None, epoch: int = 0, dtype=np.float32):
    """Yield (tiles, one_hot_targets) batches; the order is reshuffled per (seed, epoch)."""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}", _MODULE)
    order = epoch_order(len(ts), shuffle_seed, epoch)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield ts.data[idx].astype(dtype, copy=False), one_hot(ts.labels[idx], ts.num_classes, dtype)
