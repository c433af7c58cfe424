import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jigsawhsi import hsi_io
from jigsawhsi.errors import FormatError, ValidationError


def _write_raw_cube(tmp_path, values, h, w, b):
    hdr = tmp_path / "c.hdr"
    hdr.write_text(f"height={h}\nwidth={w}\nbands={b}\ndtype=float32\ninterleave=bsq\nbyteorder=le\n")
    np.asarray(values, dtype="<f4").tofile(tmp_path / "c.raw")
    return hdr


def test_smallest_cube_row_major(tmp_path):
    cube = hsi_io.read_cube(_write_raw_cube(tmp_path, [1, 2, 3, 4], 2, 2, 1))
    assert cube.shape == (2, 2, 1)
    assert cube.data[1, 1, 0] == 4
    assert cube.data[0, 1, 0] == 2


def test_bsq_band_order(tmp_path):
    # band 0 = 0..3, band 1 = 10..13
    cube = hsi_io.read_cube(_write_raw_cube(tmp_path, [0, 1, 2, 3, 10, 11, 12, 13], 2, 2, 2))
    assert cube.data[1, 0].tolist() == [2, 12]


def test_size_mismatch(tmp_path):
    hdr = _write_raw_cube(tmp_path, [1, 2, 3, 4], 2, 2, 2)  # 8 floats declared, 16 bytes present
    with pytest.raises(FormatError, match="32 bytes"):
        hsi_io.read_cube(hdr)


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        hsi_io.read_cube(tmp_path / "nope.hdr")
    hdr = _write_raw_cube(tmp_path, [1, 2, 3, 4], 2, 2, 1)
    (tmp_path / "c.raw").unlink()
    with pytest.raises(FileNotFoundError):
        hsi_io.read_cube(hdr)


def test_non_finite_rejected(tmp_path):
    with pytest.raises(FormatError, match="non-finite"):
        hsi_io.read_cube(_write_raw_cube(tmp_path, [1, np.nan, 3, np.inf], 2, 2, 1))


def test_header_comments_and_case(tmp_path):
    hdr = tmp_path / "c.hdr"
    hdr.write_text("# a cube\nHEIGHT = 1\nwidth=2 # trailing\nbands=1\ndtype=float32\n")
    np.array([5, 6], dtype="<f4").tofile(tmp_path / "c.raw")
    assert hsi_io.read_cube(hdr).data.ravel().tolist() == [5, 6]


def test_wrong_dtype_rejected(tmp_path):
    hdr = tmp_path / "c.hdr"
    hdr.write_text("height=1\nwidth=2\nbands=1\ndtype=uint16\n")
    np.array([5, 6], dtype="<u2").tofile(tmp_path / "c.raw")
    with pytest.raises(FormatError, match="dtype"):
        hsi_io.read_cube(hdr)


def test_unwritable_path(tmp_path):
    cube = hsi_io.HSICube(np.zeros((2, 2, 1), np.float32))
    with pytest.raises(FormatError):
        hsi_io.write_cube(cube, tmp_path / "missing_dir" / "c.hdr")


finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4)), elements=finite32))
def test_cube_round_trip_bit_exact(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("cube") / "x.hdr"
    hsi_io.write_cube(hsi_io.HSICube(data), path)
    back = hsi_io.read_cube(path).data
    assert back.dtype == np.float32
    assert back.tobytes() == np.ascontiguousarray(data).tobytes()


def test_labels_small_example(tmp_path):
    raster = hsi_io.LabelRaster(np.array([[0, 1], [1, 2]]))
    assert raster.num_classes == 2
    assert int(np.sum(raster.labels == 0)) == 1
    hsi_io.write_labels(raster, tmp_path / "l.hdr")
    assert np.array_equal(hsi_io.read_labels(tmp_path / "l.hdr").labels, raster.labels)


def test_all_zero_labels_have_no_classes():
    assert hsi_io.LabelRaster(np.zeros((3, 3), int)).num_classes == 0


def test_labels_shape_mismatch(tmp_path):
    raster = hsi_io.LabelRaster(np.array([[0, 1], [1, 2]]))
    hsi_io.write_labels(raster, tmp_path / "l.hdr")
    hdr = tmp_path / "l.hdr"
    hdr.write_text(hdr.read_text().replace("height=2", "height=3"))
    with pytest.raises(FormatError):
        hsi_io.read_labels(hdr)


@given(arrays(np.uint16, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_labels_round_trip(tmp_path_factory, labels):
    path = tmp_path_factory.mktemp("lab") / "l.hdr"
    hsi_io.write_labels(hsi_io.LabelRaster(labels), path)
    assert hsi_io.read_labels(path).labels.tobytes() == labels.tobytes()


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_class_map_round_trip(tmp_path_factory, h, w, k, seed):
    labels = np.random.default_rng(seed).integers(0, k + 1, size=(h, w))
    cmap = hsi_io.ClassMap(labels, k)
    path = tmp_path_factory.mktemp("map") / "m.hdr"
    pgm = hsi_io.write_class_map(cmap, path)
    back = hsi_io.read_class_map(path)
    assert back.num_classes == k
    assert np.array_equal(back.labels, cmap.labels)
    gray = hsi_io.read_pgm(pgm)
    assert gray.shape == (h, w)
    assert gray.min() >= 0 and gray.max() <= 255


def test_graymap_single_class_two_levels(tmp_path):
    cmap = hsi_io.ClassMap(np.array([[0, 1, 1], [1, 0, 1]]), 1)
    gray = hsi_io.read_pgm(hsi_io.write_class_map(cmap, tmp_path / "m.hdr"))
    assert sorted(np.unique(gray).tolist()) == [0, 255]
    assert (tmp_path / "m.pgm").read_text().startswith("P2\n")


def test_empty_class_map_rejected():
    with pytest.raises(ValidationError):
        hsi_io.ClassMap(np.zeros((0, 0), int), 2)


# ---------------------------------------------------------------- synthetic scenes

def test_synthetic_deterministic():
    a = hsi_io.generate_synthetic_scene(64, 64, 32, 6, 12, 0.05, seed=7)
    b = hsi_io.generate_synthetic_scene(64, 64, 32, 6, 12, 0.05, seed=7)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert np.array_equal(a[1].labels, b[1].labels)


def test_synthetic_properties():
    cube, labels = hsi_io.generate_synthetic_scene(64, 64, 32, 6, 12, 0.05, seed=7)
    counts = np.bincount(labels.labels.ravel(), minlength=7)
    assert labels.num_classes == 6
    assert counts[0] > 0
    assert counts[1:].min() >= 0.01 * 64 * 64
    means = np.array([cube.data[labels.labels == k].mean(axis=0) for k in range(1, 7)])
    dist = np.linalg.norm(means[:, None] - means[None], axis=2)
    assert dist[~np.eye(6, dtype=bool)].min() > 10 * 0.05


def test_synthetic_noise_free_classes_constant():
    cube, labels = hsi_io.generate_synthetic_scene(32, 32, 8, 4, 8, 0.0, seed=1)
    for k in range(1, 5):
        px = cube.data[labels.labels == k]
        assert np.all(px == px[0])


def test_synthetic_nearest_centroid_oracle_is_perfect():
    cube, labels = hsi_io.generate_synthetic_scene(32, 32, 8, 4, 8, 0.0, seed=1)
    mask = labels.labels > 0
    px = cube.data[mask].astype(np.float64)
    truth = labels.labels[mask].astype(int)
    centroids = np.array([px[truth == k].mean(axis=0) for k in range(1, 5)])
    # brute force: distance of every pixel to every centroid
    pred = np.array([1 + min(range(4), key=lambda k: np.sum((p - centroids[k]) ** 2)) for p in px])
    assert np.array_equal(pred, truth)


@pytest.mark.parametrize("args", [
    (16, 16, 8, 1, 4, 0.1),   # K < 2
    (16, 16, 3, 4, 4, 0.1),   # B < K
    (16, 16, 8, 4, 2, 0.1),   # fewer blobs than classes
    (3, 3, 10, 9, 9, 0.1),    # too small to give every class 1% and leave background
])
def test_synthetic_infeasible(args):
    with pytest.raises(ValidationError):
        hsi_io.generate_synthetic_scene(*args, seed=0)
