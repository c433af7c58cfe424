"""Convert a MATLAB benchmark cube (and its ground truth) to the header + raw format.

    python scripts/convert_mat.py Indian_pines_corrected.mat Indian_pines_gt.mat data/indian_pines

writes data/indian_pines.hdr and data/indian_pines_gt.hdr.  The variable holding
the array is found automatically (the only 3-D array, the only 2-D array); pass
--cube-key / --gt-key when a file holds several.  Needs scipy.
"""
import argparse
from pathlib import Path

import numpy as np

from jigsawhsi import hsi_io


def _pick(path, ndim, key=None):
    from scipy.io import loadmat

    mat = {k: v for k, v in loadmat(path).items() if not k.startswith("__")}
    if key is not None:
        if key not in mat:
            raise SystemExit(f"{path}: no variable {key!r}; found {sorted(mat)}")
        return mat[key]
    found = [k for k, v in mat.items() if isinstance(v, np.ndarray) and v.ndim == ndim]
    if len(found) != 1:
        raise SystemExit(f"{path}: expected one {ndim}-D array, found {found}; pass the key explicitly")
    return mat[found[0]]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("cube_mat")
    ap.add_argument("gt_mat")
    ap.add_argument("prefix", help="output prefix, e.g. data/indian_pines")
    ap.add_argument("--cube-key")
    ap.add_argument("--gt-key")
    args = ap.parse_args(argv)

    cube = hsi_io.HSICube(_pick(args.cube_mat, 3, args.cube_key).astype(np.float32))
    gt = _pick(args.gt_mat, 2, args.gt_key)
    if gt.min() < 0 or gt.max() > np.iinfo(np.uint16).max:
        raise SystemExit("ground truth values must fit in uint16")
    labels = hsi_io.LabelRaster(gt.astype(np.uint16))
    if labels.shape != cube.data.shape[:2]:
        raise SystemExit(f"cube is {cube.data.shape[:2]}, ground truth is {labels.shape}")

    prefix = Path(args.prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    hsi_io.write_cube(cube, prefix.with_name(prefix.name + ".hdr"))
    hsi_io.write_labels(labels, prefix.with_name(prefix.name + "_gt.hdr"))
    print(f"{cube.height}x{cube.width}x{cube.bands}, {labels.num_classes} classes, "
          f"{int(np.count_nonzero(gt))} labelled pixels")


if __name__ == "__main__":
    main()
