"""Write a synthetic labelled scene as a cube header and a label header.

    python scripts/make_synthetic.py data/synthetic

writes data/synthetic.hdr/.raw and data/synthetic_gt.hdr/.raw.  The defaults
match the desk-scale scene used by the acceptance suite and configs/synthetic.ini.
"""
import argparse
from pathlib import Path

from jigsawhsi import hsi_io


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("prefix", help="output prefix, e.g. data/synthetic")
    ap.add_argument("--height", type=int, default=64)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--bands", type=int, default=32)
    ap.add_argument("--classes", type=int, default=6)
    ap.add_argument("--blobs", type=int, default=18)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    cube, labels = hsi_io.generate_synthetic_scene(args.height, args.width, args.bands, args.classes,
                                                   args.blobs, args.noise, seed=args.seed)
    prefix = Path(args.prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    hsi_io.write_cube(cube, prefix.with_name(prefix.name + ".hdr"))
    hsi_io.write_labels(labels, prefix.with_name(prefix.name + "_gt.hdr"))
    counts = labels.class_counts()
    print(f"{cube.height}x{cube.width}x{cube.bands}, {labels.num_classes} classes, counts {counts}")


if __name__ == "__main__":
    main()
