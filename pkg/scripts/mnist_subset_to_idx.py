"""Convert a CSV digit table (784 pixels then label per row) into MNIST IDX files.

Used to build a small real-digit proxy when the full MNIST files are not at hand:

    python scripts/mnist_subset_to_idx.py mnist_5k.csv.gz /root/data/mnist5k --test 1000
"""
import argparse
import gzip
from pathlib import Path

import numpy as np

from sepconc.data import MNIST_FILES, write_idx
from sepconc.fisher import LabeledBatch
from sepconc.data import stratified_subset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("out")
    ap.add_argument("--test", type=int, default=1000, help="stratified test-split size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    opener = gzip.open if args.csv.endswith(".gz") else open
    with opener(args.csv, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    images = table[:, :784].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, 784].astype(np.uint8)
    full = LabeledBatch(np.arange(len(labels)), labels.astype(np.int64), 10)
    test_idx = stratified_subset(full, args.test, args.seed).samples
    train_mask = np.ones(len(labels), bool)
    train_mask[test_idx] = False
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, mask in (("train", train_mask), ("test", ~train_mask)):
        img_name, lab_name = MNIST_FILES[split]
        write_idx(out / img_name, images[mask])
        write_idx(out / lab_name, labels[mask])
        print(f"{split}: {mask.sum()} images -> {out}")


if __name__ == "__main__":
    main()
