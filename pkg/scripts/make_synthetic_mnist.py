#!/usr/bin/env python3
"""Generate the deterministic synthetic digit corpus in MNIST's IDX layout.

Useful when the real MNIST files are not available locally; the loaders and
the CLI consume the generated directory exactly like the canonical files.
"""

import argparse
import time

from cimsim.data import write_synthetic_mnist


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", help="target directory for the IDX files")
    ap.add_argument("--train", type=int, default=60000)
    ap.add_argument("--test", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    t0 = time.time()
    write_synthetic_mnist(args.out_dir, args.train, args.test, args.seed)
    print(f"wrote {args.train}+{args.test} digits to {args.out_dir} "
          f"in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
