"""Write one simulated replication as a CSV usable by ``hdconfound infer``.

Columns are ``y, x1, ..., xp``; the exposure of the simulation is ``x1``.
"""

import argparse
import csv

import numpy as np

from hdconfound.simulation import SimConfig, generate_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out")
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--p", type=int, default=300)
    parser.add_argument("--family", choices=("linear", "logistic"), default="linear")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rep", type=int, default=0)
    args = parser.parse_args()

    config = SimConfig(n=args.n, p=args.p, family=args.family, seed=args.seed)
    ds = generate_dataset(config, args.rep)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y"] + [f"x{j + 1}" for j in range(args.p)])
        for row in np.column_stack([ds.y, ds.x]):
            writer.writerow([repr(float(v)) for v in row])
    print(f"wrote {args.out} ({args.n} rows, {args.p} covariates)")


if __name__ == "__main__":
    main()
