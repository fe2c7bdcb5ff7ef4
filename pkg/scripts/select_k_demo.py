"""Parallel analysis on the block design and on pure noise.

Prints the leading observed eigenvalues next to the null quantiles.
"""

import numpy as np

from hdconfound.factor import parallel_analysis_table
from hdconfound.simulation import SimConfig, generate_dataset


def show(label, x, seed=0):
    k, observed, null = parallel_analysis_table(x, 100, 0.95, seed)
    print(f"{label}: K = {k}")
    for i in range(6):
        mark = "*" if observed[i] > null[i] else " "
        print(f"  {i + 1:2d} {observed[i]:8.3f} {null[i]:8.3f} {mark}")


def main():
    show("block design, n=500 p=300", generate_dataset(SimConfig(), 0).x)
    show("uniform design, n=500 p=300", generate_dataset(SimConfig(loading="uniform"), 0).x)
    show("i.i.d. noise, n=500 p=100", np.random.default_rng(1).standard_normal((500, 100)))


if __name__ == "__main__":
    main()
