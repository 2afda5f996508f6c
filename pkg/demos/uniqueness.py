"""When is the compressive dictionary objective strictly convex?

1. Hessian conditioning for a shared sensing matrix vs per-block matrices.
2. Empirical failure rate of positive definiteness against the matrix
   Chernoff bound as the number of blocks grows.
3. The matrix Chernoff tail bound on sums of random rank-one projectors.

    python3 demos/uniqueness.py
"""

import numpy as np

from dlm.analysis import (chernoff_tail_experiment, hessian_extremes, synthetic_problem,
                          uniqueness_sweep)
from dlm.measurement import Scheme, generate_block_matrices


def conditioning(alpha, n, m):
    print(f"smallest / largest Hessian eigenvalue, n={n}, m={m}, N={len(alpha)}")
    for scheme in (Scheme.FIXED_SHARED, Scheme.BIG):
        phis = generate_block_matrices(scheme, 1, len(alpha), m, n)
        lo, hi = hessian_extremes(phis, alpha)
        print(f"  {scheme.name.lower():>13}: {lo / hi:.3e}")


def main():
    n, p, m = 6, 8, 3
    _, _, codes = synthetic_problem(n, p, 512, seed=1)
    conditioning(codes.alpha[:128], n, m)

    print("\npositive-definiteness failures over 100 draws")
    print(f"{'N':>5} {'failures':>9} {'bound':>8} {'median lmin/lmax':>17}")
    for row in uniqueness_sweep(codes.alpha, n, m, [16, 32, 64, 128, 256], 100, seed=2):
        print(f"{row['N']:>5} {row['failures']:>9} {row['bound']:>8.3g} "
              f"{row['median_rel_lambda_min']:>17.3e}")

    print("\nrank-one projector sums, dim 10, 200 terms, 500 draws")
    print(f"{'delta':>6} {'P(low)':>8} {'bound':>10} {'P(high)':>8} {'bound':>10}")
    rows = chernoff_tail_experiment(10, 200, 500, [0.2, 0.4, 0.6], seed=3)
    for row in rows:
        print(f"{row['delta']:>6} {row['empirical_lower']:>8.3f} {row['bound_lower']:>10.3g} "
              f"{row['empirical_upper']:>8.3f} {row['bound_upper']:>10.3g}")
    assert np.all([r["empirical_lower"] <= r["bound_lower"] for r in rows])


if __name__ == "__main__":
    main()
