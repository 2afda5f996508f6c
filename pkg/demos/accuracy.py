"""Compressive vs complete dictionary objectives.

1. The compressive misfit averaged over sensing draws equals the complete
   misfit (unbiasedness), checked for a few random probe dictionaries.
2. The distance between the compressive and complete minimizers shrinks as
   the number of blocks grows, and stays below the deviation bound.

    python3 demos/accuracy.py
"""

import numpy as np

from dlm.analysis import (accuracy_experiment, summarize_accuracy, synthetic_problem,
                          unbiasedness_test)
from dlm.dictionary import normalize_frobenius


def main():
    n, p, m = 8, 12, 4
    X, _, codes = synthetic_problem(n, p, 32, seed=0, lam=0.05)
    print("mean compressive misfit vs complete misfit, 10000 draws")
    for k in range(3):
        probe = normalize_frobenius(np.random.default_rng(k).standard_normal((n, p)))
        rep = unbiasedness_test(X, codes, probe, m, trials=10_000, seed=k)
        print(f"  probe {k}: {rep.mean_g:.4f} vs {rep.gbar:.4f} "
              f"({(rep.mean_g - rep.gbar) / rep.std_err:+.2f} standard errors)")

    X, _, codes = synthetic_problem(n, p, 512, seed=3)
    reports = accuracy_experiment(X, codes, m, [32, 64, 128, 256, 512], 10, seed=4)
    print(f"\nminimizer deviation, n={n}, p={p}, m={m}, 10 trials per N")
    print(f"{'N':>5} {'mean deviation':>15} {'mean bound':>11} {'violations':>11}")
    for row in summarize_accuracy(reports):
        print(f"{row['N']:>5} {row['mean_deviation']:>15.4g} {row['mean_bound']:>11.4g} "
              f"{row['bound_violations']:>11}")

if __name__ == "__main__":
    main()
