"""A small convergence-rate experiment.

The full-size run behind the acceptance suite uses n up to 1600 and 20
replications. This demo keeps the grid small so it finishes in a few seconds.
Run with ``python demos/rate_experiment.py``.
"""

import numpy as np

from halfit import FitConfig, get_dgp, rate_experiment

n_grid = [50, 100, 200, 400]
report = rate_experiment(get_dgp("sine1d"), n_grid, 5, FitConfig(lambda_grid_size=40),
                         master_seed=11, mc_samples=20_000)

d0 = report.medians("dissimilarity")
sup = report.medians("sup_norm_error")
print(f"{'n':>5} {'median d0':>10} {'median sup':>11}")
for n, a, b in zip(n_grid, d0, sup):
    print(f"{n:5d} {a:10.5f} {b:11.4f}")

# The rate exponent is the least-squares slope of log d0 on log n.
print(f"rate exponent {report.rate_exponent:.3f}")
print(f"check         {np.polyfit(np.log(n_grid), np.log(d0), 1)[0]:.3f}")
print(f"sup-norm ratio last/first {report.sup_norm_ratio:.3f}")
for note in report.notes:
    print("note:", note)
