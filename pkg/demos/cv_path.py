"""Walk the cross-validated penalty path of a two-dimensional fit.

Run with ``python demos/cv_path.py``.
"""

import numpy as np

from halfit import Dataset, FitConfig, cross_validate, fit_hal

rng = np.random.default_rng(3)
x = rng.uniform(size=(150, 2))
y = np.sin(2 * np.pi * x[:, 0]) + (x[:, 1] - 0.5) ** 2 + 0.3 * rng.normal(size=150)
data = Dataset(x, y)

config = FitConfig(lambda_grid_size=25, seed=4)
report, model = cross_validate(data, "gaussian", config)

# Large penalties underfit, small ones overfit; CV risk is lowest in between.
print(f"{'lambda':>10} {'M':>8} {'cv risk':>9} {'se':>7}")
for i, lam in enumerate(report.path):
    mark = "  <- selected" if i == report.selected_index else ""
    print(f"{lam:10.5f} {report.path_M[i]:8.3f} {report.cv_risk[i]:9.4f} "
          f"{report.cv_se[i]:7.4f}{mark}")

# The one-standard-error rule prefers a sparser model with comparable risk.
one_se, _ = cross_validate(data, "gaussian", config.replace(one_se_rule=True))
print(f"one-se lambda {one_se.selected_lambda:.5f} vs minimum {report.selected_lambda:.5f}")

# The same estimator in budget form: bound the variation norm directly.
budget_model, _ = fit_hal(data, "gaussian", config, budget_m=0.5 * report.selected_M)
print(f"budget 0.5 * M_cv gives norm {budget_model.l1_norm:.3f}")
