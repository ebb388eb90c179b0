"""Separate HAL fits per stratum and the additive risk decomposition.

Run with ``python demos/stratified.py``.
"""

import numpy as np

from halfit import Dataset, FitConfig, StratifiedModel, fit_stratified, risk_decomposition

rng = np.random.default_rng(5)
n = 300
x = rng.uniform(size=(n, 1))
site = rng.choice([1, 2, 3], size=n)
# each site has its own regression function
truth = {1: np.sin(4 * x[:, 0]), 2: 2 * x[:, 0] - 1, 3: (x[:, 0] > 0.5).astype(float)}
f = np.choose(site - 1, [truth[1], truth[2], truth[3]])
data = Dataset(x, f + 0.2 * rng.normal(size=n), site)

model = StratifiedModel(fit_stratified(data, "gaussian", FitConfig(lambda_grid_size=30)))
print("strata", model.labels)

# Pooled risk is the share-weighted sum of the per-stratum risks.
parts = risk_decomposition(model, data)
for label, (share, risk) in parts.items():
    print(f"  stratum {label}: share {share:.3f}, risk {risk:.4f}")
total = sum(w * r for w, r in parts.values())
print(f"pooled risk {model.empirical_risk(data):.6f} = weighted sum {total:.6f}")

# Predictions route each row to its stratum's model.
print(model.predict([[0.25], [0.25], [0.75]], [1, 2, 3]))
