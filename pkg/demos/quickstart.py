"""Fit a one-dimensional HAL model, inspect it and predict.

Run with ``python demos/quickstart.py``.
"""

import numpy as np

from halfit import Dataset, FitConfig, cross_validate, save_model, load_model
from halfit import sectional_variation_norm

rng = np.random.default_rng(7)

# A noisy sine wave on the unit interval.
x = rng.uniform(size=(200, 1))
y = np.sin(4 * np.pi * x[:, 0]) + 0.3 * rng.normal(size=200)
data = Dataset(x, y)

# Cross-validation picks the penalty; the returned model is refitted on all rows.
report, model = cross_validate(data, "gaussian", FitConfig(seed=1))
print(f"selected lambda   {report.selected_lambda:.5f}")
print(f"variation norm    {sectional_variation_norm(model):.3f}")
print(f"nonzero atoms     {model.nonzero().size} of {len(model.spec)}")

# The fit is a step function: evaluate it on a coarse grid.
grid = np.linspace(0, 1, 11)[:, None]
for g, f in zip(grid[:, 0], model.predict(grid)):
    print(f"  psi({g:.1f}) = {f:+.3f}   truth {np.sin(4 * np.pi * g):+.3f}")

# Model files round-trip exactly.
save_model(model, "quickstart_model.json")
again = load_model("quickstart_model.json")
assert np.array_equal(again.predict(grid), model.predict(grid))
print("saved and reloaded quickstart_model.json")
