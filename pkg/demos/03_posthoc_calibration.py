"""Fixing a miscalibrated detector after training.

Isotonic maps are fitted on a validation split, mapping predicted class
probabilities to annotator vote shares and predicted variances to cluster
target variances. They are then applied to a disjoint test split.
"""

# %%
import numpy as np

from annocalib.metrics import evaluate_dataset
from annocalib.posthoc import calibrate_predictions, fit_calibrator_bank
from annocalib.preprocess import cluster_dataset
from annocalib.simulate import SimulationConfig, simulate_dataset, simulate_predictions, \
    voc_mix_profiles

config = SimulationConfig(seed=20240901, num_images=800, num_classes=10,
                          profiles=voc_mix_profiles(5, 1))
_, images = simulate_dataset(config)
meta = config.meta
val, test = images[:400], images[400:]


def distorted(split):
    clustered = cluster_dataset(split, meta)
    return simulate_predictions(clustered, meta.num_annotators, beta=0.5, var_scale=4.0)


val_preds, test_preds = distorted(val), distorted(test)
bank = fit_calibrator_bank(val, val_preds, meta)

# %%
before = evaluate_dataset(test, test_preds, meta)
after = evaluate_dataset(test, calibrate_predictions(test_preds, bank), meta)
for name in ("tvd", "tvd_fp", "lue", "fne", "mean"):
    print(f"{name:7s} {100 * getattr(before, name):6.2f} -> {100 * getattr(after, name):6.2f}")

# %% [markdown]
# What one class map learned: flattened probabilities get pushed back out.

# %%
grid = np.linspace(0.1, 1.0, 10)
print("p in :", np.round(grid, 2))
print("p out:", np.round(bank.class_maps[0](grid), 2))
