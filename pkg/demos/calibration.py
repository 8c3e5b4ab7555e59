"""
Calibration error and temperature scaling
=========================================

Overconfident logits, their expected calibration error, and what a single
fitted temperature does to it.
"""

import numpy as np

from hreval.metrics import ece
from hreval.posthoc import fit_temperature
from hreval.metrics import accuracy, softmax

rng = np.random.default_rng(0)

# Four classes; the true class gets a modest boost, then everything is inflated 5x.
n, k = 2000, 4
labels = rng.integers(0, k, n)
logits = rng.normal(0, 1, (n, k))
logits[np.arange(n), labels] += 1.5
logits *= 5.0

val, test = slice(0, 1000), slice(1000, None)

print("accuracy        ", accuracy(logits[test], labels[test]))
print("mean confidence ", softmax(logits[test]).max(axis=1).mean())
print("ECE (15 bins)   ", ece(logits[test], labels[test]))

# Fit T on the validation half only.
scaler = fit_temperature(logits[val], labels[val])
print(f"\nT = {scaler.T:.3f}  val NLL {scaler.val_nll_before:.3f} -> {scaler.val_nll_after:.3f}")

scaled = scaler.apply(logits[test])
print("accuracy after  ", accuracy(scaled, labels[test]))  # unchanged: argmax is scale-free
print("ECE after       ", ece(scaled, labels[test]))

# A pathological model: always fully confident, right half the time.
sure = np.tile([50.0, -50.0], (10, 1))
print("\npathological ECE", ece(sure, np.array([0, 1] * 5)))
