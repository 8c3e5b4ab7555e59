"""
Weighted logit ensembles
========================

Random k-member subsets of a pool, each with weights fit on validation
cross-entropy; the best of the trials is kept.
"""

import numpy as np

from hreval.metrics import accuracy, ece
from hreval.posthoc import ensemble_logits, fit_ensemble_weights, fit_temperature, sample_subsets

rng = np.random.default_rng(0)
n, k = 1500, 5
labels = rng.integers(0, k, n)
val, test = slice(0, 500), slice(500, None)

# A pool of noisy classifiers of varying skill and confidence.
pool = []
for i in range(8):
    z = rng.normal(0, 1, (n, k))
    z[np.arange(n), labels] += rng.uniform(0.5, 2.0)
    pool.append(z * rng.uniform(0.5, 4.0))

best = None
for subset in sample_subsets(len(pool), 3, trials=50, seed=0):
    members = [pool[i][val] for i in subset]
    w = fit_ensemble_weights(members, labels[val])
    z = ensemble_logits(members, w)
    loss = -np.mean(z[np.arange(len(z)), labels[val]] - np.log(np.exp(z).sum(axis=1)))
    if best is None or loss < best[0]:
        best = (loss, subset, w)

loss, subset, w = best
print("best subset", subset, "weights", np.round(w, 3), f"val loss {loss:.4f}")
z_test = ensemble_logits([pool[i][test] for i in subset], w)
for i in subset:
    print(f"  member {i}: acc {accuracy(pool[i][test], labels[test]):.3f}")
print(f"  ensemble: acc {accuracy(z_test, labels[test]):.3f}  ECE {ece(z_test, labels[test]):.3f}")

# One member alone: the fitted weight is the inverse of the fitted temperature.
w1 = fit_ensemble_weights([pool[0][val]], labels[val])[0]
print(f"\n1/w = {1 / w1:.5f}   T = {fit_temperature(pool[0][val], labels[val]).T:.5f}")
