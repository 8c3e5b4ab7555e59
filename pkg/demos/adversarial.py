"""
PGD attacks on a toy MLP
========================

Train a small network on Gaussian blobs, then measure how accuracy degrades
as the L-inf budget grows, with and without adversarial training.
"""

import numpy as np

from hreval.runtime import AttackConfig, evaluate_adversarial, train
from hreval.synthetic import make_data

data = make_data(seed=0)
x_train, y_train = data.train
x_test, y_test = data.splits["id_test"]
print("feature range", x_test.min().round(2), x_test.max().round(2))

erm = train(x_train, y_train, "erm", epochs=150, lr=0.1, seed=0, hidden_dim=32).model

budget = AttackConfig("pgd", 3 / 255, steps=10, seed=0)
robust = train(x_train, y_train, "adversarial", budget, epochs=150, lr=0.1, seed=0,
               hidden_dim=32).model

print("\n eps*255   ERM clean/adv    adv-trained clean/adv")
for eps in (0, 1, 3, 8):
    cfg = AttackConfig("pgd", eps / 255, steps=10, seed=1)
    row = [evaluate_adversarial(m, x_test, y_test, cfg, cap=512, seed=0) for m in (erm, robust)]
    print(f"{eps:7d}   {row[0][0]:.3f} / {row[0][1]:.3f}    {row[1][0]:.3f} / {row[1][1]:.3f}")

# FGSM is the single full-size step of the same attack.
fgsm = AttackConfig("fgsm", 3 / 255)
print("\nFGSM at 3/255 on ERM:", evaluate_adversarial(erm, x_test, y_test, fgsm, cap=512)[1])
