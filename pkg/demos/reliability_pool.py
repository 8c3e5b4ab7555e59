"""
From model runs to correlations
===============================

Build the three-run synthetic pool, score every run on all five properties,
then look at how the properties move together and which group wins on the
combined score.
"""

import tempfile
from pathlib import Path

import numpy as np

from hreval import EvaluationPlan, evaluate_pool
from hreval.analysis import COLUMNS, correlation_matrix, hr_improvement
from hreval.synthetic import build_fixture

work = Path(tempfile.mkdtemp())
plan_path = build_fixture(work / "pool", seed=0)
result = evaluate_pool(EvaluationPlan.from_file(plan_path))

print(f"{'run':26s}" + "".join(f"{c:>8s}" for c in COLUMNS))
for mid, ev in result.evaluations.items():
    for label, card in (("", ev.card), ("  (T-scaled)", ev.calibrated)):
        vals = [card.s_id, card.s_ds, card.s_adv, card.s_cal, card.s_ood, card.s_hr]
        print(f"{mid + label:26s}" + "".join(f"{v:8.3f}" for v in vals))

# Temperature scaling leaves s_ID and s_DS alone and usually helps s_CAL.
for mid, ev in result.evaluations.items():
    print(f"{mid}: T={ev.scaler.T:.3f}  s_CAL {ev.card.s_cal:.3f} -> {ev.calibrated.s_cal:.3f}")

r, r2 = correlation_matrix(result.table)
print("\nR^2 between properties (three runs, so take with salt):")
print(np.round(r2, 2))

print("\nHR gain over the ERM baseline:", hr_improvement(result.table, "baseline"))
