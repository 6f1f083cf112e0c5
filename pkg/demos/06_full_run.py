"""
End to end on the rotated blob task
===================================

Pretrain on source, pseudo-label the target, refine with the ensemble,
then train the final model on high-confidence samples.
"""

from adaplr import pipeline as pl

cfg = pl.desk_config(seed=0)
res = pl.run_all(cfg)

for k in pl.SUMMARY_KEYS:
    print(f"{k:28s} {res[k]}")

print("\nepoch  noise%  gamma   hcs  moved")
for m in res["refine_result"].metrics[::10]:
    print(f"{m.epoch:5d}  {m.noise_pct:6.2f}  {m.gamma:.3f}  {m.hcs_count:4d}  {m.reassigned_count:5d}")
