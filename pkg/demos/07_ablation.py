"""
A small ablation
================

Sweep the confidence level alpha over three seeds.
"""

from adaplr import pipeline as pl

rows = pl.ablate(pl.desk_config(), "alpha", ["0.5", "0.9"], seeds=[0, 1, 2],
                 on_cell=lambda r: print(r["value"], r["seed"], r["status"], r["final_noise_pct"]))
print("seed-mean final noise:", pl.summarize_ablation(rows))
