"""
Disjoint residual label sets
============================

Each ensemble member receives its own slice of the classes other than the
pseudo-label, so members never push on the same wrong class.
"""

import numpy as np
from adaplr.numerics import RngStream
from adaplr.labels import sample_disjoint_residual_labels, default_n_rl

stream = RngStream(7, 3)
C, members = 10, 3
n_rl = default_n_rl(C, members)
print("C =", C, " members =", members, " residual size =", n_rl)

for draw in range(4):
    sets = sample_disjoint_residual_labels(stream, 4, C, members, n_rl)
    print("pseudo-label 4 ->", [sorted(s.tolist()) for s in sets])

# with one member and 4 of the 9 other classes, each class appears 4/9 of the time
counts = np.zeros(C)
for _ in range(20000):
    counts[sample_disjoint_residual_labels(stream, 0, C, 1, 4)[0]] += 1
print("frequency per class:", np.round(counts / 20000, 3))
print("expected           :", round(4 / 9, 3))
