"""
Consensus confidence and the adaptive threshold
===============================================

Logit snapshots accumulate in a ring buffer; their average gives a
consensus distribution. The threshold gamma is the share of samples whose
confidence clears alpha, and samples below it take the consensus argmax.
"""

import numpy as np
from adaplr.ensemble import ConfidenceHistory, consensus_all
from adaplr.labels import PseudoLabelSet, compute_gamma, reassign

rng = np.random.default_rng(0)
n, C, members = 8, 4, 3
truth = rng.integers(0, C, n)
h = ConfidenceHistory(n, C, members, capacity=5)

# each snapshot is the sum of member logits, biased toward the truth
for epoch in range(7):
    z = rng.normal(0, 1, (n, C)) * members
    z[np.arange(n), truth] += 2.0 * members
    h.push(z)
print("stored snapshots per sample:", h.fill)

p = consensus_all(h)
labels = truth.copy()
labels[:3] = (labels[:3] + 1) % C          # three wrong pseudo-labels
conf = p[np.arange(n), labels]
print("pseudo-label confidence:", np.round(conf, 3))

gamma = compute_gamma(conf, alpha=0.5)
print("gamma =", gamma)
new, changed = reassign(PseudoLabelSet(labels, conf, C), h, gamma)
print("before:", labels)
print("after :", new.labels)
print("truth :", truth, " changed", changed)
