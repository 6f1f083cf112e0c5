"""
Three kinds of label noise
==========================

Symmetric and class-mapped noise are synthetic; shift noise comes from a
source model applied to a rotated target.
"""

import numpy as np
from adaplr import pipeline as pl
from adaplr.data import (DIGIT_MAPPING, asymmetric_rate_for, inject_asymmetric_noise,
                         inject_shift_noise, inject_symmetric_noise)
from adaplr.numerics import PURPOSE_NOISE, stream_for

labels = np.repeat(np.arange(10), 100)
sym = inject_symmetric_noise(labels, 0.3, stream_for(0, PURPOSE_NOISE), 10)
print("symmetric 30%  :", np.mean(sym != labels))

asym = inject_asymmetric_noise(labels, 0.4, DIGIT_MAPPING, stream_for(1, PURPOSE_NOISE))
print("mapped classes flipped at 40%, overall:", np.mean(asym != labels), DIGIT_MAPPING)
print("rate for 20% overall:", round(asymmetric_rate_for(labels, DIGIT_MAPPING, 0.2), 3))

cfg = pl.desk_config(0)
source, target = pl.load_task(cfg)
model = pl.pretrain_source(cfg, source).model
shift = inject_shift_noise(model, target)
wrong = shift.labels != target.labels
print("shift noise    :", round(wrong.mean(), 3))

# shift noise is not uniform over classes: errors flow to neighbours
confusion = np.zeros((10, 10), int)
np.add.at(confusion, (target.labels, shift.labels), 1)
print(confusion)
