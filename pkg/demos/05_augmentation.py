"""
Augmentations
=============

Flat features get jitter and masking; image rows get crops, affine jitter,
blur and brightness changes.
"""

import numpy as np
from adaplr.data import augment, default_augmentation, digit_glyphs
from adaplr.numerics import RngStream

stream = RngStream(3, 2)
x = np.ones((2, 6))
print(augment(x, default_augmentation("flat"), stream).round(2))

glyph = digit_glyphs()[8].reshape(1, 64)     # one flattened 8
spec = default_augmentation((8, 8))
print("transforms:", spec.to_list())
out = augment(glyph, spec, stream)
for row_a, row_b in zip(glyph.reshape(8, 8), out.reshape(8, 8)):
    print("".join("#" if v > 0.5 else "." for v in row_a), "  ",
          "".join("#" if v > 0.5 else "." for v in row_b))
