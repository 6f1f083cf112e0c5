"""
Losses on a single logit vector
===============================

Positive, negative and residual-set losses, with a finite-difference check.
"""

import numpy as np
from adaplr.losses import pl_loss, nl_loss, nel_loss

z = np.array([2.0, 0.5, -1.0, 0.0])
print("logits      ", z)
print("softmax     ", np.round(np.exp(z) / np.exp(z).sum(), 4))

# pushing class 0 up, or pushing class 2 down
print("PL(y=0)     ", round(pl_loss(z, 0).value, 6))
print("NL(c=2)     ", round(nl_loss(z, 2).value, 6))

# the residual loss averages NL terms over a set; with one label it is NL
print("NEL({2})    ", round(nel_loss(z, [2]).value, 6))
print("NEL({1,2,3})", round(nel_loss(z, [1, 2, 3]).value, 6))

# complementary feedback that is wrong (class 0 is in fact the answer) costs more
print("NL(c=0)     ", round(nl_loss(z, 0).value, 6), " <- large, pushes the true class down")

# gradient check
h = 1e-6
g = nel_loss(z, [1, 3]).grad_logits
fd = np.array([(nel_loss(z + h * e, [1, 3]).value - nel_loss(z - h * e, [1, 3]).value) / (2 * h)
               for e in np.eye(4)])
print("analytic grad", np.round(g, 8))
print("central diff ", np.round(fd, 8))
print("max abs diff ", np.abs(g - fd).max())
