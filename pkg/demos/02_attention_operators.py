"""
Additive and multiplicative attention
=====================================

The additive operator is ordinary multi-head attention.  The multiplicative
one runs the same heads in log space, so a sum of logs becomes a product of
features.  A learned token-mixing layer blends the two.
"""

import numpy as np

from tljd import tensor as tn
from tljd.attention import arithmetic_attention, att_additive, att_multiplicative, init_layer
from tljd.params import ParamStore

T, d = 4, 8
params = ParamStore(rng_seed=0)
init_layer(params, "demo", tokens=T, d=d, heads=2)
p = {name: tn.Tensor(params.value(name)) for name in params.names()}

H = np.random.default_rng(0).uniform(0, 2, size=(T, d))

add = att_additive(H, p, "demo").value
mult = att_multiplicative(H, p, "demo").value
print("additive output row 0     ", np.round(add[0], 3))
print("multiplicative output row 0", np.round(mult[0], 3))

# negative entries are clipped before the log, and the result is always positive
print("min multiplicative value", mult.min())

# the mixing weights have shape (T, 2T); [I|0] keeps only the additive half
p["demo.fc.w"] = tn.Tensor(np.hstack([np.eye(T), np.zeros((T, T))]))
p["demo.fc.b"] = tn.Tensor(np.zeros(T))
same = arithmetic_attention(H, p, "demo").value
print("[I|0] reproduces additive exactly:", np.array_equal(same, add))

p["demo.fc.w"] = tn.Tensor(np.hstack([np.zeros((T, T)), np.eye(T)]))
same = arithmetic_attention(H, p, "demo").value
print("[0|I] reproduces multiplicative exactly:", np.array_equal(same, mult))
