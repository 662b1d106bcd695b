"""
Reverse-mode gradients and finite-difference checking
=====================================================

Builds a small graph out of tljd primitives, backpropagates through it and
compares the result with central differences.
"""

import numpy as np

from tljd import tensor as tn
from tljd.gradcheck import grad_check
from tljd.params import ParamStore

# parameters live in a ParamStore; every leaf gets a gradient slot
params = ParamStore(rng_seed=0)
params.add_uniform("w", (3, 2), fan_in=3)
params.add_zeros("b", (2,))

X = np.random.default_rng(1).normal(size=(5, 3))
y = np.random.default_rng(2).normal(size=(5, 2))


# a graph function receives the parameter leaves and the inputs and returns a scalar
def graph(p, inputs):
    X, y = inputs
    hidden = tn.relu(tn.add_bias(tn.matmul(tn.Tensor(X), p["w"]), p["b"]))
    return tn.mean(tn.square(tn.sub(tn.softmax(hidden, axis=-1), tn.Tensor(y))))


loss = tn.forward_backward(graph, params, (X, y))
print("loss", loss)
print("dloss/dw\n", params.grad("w"))

# grad_check perturbs every coordinate by +-1e-5 and compares
report = grad_check(graph, params, (X, y))
print("max relative error", report.max_error, "passed", report.passed)
print("coordinates skipped at relu kinks:", report.excluded)
