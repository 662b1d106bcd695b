"""Adam optimizer over a :class:`~tljd.params.ParamStore`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingStateError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name in params.names():
            state.m[name] = np.zeros_like(params.value(name))
            state.v[name] = np.zeros_like(params.value(name))
        return state


def adam_step(params, state):
    """Apply one bias-corrected Adam update in place.

    Bias correction is folded into the step size,
    ``lr_t = lr * sqrt(1 - beta2**t) / (1 - beta1**t)``, and ``eps`` is added
    to the uncorrected ``sqrt(v)``.
    """
    if state is None:
        raise MissingStateError("adam_step: no optimizer state")
    missing = [n for n in params.names() if n not in state.m or n not in state.v]
    if missing:
        raise MissingStateError(f"adam_step: no moment estimates for {missing[:3]}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    lr_t = state.lr * np.sqrt(1.0 - b2 ** state.t) / (1.0 - b1 ** state.t)
    for name in params.names():
        g = params.grad(name)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        params.set_value(name, params.value(name) - lr_t * m / (np.sqrt(v) + state.eps))
    return params
