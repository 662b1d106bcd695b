"""Arithmetic-attention transformer layers.

All functions take token matrices shaped ``(T, d)`` or ``(B, T, d)`` and a
mapping of parameter tensors addressed by a name ``prefix``:

``{prefix}.head{m}.wq|wk|wv``  (d, d/M) per head
``{prefix}.wo``                (d, d)
``{prefix}.fc.w`` / ``.fc.b``  (T, 2T) token-axis mixing and one bias per token
``{prefix}.ffn.w1|b1|w2|b2``   d -> d_ff -> d
``{prefix}.ln1|ln2.gain|bias`` post-residual layer norms
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tn
from .errors import ConfigError


def init_layer(params, prefix, tokens, d, heads, d_ff=None):
    if d % heads:
        raise ConfigError(f"embedding size {d} is not divisible by {heads} heads")
    d_ff = d_ff or 2 * d
    dh = d // heads
    for m in range(heads):
        for w in ("wq", "wk", "wv"):
            params.add_uniform(f"{prefix}.head{m}.{w}", (d, dh), fan_in=d)
    params.add_uniform(f"{prefix}.wo", (d, d), fan_in=d)
    params.add_uniform(f"{prefix}.fc.w", (tokens, 2 * tokens), fan_in=2 * tokens)
    params.add_zeros(f"{prefix}.fc.b", (tokens,))
    params.add_uniform(f"{prefix}.ffn.w1", (d, d_ff), fan_in=d)
    params.add_zeros(f"{prefix}.ffn.b1", (d_ff,))
    params.add_uniform(f"{prefix}.ffn.w2", (d_ff, d), fan_in=d_ff)
    params.add_zeros(f"{prefix}.ffn.b2", (d,))
    for ln in ("ln1", "ln2"):
        params.add_ones(f"{prefix}.{ln}.gain", (d,))
        params.add_zeros(f"{prefix}.{ln}.bias", (d,))


def _batched(H):
    H = tn.as_tensor(H)
    if H.ndim == 2:
        return tn.reshape(H, (1,) + H.shape), True
    return H, False


def _unbatch(out, squeeze):
    return tn.reshape(out, out.shape[1:]) if squeeze else out


def count_heads(p, prefix):
    m = 0
    while f"{prefix}.head{m}.wq" in p:
        m += 1
    return m


def _split_heads(X, heads):
    B, T, d = X.shape
    return tn.transpose(tn.reshape(X, (B, T, heads, d // heads)), (0, 2, 1, 3))


def multi_head(H, p, prefix, return_weights=False):
    """Concatenated scaled dot-product heads projected by ``wo``."""
    H, squeeze = _batched(H)
    B, T, d = H.shape
    heads = count_heads(p, prefix)
    if heads == 0 or d % heads:
        raise ConfigError(f"{prefix}: embedding size {d} not divisible by {heads} heads")
    dh = d // heads
    proj = {
        w: tn.concat([p[f"{prefix}.head{m}.{w}"] for m in range(heads)], axis=1)
        for w in ("wq", "wk", "wv")
    }
    Q = _split_heads(H @ proj["wq"], heads)
    K = _split_heads(H @ proj["wk"], heads)
    V = _split_heads(H @ proj["wv"], heads)
    scores = tn.scale(Q @ tn.transpose(K, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
    weights = tn.softmax(scores, axis=-1)
    ctx = tn.reshape(tn.transpose(weights @ V, (0, 2, 1, 3)), (B, T, d))
    out = _unbatch(ctx @ p[f"{prefix}.wo"], squeeze)
    if return_weights:
        return out, weights
    return out


def att_additive(H, p, prefix):
    return multi_head(H, p, prefix)


def att_multiplicative(H, p, prefix):
    """exp(MultiHead(log(relu(H) + 1))); strictly positive output."""
    H = tn.as_tensor(H)
    shifted = tn.add(tn.relu(H), tn.Tensor(np.ones(H.shape)))
    return tn.exp(multi_head(tn.log(shifted), p, prefix))


def arithmetic_attention(H, p, prefix):
    """Mix the additive and multiplicative outputs along the token axis.

    Output token ``k`` is ``sum_j fc.w[k, j] * C[j] + fc.b[k]`` where ``C``
    stacks the ``T`` additive rows above the ``T`` multiplicative rows; the
    same combination is used for every feature dimension.
    """
    H, squeeze = _batched(H)
    B, T, d = H.shape
    w, b = p[f"{prefix}.fc.w"], p[f"{prefix}.fc.b"]
    if w.shape != (T, 2 * T) or b.shape != (T,):
        raise ConfigError(
            f"{prefix}.fc: weight {w.shape} / bias {b.shape} do not fit {T} tokens (need ({T}, {2 * T}))"
        )
    stacked = tn.concat([att_additive(H, p, prefix), att_multiplicative(H, p, prefix)], axis=1)
    bias = tn.expand(tn.reshape(b, (T, 1)), (B, T, d))
    return _unbatch(tn.add(w @ stacked, bias), squeeze)


def feed_forward(Z, p, prefix):
    hidden = tn.relu(tn.add_bias(Z @ p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"]))
    return tn.add_bias(hidden @ p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])


def transformer_layer(H, p, prefix):
    """Post-norm layer: LN(H + Att(H)) followed by LN(z + FFN(z))."""
    H = tn.as_tensor(H)
    z = tn.layer_norm(tn.add(H, arithmetic_attention(H, p, prefix)),
                      p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"])
    return tn.layer_norm(tn.add(z, feed_forward(z, p, prefix)),
                         p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"])


def run_stack(H, p, prefix="enc", layers=None):
    """Apply ``{prefix}.layer0`` ... ``{prefix}.layer{L-1}`` in order."""
    if layers is None:
        layers = 0
        while f"{prefix}.layer{layers}.wo" in p:
            layers += 1
    out = tn.as_tensor(H)
    for l in range(layers):
        out = transformer_layer(out, p, f"{prefix}.layer{l}")
    return out
