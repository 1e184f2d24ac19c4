"""Parameter builders and forward functions for the network sublayers.

Each ``init_*`` registers parameters under a name prefix; the matching
forward function reads them back by the same prefix. All sublayers are
pre-norm and residual. Inputs are batched: ``[B, n, d]``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..numerics import (
    broadcast_to,
    gelu,
    layer_norm,
    linear,
    matmul,
    reshape,
    softmax,
    swapaxes,
)


def truncated_normal(rng, shape, std, dtype):
    """Normal(0, std^2) resampled until every draw lies within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def init_dense(store, prefix, d_in, d_out, rng, dtype, bias=True):
    store.add(f"{prefix}.w", truncated_normal(rng, (d_in, d_out), 1.0 / np.sqrt(d_in), dtype))
    if bias:
        store.add(f"{prefix}.b", np.zeros(d_out, dtype=dtype))


def dense(params, prefix, x):
    bias = f"{prefix}.b"
    return linear(x, params[f"{prefix}.w"], params[bias] if bias in params else None)


def init_norm(store, prefix, d, dtype):
    store.add(f"{prefix}.g", np.ones(d, dtype=dtype))
    store.add(f"{prefix}.b", np.zeros(d, dtype=dtype))


def norm(params, prefix, x):
    return layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def init_attention(store, prefix, d_q, d_kv, n_heads, d_head, rng, dtype, cross=True):
    inner = n_heads * d_head
    init_norm(store, f"{prefix}.ln_q", d_q, dtype)
    if cross:
        init_norm(store, f"{prefix}.ln_kv", d_kv, dtype)
    init_dense(store, f"{prefix}.q", d_q, inner, rng, dtype)
    # a key bias only shifts every score of a row equally; softmax ignores it
    init_dense(store, f"{prefix}.k", d_kv, inner, rng, dtype, bias=False)
    init_dense(store, f"{prefix}.v", d_kv, inner, rng, dtype)
    init_dense(store, f"{prefix}.o", inner, d_q, rng, dtype)


def _split_heads(x, n_heads):
    b, n, inner = x.shape
    return swapaxes(reshape(x, (b, n, n_heads, inner // n_heads)), 1, 2)


def multi_head_attention(params, prefix, xq, xkv, n_heads):
    """Scaled dot-product attention of normed ``xq`` rows over normed ``xkv`` rows (no residual)."""
    q = _split_heads(dense(params, f"{prefix}.q", xq), n_heads)
    k = _split_heads(dense(params, f"{prefix}.k", xkv), n_heads)
    v = _split_heads(dense(params, f"{prefix}.v", xkv), n_heads)
    d_head = q.shape[-1]
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_head))
    heads = matmul(softmax(scores, axis=-1), v)  # [B, H, a, d_head]
    b, _, a, _ = heads.shape
    merged = reshape(swapaxes(heads, 1, 2), (b, a, n_heads * d_head))
    return dense(params, f"{prefix}.o", merged)


def cross_attention(params, prefix, queries_in, keys_values_in, n_heads):
    """``queries_in + Attn(LN(queries_in), LN(keys_values_in))``.

    Row i of the output depends on row i of ``queries_in`` and on every row
    of ``keys_values_in``; it is invariant to the order of the latter.
    """
    if queries_in.ndim != 3 or keys_values_in.ndim != 3 or queries_in.shape[0] != keys_values_in.shape[0]:
        raise ShapeError(f"cross_attention expects [B, n, d] inputs, got {queries_in.shape} and {keys_values_in.shape}")
    xq = norm(params, f"{prefix}.ln_q", queries_in)
    xkv = norm(params, f"{prefix}.ln_kv", keys_values_in)
    return queries_in + multi_head_attention(params, prefix, xq, xkv, n_heads)


def init_mlp(store, prefix, d, hidden, rng, dtype):
    init_norm(store, f"{prefix}.ln", d, dtype)
    init_dense(store, f"{prefix}.fc1", d, hidden, rng, dtype)
    init_dense(store, f"{prefix}.fc2", hidden, d, rng, dtype)


def mlp_residual(params, prefix, x):
    h = gelu(dense(params, f"{prefix}.fc1", norm(params, f"{prefix}.ln", x)))
    return x + dense(params, f"{prefix}.fc2", h)


def init_self_attention_block(store, prefix, d, n_heads, d_head, mlp_hidden, rng, dtype):
    init_attention(store, f"{prefix}.attn", d, d, n_heads, d_head, rng, dtype, cross=False)
    init_mlp(store, f"{prefix}.mlp", d, mlp_hidden, rng, dtype)


def self_attention_block(params, prefix, x, n_heads):
    """Pre-norm multi-head self-attention followed by an MLP, both residual."""
    if x.ndim != 3:
        raise ShapeError(f"self_attention_block expects [B, n, d], got {x.shape}")
    xn = norm(params, f"{prefix}.attn.ln_q", x)
    x = x + multi_head_attention(params, f"{prefix}.attn", xn, xn, n_heads)
    return mlp_residual(params, f"{prefix}.mlp", x)


def init_mixer_block(store, prefix, n_tokens, d, token_hidden, channel_hidden, rng, dtype):
    init_norm(store, f"{prefix}.token.ln", d, dtype)
    init_dense(store, f"{prefix}.token.fc1", n_tokens, token_hidden, rng, dtype)
    # no output bias: a per-token constant is removed by every later row norm
    init_dense(store, f"{prefix}.token.fc2", token_hidden, n_tokens, rng, dtype, bias=False)
    init_mlp(store, f"{prefix}.channel", d, channel_hidden, rng, dtype)


def mixer_block(params, prefix, x):
    """Token-mixing MLP across rows, then channel-mixing MLP; pre-norm residual."""
    n_tokens = params[f"{prefix}.token.fc1.w"].shape[0]
    if x.ndim != 3 or x.shape[1] != n_tokens:
        raise ShapeError(f"mixer block configured for {n_tokens} tokens, got input {x.shape}")
    y = swapaxes(norm(params, f"{prefix}.token.ln", x), 1, 2)  # [B, d, n]
    y = dense(params, f"{prefix}.token.fc2", gelu(dense(params, f"{prefix}.token.fc1", y)))
    x = x + swapaxes(y, 1, 2)
    return mlp_residual(params, f"{prefix}.channel", x)


def batched(param, batch):
    """Broadcast an [n, d] parameter to [batch, n, d]."""
    return broadcast_to(param, (batch,) + param.shape)
