"""Pure numpy implementations of the hot kernels.

These are the reference semantics; the compiled extension in _ckernels.pyx
implements the same signatures. Reductions accumulate in float64 in both
backends to keep them numerically close, but bitwise equality across
backends is not guaranteed (within one backend every kernel is
deterministic).

Row-oriented kernels take 2-D arrays (rows x features); callers reshape.
"""

import numpy as np

NAME = "pure"

_LN_EPS = 1e-5


def softmax_fwd(x, mask=None):
    """Row-wise softmax; mask (uint8, 1 = excluded) zeroes entries out.

    Rows that are fully masked produce all-zero output rather than NaN.
    """
    if mask is not None:
        x = np.where(mask, -np.inf, x)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    if mask is not None:
        e = np.where(mask, 0.0, e)
    denom = e.sum(axis=-1, keepdims=True, dtype=np.float64)
    denom[denom == 0.0] = 1.0
    return (e / denom).astype(x.dtype)


def softmax_bwd(p, g):
    """dx = p * (g - sum(g * p)) per row."""
    dot = (p.astype(np.float64) * g.astype(np.float64)).sum(axis=-1, keepdims=True)
    return (p * (g - dot)).astype(p.dtype)


def norm_fwd(x):
    """Normalize rows to zero mean / unit variance. Returns (y, inv_std)."""
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    y = ((x64 - mu) * inv).astype(x.dtype)
    return y, inv.astype(x.dtype)


def norm_bwd(y, inv, g):
    """dx = inv * (g - mean(g) - y * mean(g*y)) per row."""
    g64 = g.astype(np.float64)
    y64 = y.astype(np.float64)
    gm = g64.mean(axis=-1, keepdims=True)
    gym = (g64 * y64).mean(axis=-1, keepdims=True)
    return (inv.astype(np.float64) * (g64 - gm - y64 * gym)).astype(y.dtype)


def copy_mix_fwd(gen_probs, copy_w, src_ids, p_gen):
    """Pointer-generator mixture over the shared vocabulary.

    out[b,t,y] = p_gen[b,t] * gen_probs[b,t,y]
               + (1 - p_gen[b,t]) * sum_{j: src_ids[b,j]==y} copy_w[b,t,j]

    gen_probs (B,T,V), copy_w (B,T,S), src_ids (B,S) int, p_gen (B,T).
    """
    B = gen_probs.shape[0]
    out = p_gen[..., None] * gen_probs
    contrib = (1.0 - p_gen[..., None]) * copy_w
    for b in range(B):
        np.add.at(out[b], (slice(None), src_ids[b]), contrib[b])
    return out


def copy_mix_bwd(gen_probs, copy_w, src_ids, p_gen, g):
    """Gradients of copy_mix_fwd w.r.t. (gen_probs, copy_w, p_gen)."""
    B, T, S = copy_w.shape
    d_gen = p_gen[..., None] * g
    g_at_src = np.take_along_axis(g, np.broadcast_to(src_ids[:, None, :], (B, T, S)), axis=2)
    d_w = (1.0 - p_gen[..., None]) * g_at_src
    d_pg = (g.astype(np.float64) * gen_probs).sum(axis=-1) \
        - (g_at_src.astype(np.float64) * copy_w).sum(axis=-1)
    return d_gen, d_w, d_pg.astype(p_gen.dtype)


def scatter_add_rows(table, ids, rows):
    """table[ids[i]] += rows[i], accumulating duplicates. In place."""
    np.add.at(table, ids, rows)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, t):
    """One fused Adam update, in place on p, m, v. t is the 1-based step."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    denom = np.sqrt(v / bc2)
    denom += eps
    p -= (lr / bc1) * m / denom
