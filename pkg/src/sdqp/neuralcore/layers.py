"""Forward passes for the two score-model architectures.

The no-context scorer is dropout -> linear(in, hidden) -> relu -> linear(hidden, 1).
The context architecture runs the embedding sequence through a post-norm
transformer encoder layer (self-attention, residual+norm, position-wise
feed-forward, residual+norm) without positional encodings, so it is
permutation-equivariant over the sequence.
"""
from __future__ import annotations

import numpy as np

from .params import ParamSet, xavier_uniform
from .tensor import (
    Tensor,
    add,
    dropout,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    sum_axis,
    transpose,
)

LAYER_NORM_EPS = 1e-5

# -1e9 after the 1/sqrt(dh) scaling still dominates any finite logit
_MASK_FILL = -1e9


def init_mlp(params: ParamSet, rng: np.random.Generator, in_dim: int = 768, hidden: int = 256,
             prefix: str = "mlp") -> None:
    params.add(f"{prefix}.w1", xavier_uniform(rng, in_dim, hidden, dtype=params.dtype))
    params.add(f"{prefix}.b1", np.zeros(hidden, dtype=params.dtype))
    params.add(f"{prefix}.w2", xavier_uniform(rng, hidden, 1, dtype=params.dtype))
    params.add(f"{prefix}.b2", np.zeros(1, dtype=params.dtype))


def mlp_forward(x: Tensor, params: ParamSet, dropout_rate: float, training: bool,
                prefix: str = "mlp") -> Tensor:
    """Score a (B, in_dim) batch -> (B,), or a single (in_dim,) vector -> scalar.

    Dropout is applied to the input embedding, as the training recipe specifies.
    """
    single = x.data.ndim == 1
    if single:
        x = reshape(x, (1, x.data.shape[0]))
    h = dropout(x, dropout_rate, params.rng, training)
    h = relu(add(matmul(h, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    out = add(matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    out = reshape(out, (out.data.shape[0],))
    if single:
        out = reshape(out, ())
    return out


def init_encoder_layer(params: ParamSet, rng: np.random.Generator, d: int = 768,
                       ff_hidden: int = 1024, prefix: str = "enc0") -> None:
    for name in ("wq", "wk", "wv", "wo"):
        params.add(f"{prefix}.{name}", xavier_uniform(rng, d, d, dtype=params.dtype))
    for name in ("bq", "bk", "bv", "bo"):
        params.add(f"{prefix}.{name}", np.zeros(d, dtype=params.dtype))
    params.add(f"{prefix}.ln1.g", np.ones(d, dtype=params.dtype))
    params.add(f"{prefix}.ln1.b", np.zeros(d, dtype=params.dtype))
    params.add(f"{prefix}.ff.w1", xavier_uniform(rng, d, ff_hidden, dtype=params.dtype))
    params.add(f"{prefix}.ff.b1", np.zeros(ff_hidden, dtype=params.dtype))
    params.add(f"{prefix}.ff.w2", xavier_uniform(rng, ff_hidden, d, dtype=params.dtype))
    params.add(f"{prefix}.ff.b2", np.zeros(d, dtype=params.dtype))
    params.add(f"{prefix}.ln2.g", np.ones(d, dtype=params.dtype))
    params.add(f"{prefix}.ln2.b", np.zeros(d, dtype=params.dtype))


def encoder_layer_forward(x: Tensor, params: ParamSet, heads: int, dropout_rate: float,
                          training: bool, prefix: str = "enc0", key_mask: np.ndarray = None,
                          collect: dict = None) -> Tensor:
    """Post-norm encoder layer on (B, L, d) or a single (L, d) sequence.

    key_mask is a (B, L) boolean array marking valid positions; padded keys are
    excluded from every attention row. Dropout hits the attention weights and
    the feed-forward output when training.
    """
    single = x.data.ndim == 2
    if single:
        x = reshape(x, (1,) + x.data.shape)
    B, L, d = x.data.shape
    if L == 0:
        raise ValueError("encoder layer requires a nonempty sequence")
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads

    def proj(w, b):
        y = add(matmul(x, params[f"{prefix}.{w}"]), params[f"{prefix}.{b}"])
        y = reshape(y, (B, L, heads, dh))
        return transpose(y, (0, 2, 1, 3))  # (B, H, L, dh)

    q = proj("wq", "bq")
    k = proj("wk", "bk")
    v = proj("wv", "bv")

    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if key_mask is not None:
        additive = np.where(key_mask, 0.0, _MASK_FILL).astype(x.data.dtype)
        scores = add(scores, Tensor(additive[:, None, None, :]))
    attn = softmax(scores, axis=-1)
    if collect is not None:
        collect["attention"] = attn
    attn = dropout(attn, dropout_rate, params.rng, training)

    ctx = matmul(attn, v)  # (B, H, L, dh)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    ctx = add(matmul(ctx, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])

    x1 = layer_norm(add(x, ctx), params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], LAYER_NORM_EPS)

    ff = relu(add(matmul(x1, params[f"{prefix}.ff.w1"]), params[f"{prefix}.ff.b1"]))
    ff = add(matmul(ff, params[f"{prefix}.ff.w2"]), params[f"{prefix}.ff.b2"])
    ff = dropout(ff, dropout_rate, params.rng, training)

    out = layer_norm(add(x1, ff), params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"], LAYER_NORM_EPS)
    if single:
        out = reshape(out, (L, d))
    return out


def pad_sequences(seqs: list, dtype=np.float32):
    """Stack variable-length (L_i, d) arrays into (B, Lmax, d) plus a validity mask."""
    if not seqs:
        raise ValueError("no sequences to pad")
    d = seqs[0].shape[1]
    lmax = max(s.shape[0] for s in seqs)
    batch = np.zeros((len(seqs), lmax, d), dtype=dtype)
    mask = np.zeros((len(seqs), lmax), dtype=bool)
    for i, s in enumerate(seqs):
        batch[i, : s.shape[0]] = s
        mask[i, : s.shape[0]] = True
    return batch, mask


def masked_mean_pool(h: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over valid positions of (B, L, d) -> (B, d)."""
    counts = mask.sum(axis=1, keepdims=True)
    weights = (mask / counts).astype(h.data.dtype)[:, :, None]
    return sum_axis(mul(h, Tensor(weights)), axis=1)
