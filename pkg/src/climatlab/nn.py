"""Transformer encoder machinery: learnable CLS/positional embeddings,
multi-head self-attention, pre-norm encoder layers, attention-map extraction.

Encoders follow the pre-norm residual form: each layer computes
z = MSA(LN(h)) + h, then h' = MLP(LN(z)) + z; the block output is the final
layer's state, so zero-initialized output projections leave the embedded
input untouched. Attention maps come from the last layer's query/key states.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    """Static shape info for one encoder block."""

    depth: int
    width: int
    heads: int
    n_cls: int
    max_tokens: int  # longest admissible content sequence

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ShapeError(
                f"width {self.width} not divisible by {self.heads} heads"
            )

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


def xavier_uniform(rng, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_encoder_params(prefix, cfg: EncoderConfig, rng, dtype=np.float64):
    """Parameter table for one encoder. Names are stable hierarchical paths."""
    c = cfg.width
    params = {
        f"{prefix}.cls": Tensor(
            rng.normal(0.0, 0.02, size=(cfg.n_cls, c)).astype(dtype), requires_grad=True
        ),
        f"{prefix}.pos": Tensor(
            rng.normal(0.0, 0.02, size=(cfg.n_cls + cfg.max_tokens, c)).astype(dtype),
            requires_grad=True,
        ),
    }
    for l in range(cfg.depth):
        p = f"{prefix}.layer{l}"
        for w in ("wq", "wk", "wv", "wo"):
            params[f"{p}.{w}"] = Tensor(xavier_uniform(rng, c, c, dtype), requires_grad=True)
        params[f"{p}.ln1_g"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        params[f"{p}.ln1_b"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        params[f"{p}.ln2_g"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        params[f"{p}.ln2_b"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        params[f"{p}.fc1_w"] = Tensor(xavier_uniform(rng, c, 4 * c, dtype), requires_grad=True)
        params[f"{p}.fc1_b"] = Tensor(np.zeros(4 * c, dtype=dtype), requires_grad=True)
        params[f"{p}.fc2_w"] = Tensor(xavier_uniform(rng, 4 * c, c, dtype), requires_grad=True)
        params[f"{p}.fc2_b"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
    return params


def msa(x: Tensor, params, layer_prefix, heads, cache=None) -> Tensor:
    """Multi-head scaled dot-product self-attention over (..., n, C) tokens.

    Per head: Attention(Q, K, V) = Softmax(Q Kᵀ / sqrt(d_k)) V on column
    slices of the full-width Q/K/V; heads are concatenated and projected by
    the output matrix. If `cache` is a dict, the full-width Q/K values are
    stored there for attention-map extraction.
    """
    width = x.data.shape[-1]
    if width % heads != 0:
        raise ShapeError(f"token width {width} not divisible by {heads} heads")
    dk = width // heads
    scale = 1.0 / math.sqrt(dk)
    q = ad.matmul(x, params[f"{layer_prefix}.wq"])
    k = ad.matmul(x, params[f"{layer_prefix}.wk"])
    v = ad.matmul(x, params[f"{layer_prefix}.wv"])
    if cache is not None:
        cache["q"] = q.data.copy()
        cache["k"] = k.data.copy()
        cache["heads"] = heads
    outs = []
    for h in range(heads):
        cols = (Ellipsis, slice(h * dk, (h + 1) * dk))
        qh, kh, vh = q[cols], k[cols], v[cols]
        scores = ad.matmul(qh, ad.transpose(kh)) * scale
        outs.append(ad.matmul(ad.softmax(scores, axis=-1), vh))
    merged = outs[0] if heads == 1 else ad.concat(outs, axis=-1)
    return ad.matmul(merged, params[f"{layer_prefix}.wo"])


def encoder_forward(tokens: Tensor, params, cfg: EncoderConfig, prefix, cache=None) -> Tensor:
    """Embed CLS tokens and positions, then run the pre-norm encoder stack.

    tokens: (n, C) or (batch, n, C). Output keeps the batch layout with
    sequence length n_cls + n. `cache`, when given, receives the last layer's
    Q/K for attention extraction.
    """
    n = tokens.data.shape[-2]
    total = cfg.n_cls + n
    pos = params[f"{prefix}.pos"]
    if total > pos.data.shape[0]:
        raise ShapeError(
            f"sequence of {n} tokens exceeds positional table "
            f"({pos.data.shape[0]} rows, {cfg.n_cls} reserved for CLS)"
        )
    cls = params[f"{prefix}.cls"]
    if tokens.data.ndim == 3:
        batch = tokens.data.shape[0]
        cls = cls + Tensor(np.zeros((batch, cfg.n_cls, cfg.width), dtype=tokens.data.dtype))
    h = ad.concat([cls, tokens], axis=-2) + pos[:total]
    for l in range(cfg.depth):
        p = f"{prefix}.layer{l}"
        layer_cache = cache if (cache is not None and l == cfg.depth - 1) else None
        z = msa(ad.layernorm(h, params[f"{p}.ln1_g"], params[f"{p}.ln1_b"]),
                params, p, cfg.heads, cache=layer_cache) + h
        inner = ad.matmul(ad.layernorm(z, params[f"{p}.ln2_g"], params[f"{p}.ln2_b"]),
                          params[f"{p}.fc1_w"]) + params[f"{p}.fc1_b"]
        h = ad.matmul(ad.gelu(inner), params[f"{p}.fc2_w"]) + params[f"{p}.fc2_b"] + z
    return h


def extract_attention(cache) -> np.ndarray:
    """Row-stochastic attention map Softmax(Q Kᵀ / sqrt(d_k)) from a cached
    forward pass, averaged over heads. Returns (n, n) or (batch, n, n)."""
    if not cache or "q" not in cache:
        raise ValueError("no cached forward pass to extract attention from")
    q, k, heads = cache["q"], cache["k"], cache["heads"]
    dk = q.shape[-1] // heads
    maps = []
    for h in range(heads):
        qh = q[..., h * dk:(h + 1) * dk]
        kh = k[..., h * dk:(h + 1) * dk]
        scores = np.matmul(qh, np.swapaxes(kh, -1, -2)) / math.sqrt(dk)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        maps.append(e / e.sum(axis=-1, keepdims=True))
    return np.mean(maps, axis=0)
