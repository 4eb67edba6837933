"""Residual cross-attention block refining class text embeddings per image.

Class rows act as queries against an image's token matrix (keys/values),
pre-LN style, then a per-row feed-forward with GELU. Both branches carry
inverted dropout. All math is float64 numpy with handwritten gradients;
only the block's parameters are trainable, the inputs stay frozen.

Output projection and the second feed-forward layer start at zero, so a
freshly initialised block is exactly the identity on the class rows in
every dropout mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import erf

from .errors import (
    DimMismatch,
    InvalidEpsilon,
    InvalidSpec,
    NonFiniteInput,
    ShapeMismatch,
    StaleCache,
)

LN_EPS = 1e-5

KV_POLICIES = ("all", "patches-only", "cls-only")

# serialization / flattening order, fixed
PARAM_FIELDS = (
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "ln1_g",
    "ln1_b",
    "ln2_g",
    "ln2_b",
    "ff_w1",
    "ff_b1",
    "ff_w2",
    "ff_b2",
)


@dataclass(frozen=True)
class BlockConfig:
    dim: int
    heads: int = 8
    ff_dim: int | None = None  # None means 4 * dim
    dropout_rate: float = 0.2
    kv_policy: str = "all"  # which token rows serve as keys/values

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidSpec(f"dim must be positive, got {self.dim}")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise DimMismatch(
                f"heads must divide dim, got dim={self.dim} heads={self.heads}"
            )
        if self.ff_dim is not None and self.ff_dim < 1:
            raise InvalidSpec(f"ff_dim must be positive, got {self.ff_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidSpec(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.kv_policy not in KV_POLICIES:
            raise InvalidSpec(f"kv_policy must be one of {KV_POLICIES}, got {self.kv_policy!r}")

    @property
    def ff_width(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.dim


@dataclass(eq=False)
class BlockParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    ff_w1: np.ndarray
    ff_b1: np.ndarray
    ff_w2: np.ndarray
    ff_b2: np.ndarray


def param_shapes(config: BlockConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.dim, config.ff_width
    return {
        "w_q": (d, d),
        "w_k": (d, d),
        "w_v": (d, d),
        "w_o": (d, d),
        "ln1_g": (d,),
        "ln1_b": (d,),
        "ln2_g": (d,),
        "ln2_b": (d,),
        "ff_w1": (d, f),
        "ff_b1": (f,),
        "ff_w2": (f, d),
        "ff_b2": (d,),
    }


def init_params(config: BlockConfig, seed: int = 0) -> BlockParams:
    """Gaussian(0, 1/sqrt(fan_in)) projections; zero output layers; identity norms.

    The zero output projection and zero second feed-forward layer make the
    whole block the identity at initialisation.
    """
    rng = np.random.default_rng(seed)
    d, f = config.dim, config.ff_width
    scale = 1.0 / math.sqrt(d)
    return BlockParams(
        w_q=rng.normal(0.0, scale, size=(d, d)),
        w_k=rng.normal(0.0, scale, size=(d, d)),
        w_v=rng.normal(0.0, scale, size=(d, d)),
        w_o=np.zeros((d, d)),
        ln1_g=np.ones(d),
        ln1_b=np.zeros(d),
        ln2_g=np.ones(d),
        ln2_b=np.zeros(d),
        ff_w1=rng.normal(0.0, scale, size=(d, f)),
        ff_b1=np.zeros(f),
        ff_w2=np.zeros((f, d)),
        ff_b2=np.zeros(d),
    )


def zeros_like_params(params: BlockParams) -> BlockParams:
    return BlockParams(**{f.name: np.zeros_like(getattr(params, f.name)) for f in fields(params)})


def params_to_vector(params: BlockParams) -> np.ndarray:
    return np.concatenate([np.ravel(getattr(params, name)) for name in PARAM_FIELDS])


def vector_to_params(vec: np.ndarray, config: BlockConfig) -> BlockParams:
    shapes = param_shapes(config)
    total = sum(int(np.prod(shape)) for shape in shapes.values())
    if vec.size != total:
        raise ShapeMismatch(f"parameter vector has {vec.size} entries, expected {total}")
    out = {}
    pos = 0
    for name in PARAM_FIELDS:
        shape = shapes[name]
        n = int(np.prod(shape))
        out[name] = vec[pos : pos + n].reshape(shape).copy()
        pos += n
    return BlockParams(**out)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)  # biased, matches the backward
    invstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * invstd
    return xhat * gain + bias, xhat, invstd


def _layer_norm_input_grad(dy, xhat, invstd, gain):
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return invstd * (dxhat - m1 - xhat * m2)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * phi


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)  # (h, n, dh)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def forward(
    params: BlockParams,
    class_rows: np.ndarray,
    tokens: np.ndarray,
    config: BlockConfig,
    dropout_rng: np.random.Generator | None = None,
):
    """Refine (k, d) class rows against one image's (T, d) tokens.

    Dropout is active iff `dropout_rng` is given (so evaluation can sample
    stochastic passes too). Returns (refined_rows, cache); the cache feeds
    `backward`.
    """
    w = np.asarray(class_rows, dtype=np.float64)
    tok = np.asarray(tokens, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != config.dim:
        raise ShapeMismatch(f"class rows {w.shape} incompatible with dim {config.dim}")
    if tok.ndim != 2 or tok.shape[1] != config.dim:
        raise ShapeMismatch(f"tokens {tok.shape} incompatible with dim {config.dim}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(tok))):
        raise NonFiniteInput("non-finite values in class rows or tokens")

    if config.kv_policy == "patches-only":
        tok = tok[1:]
        if tok.shape[0] == 0:
            raise ShapeMismatch("patches-only needs at least 2 token rows")
    elif config.kv_policy == "cls-only":
        tok = tok[:1]
    if tok.shape[0] == 0:
        raise ShapeMismatch("need at least one key/value token")

    d, h = config.dim, config.heads
    dh = d // h

    y1, xhat1, invstd1 = _layer_norm(w, params.ln1_g, params.ln1_b)
    q = _split_heads(y1 @ params.w_q, h)  # (h, k, dh)
    key = _split_heads(tok @ params.w_k, h)  # (h, T, dh)
    val = _split_heads(tok @ params.w_v, h)

    scores = q @ key.transpose(0, 2, 1) / math.sqrt(dh)  # (h, k, T)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)

    ctx = _merge_heads(attn @ val)  # (k, d)
    mha = ctx @ params.w_o

    keep = 1.0 - config.dropout_rate
    if dropout_rng is not None:
        mask1 = (dropout_rng.random(mha.shape) >= config.dropout_rate) / keep
        mha = mha * mask1
    else:
        mask1 = None
    a = w + mha

    y2, xhat2, invstd2 = _layer_norm(a, params.ln2_g, params.ln2_b)
    pre = y2 @ params.ff_w1 + params.ff_b1
    act = _gelu(pre)
    ff = act @ params.ff_w2 + params.ff_b2
    if dropout_rng is not None:
        mask2 = (dropout_rng.random(ff.shape) >= config.dropout_rate) / keep
        ff = ff * mask2
    else:
        mask2 = None
    out = a + ff

    cache = {
        "w": w,
        "tok": tok,
        "y1": y1,
        "xhat1": xhat1,
        "invstd1": invstd1,
        "q": q,
        "key": key,
        "val": val,
        "attn": attn,
        "ctx": ctx,
        "mask1": mask1,
        "y2": y2,
        "xhat2": xhat2,
        "invstd2": invstd2,
        "pre": pre,
        "act": act,
        "mask2": mask2,
    }
    return out, cache


def backward(
    params: BlockParams, cache: dict, d_out: np.ndarray, config: BlockConfig
) -> BlockParams:
    """Exact parameter gradients for an upstream (k, d) gradient on the output."""
    d, h = config.dim, config.heads
    dh = d // h
    d_out = np.asarray(d_out, dtype=np.float64)
    # cache must come from a forward pass with the same shapes and head count
    if cache["w"].shape[1] != d or cache["q"].shape[0] != h:
        raise StaleCache("cache does not match the given config")
    if d_out.shape != cache["w"].shape:
        raise StaleCache(f"upstream gradient {d_out.shape} vs cached rows {cache['w'].shape}")

    # feed-forward branch
    d_ff = d_out if cache["mask2"] is None else d_out * cache["mask2"]
    g_ff_w2 = cache["act"].T @ d_ff
    g_ff_b2 = d_ff.sum(axis=0)
    d_act = d_ff @ params.ff_w2.T
    d_pre = d_act * _gelu_grad(cache["pre"])
    g_ff_w1 = cache["y2"].T @ d_pre
    g_ff_b1 = d_pre.sum(axis=0)
    d_y2 = d_pre @ params.ff_w1.T

    g_ln2_g = (d_y2 * cache["xhat2"]).sum(axis=0)
    g_ln2_b = d_y2.sum(axis=0)
    d_a = d_out + _layer_norm_input_grad(d_y2, cache["xhat2"], cache["invstd2"], params.ln2_g)

    # attention branch
    d_mha = d_a if cache["mask1"] is None else d_a * cache["mask1"]
    g_w_o = cache["ctx"].T @ d_mha
    d_ctx = _split_heads(d_mha @ params.w_o.T, h)  # (h, k, dh)

    attn, q, key, val = cache["attn"], cache["q"], cache["key"], cache["val"]
    d_attn = d_ctx @ val.transpose(0, 2, 1)  # (h, k, T)
    d_val = attn.transpose(0, 2, 1) @ d_ctx  # (h, T, dh)
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    d_scores /= math.sqrt(dh)
    d_q = d_scores @ key  # (h, k, dh)
    d_key = d_scores.transpose(0, 2, 1) @ q  # (h, T, dh)

    g_w_q = cache["y1"].T @ _merge_heads(d_q)
    g_w_k = cache["tok"].T @ _merge_heads(d_key)
    g_w_v = cache["tok"].T @ _merge_heads(d_val)

    d_y1 = _merge_heads(d_q) @ params.w_q.T
    g_ln1_g = (d_y1 * cache["xhat1"]).sum(axis=0)
    g_ln1_b = d_y1.sum(axis=0)

    return BlockParams(
        w_q=g_w_q,
        w_k=g_w_k,
        w_v=g_w_v,
        w_o=g_w_o,
        ln1_g=g_ln1_g,
        ln1_b=g_ln1_b,
        ln2_g=g_ln2_g,
        ln2_b=g_ln2_b,
        ff_w1=g_ff_w1,
        ff_b1=g_ff_b1,
        ff_w2=g_ff_w2,
        ff_b2=g_ff_b2,
    )


def finite_diff_check(
    params: BlockParams,
    config: BlockConfig,
    class_rows: np.ndarray,
    tokens: np.ndarray,
    seed: int = 0,
    epsilon: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Uses the scalar probe loss sum(output * R) with a fixed random R, which
    exercises the full backward pass. Dropout is off so the loss is a
    deterministic function of the parameters.
    """
    if not (epsilon > 0.0):
        raise InvalidEpsilon(f"step size must be positive, got {epsilon}")
    rng = np.random.default_rng(seed)
    out0, cache = forward(params, class_rows, tokens, config)
    # unit-norm direction keeps the error metric independent of k*d
    probe = rng.normal(size=out0.shape)
    probe /= np.linalg.norm(probe)

    analytic = params_to_vector(backward(params, cache, probe, config))

    theta = params_to_vector(params)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + epsilon
        hi, _ = forward(vector_to_params(bumped, config), class_rows, tokens, config)
        bumped[i] = theta[i] - epsilon
        lo, _ = forward(vector_to_params(bumped, config), class_rows, tokens, config)
        numeric[i] = ((hi * probe).sum() - (lo * probe).sum()) / (2.0 * epsilon)

    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
