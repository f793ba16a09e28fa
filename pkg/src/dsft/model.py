"""Small bidirectional transformer denoiser in plain NumPy.

Parameters live in a flat name -> array map so they can be checkpointed,
perturbed coordinate-wise for finite-difference checks, and updated by a
dtype-agnostic optimizer. forward/backward implement the exact
reverse-mode gradients of the architecture; no framework involved.

Architecture: learned token + position embeddings, pre-norm residual
blocks (multi-head attention with no causal mask, then a GELU MLP), a
final layer norm and a linear vocabulary projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .rng import substream

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 4
    heads: int = 4
    dim: int = 128
    ff_dim: int = 512
    max_len: int = 256

    def __post_init__(self):
        if self.vocab_size < 6:
            raise ValueError("vocab_size must cover the special tokens")
        if self.layers < 1 or self.heads < 1 or self.dim < 1 or self.ff_dim < 1:
            raise ValueError("layers, heads, dim and ff_dim must be positive")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_json_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "layers": self.layers,
            "heads": self.heads,
            "dim": self.dim,
            "ff_dim": self.ff_dim,
            "max_len": self.max_len,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in obj.items()})


Params = dict[str, np.ndarray]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Flat tensor layout, in canonical (checkpoint) order."""
    d, ff, v = config.dim, config.ff_dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.layers):
        p = f"layers.{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.bq"] = (d,)
        # No key bias: softmax ignores per-query constant score shifts,
        # so a key bias would carry an identically-zero gradient.
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.bv"] = (d,)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "attn.bo"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "ff.w1"] = (d, ff)
        shapes[p + "ff.b1"] = (ff,)
        shapes[p + "ff.w2"] = (ff, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["out.w"] = (d, v)
    shapes["out.b"] = (v,)
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config: ModelConfig, seed: int) -> Params:
    """Seed-deterministic init: scaled normal weights, zero biases,
    identity layer norms."""
    rng = substream(seed, "init")
    params: Params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("tok_emb", "pos_emb"):
            arr = rng.normal(0.0, 0.02, size=shape)
        elif leaf == "g":
            arr = np.ones(shape)
        elif leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2") or name == "out.b":
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
        params[name] = arr.astype(np.float32)
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def check_finite(params: Params) -> None:
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in parameter {name}")


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)

def _layer_norm_backward(dy, cache, g):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))

def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _softmax(z: np.ndarray) -> np.ndarray:
    zs = z - z.max(axis=-1, keepdims=True)
    e = np.exp(zs)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    L, d = x.shape
    return x.reshape(L, heads, d // heads).transpose(1, 0, 2)

def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, L, hd = x.shape
    return x.transpose(1, 0, 2).reshape(L, h * hd)


def forward_with_cache(params: Params, config: ModelConfig, ids) -> tuple[np.ndarray, dict]:
    """Run the denoiser on one sequence, keeping every intermediate needed
    for the backward pass. Returns (logits[L, V], cache)."""
    ids = np.asarray(ids, dtype=np.int64)
    L = ids.shape[0]
    if L > config.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len {config.max_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError("token id out of vocabulary range")

    h = params["tok_emb"][ids] + params["pos_emb"][:L]
    cache: dict = {"ids": ids, "h0_dtype": h.dtype, "blocks": []}
    scale = 1.0 / math.sqrt(config.head_dim)

    for i in range(config.layers):
        p = f"layers.{i}."
        blk: dict = {"h_in": h}
        a, blk["ln1"] = _layer_norm(h, params[p + "ln1.g"], params[p + "ln1.b"])
        blk["a"] = a
        q = _split_heads(a @ params[p + "attn.wq"] + params[p + "attn.bq"], config.heads)
        k = _split_heads(a @ params[p + "attn.wk"], config.heads)
        v = _split_heads(a @ params[p + "attn.wv"] + params[p + "attn.bv"], config.heads)
        # Full bidirectional attention: scores over every key position.
        att = _softmax(q @ k.transpose(0, 2, 1) * scale)
        ctx = _merge_heads(att @ v)
        blk.update(q=q, k=k, v=v, att=att, ctx=ctx)
        h = h + ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]

        blk["h_mid"] = h
        f, blk["ln2"] = _layer_norm(h, params[p + "ln2.g"], params[p + "ln2.b"])
        z1 = f @ params[p + "ff.w1"] + params[p + "ff.b1"]
        g1 = _gelu(z1)
        blk.update(f=f, z1=z1, g1=g1)
        h = h + g1 @ params[p + "ff.w2"] + params[p + "ff.b2"]
        cache["blocks"].append(blk)

    hf, cache["final_ln"] = _layer_norm(h, params["final_ln.g"], params["final_ln.b"])
    cache["hf"] = hf
    logits = hf @ params["out.w"] + params["out.b"]
    return logits, cache


def forward(params: Params, config: ModelConfig, ids) -> np.ndarray:
    logits, _ = forward_with_cache(params, config, ids)
    return logits


def backward(params: Params, config: ModelConfig, cache: dict, dlogits: np.ndarray) -> Params:
    """Reverse-mode gradients of every parameter for one sequence, given
    the gradient of the scalar loss with respect to the logits."""
    grads = zeros_like_params(params)
    ids = cache["ids"]
    L = ids.shape[0]
    scale = 1.0 / math.sqrt(config.head_dim)

    hf = cache["hf"]
    grads["out.w"] += hf.T @ dlogits
    grads["out.b"] += dlogits.sum(axis=0)
    dh = dlogits @ params["out.w"].T
    dh, dg, db = _layer_norm_backward(dh, cache["final_ln"], params["final_ln.g"])
    grads["final_ln.g"] += dg
    grads["final_ln.b"] += db

    for i in reversed(range(config.layers)):
        p = f"layers.{i}."
        blk = cache["blocks"][i]

        # MLP sub-block: h_out = h_mid + gelu(LN(h_mid) @ w1 + b1) @ w2 + b2
        dg1 = dh @ params[p + "ff.w2"].T
        grads[p + "ff.w2"] += blk["g1"].T @ dh
        grads[p + "ff.b2"] += dh.sum(axis=0)
        dz1 = dg1 * _gelu_grad(blk["z1"])
        grads[p + "ff.w1"] += blk["f"].T @ dz1
        grads[p + "ff.b1"] += dz1.sum(axis=0)
        df = dz1 @ params[p + "ff.w1"].T
        dh_mid, dg, db = _layer_norm_backward(df, blk["ln2"], params[p + "ln2.g"])
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dh = dh + dh_mid  # residual

        # Attention sub-block: h_mid = h_in + merge(att @ v) @ wo + bo
        dctx = dh @ params[p + "attn.wo"].T
        grads[p + "attn.wo"] += blk["ctx"].T @ dh
        grads[p + "attn.bo"] += dh.sum(axis=0)
        dctx = _split_heads(dctx, config.heads)
        datt = dctx @ blk["v"].transpose(0, 2, 1)
        dv = blk["att"].transpose(0, 2, 1) @ dctx
        att = blk["att"]
        dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
        dq = dscores @ blk["k"] * scale
        dk = dscores.transpose(0, 2, 1) @ blk["q"] * scale
        da = np.zeros_like(blk["a"])
        for dx, w_name, b_name in (
            (dq, "attn.wq", "attn.bq"),
            (dk, "attn.wk", None),
            (dv, "attn.wv", "attn.bv"),
        ):
            dx2 = _merge_heads(dx)
            grads[p + w_name] += blk["a"].T @ dx2
            if b_name is not None:
                grads[p + b_name] += dx2.sum(axis=0)
            da += dx2 @ params[p + w_name].T
        dh_in, dg, db = _layer_norm_backward(da, blk["ln1"], params[p + "ln1.g"])
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dh = dh + dh_in  # residual

    np.add.at(grads["tok_emb"], ids, dh)
    grads["pos_emb"][:L] += dh
    return grads
