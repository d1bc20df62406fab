"""Compact transformer pair classifier with exact analytic gradients.

Pre-LN encoder blocks (multi-head self-attention + GELU feed-forward, learned
token and position embeddings, final layer norm) and a 2-way linear head read
off the position-0 hidden state. Everything is plain float64 numpy; backward
passes are hand-derived and checked against finite differences in the tests.

Parameters live in a flat name -> array dict so the optimizer, checkpointing
and gradient checks can treat all tensors uniformly.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .preprocess import TokenSequence

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "DropoutMask",
    "Prediction",
    "attention",
    "forward",
    "forward_batch",
    "backward",
    "backward_batch",
    "predict_batch",
    "softmax",
    "init_params",
    "zero_grads",
    "save_checkpoint",
    "load_checkpoint",
]

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
_LN_EPS = 1e-5
_CKPT_FORMAT = "dedup-al-ckpt-1"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    max_len: int = 128
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def validate_finite(self) -> None:
        for name, arr in self.tensors.items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in parameter {name!r}")


@dataclass(frozen=True)
class DropoutMask:
    """Seed-addressable dropout mask source.

    Masks materialize lazily per tensor shape, drawn in a fixed order during
    the forward pass, so the same (seed, pass_index) always reproduces the
    same subnetwork for a given batch shape.
    """

    rate: float
    seed: int
    pass_index: int

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed % 2**63, self.pass_index]))


class _MaskDraw:
    """Sequential mask drawer for one forward pass; None means no dropout."""

    def __init__(self, mask: DropoutMask | None):
        self.keep = 1.0 - mask.rate if mask is not None else 1.0
        self._rng = mask.rng() if mask is not None and mask.rate > 0.0 else None
        self.drawn: list[np.ndarray] = []

    def next(self, shape) -> np.ndarray | None:
        if self._rng is None:
            return None
        mask = (self._rng.random(shape) < self.keep) / self.keep
        self.drawn.append(mask)
        return mask


@dataclass(frozen=True)
class Prediction:
    pair_id: str
    logits: np.ndarray  # (2,)

    @property
    def p(self) -> float:
        """Probability the pair is a duplicate (class 1)."""
        return float(softmax(self.logits)[1])

    @property
    def confidence(self) -> float:
        return max(self.p, 1.0 - self.p)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _gelu_parts(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    return 0.5 * x * (1.0 + t), t


def _gelu(x: np.ndarray) -> np.ndarray:
    return _gelu_parts(x)[0]


def _gelu_grad(x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    # t is tanh(c*(x + a*x^3)) when the forward pass already computed it.
    x2 = x * x
    if t is None:
        t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)


# ---------------------------------------------------------------------------
# Initialization and checkpoints


def _layer_names(i: int) -> dict[str, str]:
    base = f"layers.{i}"
    return {
        "ln1_g": f"{base}.ln1.g", "ln1_b": f"{base}.ln1.b",
        "wq": f"{base}.attn.wq", "bq": f"{base}.attn.bq",
        "wk": f"{base}.attn.wk", "bk": f"{base}.attn.bk",
        "wv": f"{base}.attn.wv", "bv": f"{base}.attn.bv",
        "wo": f"{base}.attn.wo", "bo": f"{base}.attn.bo",
        "ln2_g": f"{base}.ln2.g", "ln2_b": f"{base}.ln2.b",
        "w1": f"{base}.ff.w1", "b1": f"{base}.ff.b1",
        "w2": f"{base}.ff.w2", "b2": f"{base}.ff.b2",
    }


def init_params(config: EncoderConfig) -> EncoderParams:
    """Scaled-uniform (+-1/sqrt(fan_in)) init, seed-controlled, all float64."""
    rng = np.random.default_rng(config.seed)
    d, f = config.d_model, config.d_ff

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    t: dict[str, np.ndarray] = {
        "tok_emb": uniform((config.vocab_size, d), d),
        "pos_emb": uniform((config.max_len, d), d),
    }
    for i in range(config.n_layers):
        n = _layer_names(i)
        t[n["ln1_g"]] = np.ones(d)
        t[n["ln1_b"]] = np.zeros(d)
        for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
            t[n[w]] = uniform((d, d), d)
            t[n[b]] = np.zeros(d)
        t[n["ln2_g"]] = np.ones(d)
        t[n["ln2_b"]] = np.zeros(d)
        t[n["w1"]] = uniform((d, f), d)
        t[n["b1"]] = np.zeros(f)
        t[n["w2"]] = uniform((f, d), f)
        t[n["b2"]] = np.zeros(d)
    t["ln_f.g"] = np.ones(d)
    t["ln_f.b"] = np.zeros(d)
    t["head.w"] = uniform((2, d), d)
    t["head.b"] = np.zeros(2)
    return EncoderParams(config=config, tensors=t)


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.tensors.items()}


def save_checkpoint(params: EncoderParams, path) -> None:
    meta = {"format": _CKPT_FORMAT, "config": params.config.__dict__}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **params.tensors)


def load_checkpoint(path) -> EncoderParams:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != _CKPT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format {meta.get('format')!r}")
        config = EncoderConfig(**meta["config"])
        tensors = {name: data[name] for name in data.files if name != "__meta__"}
    params = EncoderParams(config=config, tensors=tensors)
    params.validate_finite()
    return params


def checkpoint_digest(params: EncoderParams) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(json.dumps(params.config.__dict__, sort_keys=True).encode())
    for name in sorted(params.tensors):
        h.update(name.encode())
        h.update(params.tensors[name].tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Core ops


def attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Scaled dot-product attention; masked key positions get exactly zero weight."""
    for name, m in (("Q", Q), ("K", K), ("V", V)):
        if not np.all(np.isfinite(m)):
            raise FloatingPointError(f"non-finite values in {name}")
    d_k = Q.shape[-1]
    scores = Q @ np.swapaxes(K, -1, -2) / math.sqrt(d_k)
    if mask is not None:
        scores = np.where(np.asarray(mask, dtype=bool)[..., None, :], scores, -np.inf)
    weights = softmax(scores, axis=-1)
    return weights @ V


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv_std
    return xhat * g + b, xhat, inv_std


def _layernorm_backward(dout, xhat, inv_std, g):
    dg = np.einsum("bld,bld->d", dout, xhat)
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    dxhat = dout * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, l, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dk)


def forward_batch(
    params: EncoderParams,
    ids: np.ndarray,
    attn_mask: np.ndarray,
    dropout: DropoutMask | None = None,
    want_cache: bool = False,
):
    """Batched forward pass.

    ids: (B, L) int64, attn_mask: (B, L) bool. Returns logits (B, 2) and,
    when requested, the cache backward_batch needs.
    """
    cfg = params.config
    t = params.tensors
    B, L = ids.shape
    if L > cfg.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    if ids.max(initial=0) >= cfg.vocab_size:
        raise ValueError("token id out of vocabulary range")

    draw = _MaskDraw(dropout)
    key_mask = np.asarray(attn_mask, dtype=bool)

    h = t["tok_emb"][ids] + t["pos_emb"][:L]
    m_emb = draw.next(h.shape)
    if m_emb is not None:
        h = h * m_emb

    layers_cache = []
    for i in range(cfg.n_layers):
        n = _layer_names(i)
        x_in = h
        a_in, xhat1, inv1 = _layernorm(x_in, t[n["ln1_g"]], t[n["ln1_b"]])
        q = _split_heads(a_in @ t[n["wq"]] + t[n["bq"]], cfg.n_heads)
        k = _split_heads(a_in @ t[n["wk"]] + t[n["bk"]], cfg.n_heads)
        v = _split_heads(a_in @ t[n["wv"]] + t[n["bv"]], cfg.n_heads)
        scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(cfg.d_k)
        scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
        A = softmax(scores, axis=-1)
        ctx = _merge_heads(A @ v)
        attn_out = ctx @ t[n["wo"]] + t[n["bo"]]
        m_attn = draw.next(attn_out.shape)
        if m_attn is not None:
            attn_out = attn_out * m_attn
        x_mid = x_in + attn_out

        f_in, xhat2, inv2 = _layernorm(x_mid, t[n["ln2_g"]], t[n["ln2_b"]])
        z1 = f_in @ t[n["w1"]] + t[n["b1"]]
        h1, t1 = _gelu_parts(z1)
        ff_out = h1 @ t[n["w2"]] + t[n["b2"]]
        m_ff = draw.next(ff_out.shape)
        if m_ff is not None:
            ff_out = ff_out * m_ff
        h = x_mid + ff_out

        if want_cache:
            layers_cache.append(
                dict(a_in=a_in, xhat1=xhat1, inv1=inv1, q=q, k=k, v=v, A=A, ctx=ctx,
                     m_attn=m_attn, x_mid=x_mid, f_in=f_in, xhat2=xhat2, inv2=inv2,
                     z1=z1, h1=h1, t1=t1, m_ff=m_ff)
            )

    out, xhat_f, inv_f = _layernorm(h, t["ln_f.g"], t["ln_f.b"])
    r = out[:, 0, :]
    logits = r @ t["head.w"].T + t["head.b"]

    if not want_cache:
        return logits, None
    cache = dict(ids=ids, key_mask=key_mask, m_emb=m_emb, layers=layers_cache,
                 xhat_f=xhat_f, inv_f=inv_f, r=r, L=L)
    return logits, cache


def backward_batch(params: EncoderParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given dloss/dlogits."""
    cfg = params.config
    t = params.tensors
    grads = zero_grads(params)
    ids, key_mask, L = cache["ids"], cache["key_mask"], cache["L"]
    scale = 1.0 / math.sqrt(cfg.d_k)

    grads["head.w"] += dlogits.T @ cache["r"]
    grads["head.b"] += dlogits.sum(axis=0)
    dr = dlogits @ t["head.w"]

    dout = np.zeros_like(cache["xhat_f"])
    dout[:, 0, :] = dr
    dh, dg, db = _layernorm_backward(dout, cache["xhat_f"], cache["inv_f"], t["ln_f.g"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db

    for i in reversed(range(cfg.n_layers)):
        n = _layer_names(i)
        c = cache["layers"][i]

        dff_out = dh if c["m_ff"] is None else dh * c["m_ff"]
        grads[n["w2"]] += np.einsum("blf,bld->fd", c["h1"], dff_out)
        grads[n["b2"]] += dff_out.reshape(-1, dff_out.shape[-1]).sum(axis=0)
        dh1 = dff_out @ t[n["w2"]].T
        dz1 = dh1 * _gelu_grad(c["z1"], c["t1"])
        grads[n["w1"]] += np.einsum("bld,blf->df", c["f_in"], dz1)
        grads[n["b1"]] += dz1.reshape(-1, dz1.shape[-1]).sum(axis=0)
        df_in = dz1 @ t[n["w1"]].T
        dx_mid_ln, dg2, db2 = _layernorm_backward(df_in, c["xhat2"], c["inv2"], t[n["ln2_g"]])
        grads[n["ln2_g"]] += dg2
        grads[n["ln2_b"]] += db2
        dx_mid = dh + dx_mid_ln

        dattn_out = dx_mid if c["m_attn"] is None else dx_mid * c["m_attn"]
        grads[n["wo"]] += np.einsum("bld,ble->de", c["ctx"], dattn_out)
        grads[n["bo"]] += dattn_out.reshape(-1, dattn_out.shape[-1]).sum(axis=0)
        dctx = _split_heads(dattn_out @ t[n["wo"]].T, cfg.n_heads)

        dA = dctx @ np.swapaxes(c["v"], -1, -2)
        dv = np.swapaxes(c["A"], -1, -2) @ dctx
        dS = (dA - np.sum(dA * c["A"], axis=-1, keepdims=True)) * c["A"]
        dq = dS @ c["k"] * scale
        dk = np.swapaxes(dS, -1, -2) @ c["q"] * scale

        da_in = np.zeros_like(c["a_in"])
        for dmat, w, b in ((dq, "wq", "bq"), (dk, "wk", "bk"), (dv, "wv", "bv")):
            dflat = _merge_heads(dmat)
            grads[n[w]] += np.einsum("bld,ble->de", c["a_in"], dflat)
            grads[n[b]] += dflat.reshape(-1, dflat.shape[-1]).sum(axis=0)
            da_in += dflat @ t[n[w]].T
        dx_in_ln, dg1, db1 = _layernorm_backward(da_in, c["xhat1"], c["inv1"], t[n["ln1_g"]])
        grads[n["ln1_g"]] += dg1
        grads[n["ln1_b"]] += db1
        dh = dx_mid + dx_in_ln

    demb = dh if cache["m_emb"] is None else dh * cache["m_emb"]
    np.add.at(grads["tok_emb"], ids.reshape(-1), demb.reshape(-1, demb.shape[-1]))
    grads["pos_emb"][:L] += demb.sum(axis=0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name!r}")
    return grads


# ---------------------------------------------------------------------------
# Single-sequence conveniences (the spec-level operations)


def _seq_arrays(seq: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(seq.ids, dtype=np.int64)[None, :]
    mask = seq.attention_mask[None, :]
    return ids, mask


def forward(params: EncoderParams, seq: TokenSequence, mask: DropoutMask | None = None) -> Prediction:
    """Classify one token sequence; dropout is identity when mask is None."""
    ids, attn_mask = _seq_arrays(seq)
    logits, _ = forward_batch(params, ids, attn_mask, dropout=mask)
    return Prediction(pair_id=seq.pair_id, logits=logits[0])


def predict_batch(params: EncoderParams, seqs: list[TokenSequence],
                  batch_size: int = 128) -> list[Prediction]:
    """Deterministic (dropout-free) predictions for many sequences.

    Sequences are padded to the longest in each chunk; masked attention makes
    the result bit-identical to one-by-one forward calls.
    """
    preds: list[Prediction] = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start:start + batch_size]
        lb = max(s.length for s in chunk)
        ids = np.stack([np.asarray(s.ids[:lb], dtype=np.int64) for s in chunk])
        mask = np.stack([s.attention_mask[:lb] for s in chunk])
        logits, _ = forward_batch(params, ids, mask)
        preds.extend(Prediction(pair_id=s.pair_id, logits=logits[i]) for i, s in enumerate(chunk))
    return preds


def backward(params: EncoderParams, seq: TokenSequence, label: int,
             mask: DropoutMask | None = None) -> dict[str, np.ndarray]:
    """Analytic gradient of the per-example NLL w.r.t. every parameter."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    ids, attn_mask = _seq_arrays(seq)
    logits, cache = forward_batch(params, ids, attn_mask, dropout=mask, want_cache=True)
    p = softmax(logits, axis=-1)
    dlogits = p.copy()
    dlogits[0, label] -= 1.0
    return backward_batch(params, cache, dlogits)
