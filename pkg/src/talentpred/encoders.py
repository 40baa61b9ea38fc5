"""Per-modality encoders: a small transformer for award text, a stacked LSTM
for exam sequences and a linear/identity map for demographic columns.

Everything is batched over a leading axis. Forward functions return
``(output, cache)`` and the matching ``*_backward`` returns a dict of
parameter gradients keyed like the parameter dict it was given.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .numerics import (
    layer_norm_backward,
    layer_norm_forward,
    sigmoid,
    softmax,
    softmax_backward,
    xavier,
)

Array = np.ndarray

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "[PAD]", "[UNK]"

_CJK = "\u3040-\u30ff\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff\uac00-\ud7af"
_TOKEN_RE = re.compile(rf"[{_CJK}]|[^\W_{_CJK}]+")


# --------------------------------------------------------------- tokenizer

def split_tokens(text: str) -> List[str]:
    """Lower-cased word tokens; every CJK codepoint is its own token."""
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text or "")]


@dataclass
class Vocabulary:
    token_to_id: Dict[str, int]

    def __post_init__(self):
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise ConfigError("vocabulary ids must be dense from 0")
        if self.token_to_id.get(PAD_TOKEN) != PAD or self.token_to_id.get(UNK_TOKEN) != UNK:
            raise ConfigError("vocabulary must reserve PAD=0 and UNK=1")

    @classmethod
    def build(cls, corpus: Iterable[str], min_freq: int = 1) -> "Vocabulary":
        counts: Dict[str, int] = {}
        for text in corpus:
            for tok in split_tokens(text):
                counts[tok] = counts.get(tok, 0) + 1
        mapping = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in sorted(t for t, c in counts.items() if c >= min_freq):
            if tok not in mapping:
                mapping[tok] = len(mapping)
        return cls(mapping)

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_lines(self) -> List[str]:
        pairs = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        return [f"{tok}\t{i}" for tok, i in pairs]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        mapping = {}
        for n, line in enumerate(lines, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            tok, sep, idx = line.rpartition("\t")
            if not sep:
                raise ConfigError(f"vocabulary line {n} is not token<TAB>id")
            mapping[tok] = int(idx)
        return cls(mapping)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def tokenize(text: str, vocab: Vocabulary, max_len: int = 32, pad: bool = False) -> List[int]:
    ids = [vocab.id_of(t) for t in split_tokens(text)][:max_len]
    if not ids:
        ids = [UNK]
    if pad:
        ids = ids + [PAD] * (max_len - len(ids))
    return ids


def pad_batch(seqs: Sequence[Sequence[int]], length: Optional[int] = None):
    """Right-pad id sequences. Returns ``(ids, mask)`` with ``mask`` True on real tokens."""
    length = length or max(len(s) for s in seqs)
    ids = np.full((len(seqs), length), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        s = list(s)[:length]
        ids[i, : len(s)] = s
    return ids, ids != PAD


def embed_tokens(ids, table: Array) -> Array:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(f"token id out of range for table with {table.shape[0]} rows")
    return table[ids]


def positional_encoding(length: int, d_model: int) -> Array:
    if d_model % 2:
        raise ConfigError("d_model must be even for sinusoidal positions")
    pos = np.arange(length, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


@dataclass
class EncoderOutput:
    embedding: Array
    width: int


# ---------------------------------------------------------------- attention

def multi_head_attention_forward(q_in, k_in, v_in, heads: int, weights: Dict[str, Array],
                                 key_mask=None, causal: bool = False):
    """Scaled dot-product attention over ``heads`` heads, batched on axis 0.

    ``weights`` holds ``Wq, Wk, Wv, Wo`` (each d_model x d_model).
    ``key_mask`` (B, L) marks keys that may be attended to.
    """
    q_in, k_in, v_in = (np.asarray(a, dtype=np.float64) for a in (q_in, k_in, v_in))
    B, Lq, d = q_in.shape
    Lk = k_in.shape[1]
    if d % heads:
        raise ConfigError(f"d_model {d} is not divisible by {heads} heads")
    if k_in.shape[2] != d or v_in.shape[:2] != k_in.shape[:2] or v_in.shape[2] != d:
        raise DimensionError("Q, K, V widths or lengths are inconsistent")
    dk = d // heads
    Wq, Wk, Wv, Wo = weights["Wq"], weights["Wk"], weights["Wv"], weights["Wo"]

    def split(x):
        return x.reshape(B, -1, heads, dk).transpose(0, 2, 1, 3)

    q, k, v = split(q_in @ Wq), split(k_in @ Wk), split(v_in @ Wv)
    scale = 1.0 / np.sqrt(dk)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    allowed = np.ones((B, 1, Lq, Lk), dtype=bool)
    if key_mask is not None:
        allowed &= np.asarray(key_mask, dtype=bool)[:, None, None, :]
    if causal:
        allowed &= np.tril(np.ones((Lq, Lk), dtype=bool))[None, None]
    scores = np.where(allowed, scores, -np.inf)
    attn = softmax(scores, axis=-1)
    ctx = attn @ v
    concat = ctx.transpose(0, 2, 1, 3).reshape(B, Lq, d)
    out = concat @ Wo
    cache = (q_in, k_in, v_in, q, k, v, attn, concat, heads, scale)
    return out, cache


def multi_head_attention_backward(dout, cache, weights):
    """Returns ``(dq_in, dk_in, dv_in, grads)``."""
    q_in, k_in, v_in, q, k, v, attn, concat, heads, scale = cache
    B, Lq, d = q_in.shape
    dk = d // heads
    Wq, Wk, Wv, Wo = weights["Wq"], weights["Wk"], weights["Wv"], weights["Wo"]
    g = {"Wo": np.einsum("bld,ble->de", concat, dout)}
    dctx = (dout @ Wo.T).reshape(B, Lq, heads, dk).transpose(0, 2, 1, 3)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(dattn, attn) * scale
    dq = dscores @ k
    dkk = dscores.transpose(0, 1, 3, 2) @ q

    def merge(x):
        return x.transpose(0, 2, 1, 3).reshape(B, -1, d)

    dq, dkk, dv = merge(dq), merge(dkk), merge(dv)
    g["Wq"] = np.einsum("bld,ble->de", q_in, dq)
    g["Wk"] = np.einsum("bld,ble->de", k_in, dkk)
    g["Wv"] = np.einsum("bld,ble->de", v_in, dv)
    return dq @ Wq.T, dkk @ Wk.T, dv @ Wv.T, g


def multi_head_attention(Q, K, V, heads: int, weights, causal: bool = False, key_mask=None):
    """Unbatched convenience wrapper: (L, d) inputs give an (L, d) output."""
    values = weights.values if hasattr(weights, "values") and not isinstance(weights, dict) else weights
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    squeeze = Q.ndim == 2
    if squeeze:
        Q, K, V = Q[None], K[None], V[None]
        if key_mask is not None:
            key_mask = np.asarray(key_mask)[None]
    out, _ = multi_head_attention_forward(Q, K, V, heads, values, key_mask, causal)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------- FFN

def ffn_forward(x, W1, b1, W2, b2):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W1.shape[0] or W1.shape[1] != b1.shape[-1] or W1.shape[1] != W2.shape[0] \
            or W2.shape[1] != b2.shape[-1]:
        raise DimensionError("ffn shape chain is inconsistent")
    hidden = x @ W1 + b1
    act = np.maximum(hidden, 0.0)
    return act @ W2 + b2, (x, hidden, act)


def ffn_backward(dout, cache, W1, W2):
    x, hidden, act = cache
    lead = tuple(range(dout.ndim - 1))
    dW2 = np.tensordot(act, dout, axes=(lead, lead))
    db2 = dout.sum(axis=lead)
    dact = dout @ W2.T
    dhidden = dact * (hidden > 0)
    dW1 = np.tensordot(x, dhidden, axes=(lead, lead))
    db1 = dhidden.sum(axis=lead)
    return dhidden @ W1.T, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def ffn(x, W1, b1, W2, b2) -> Array:
    return ffn_forward(x, W1, b1, W2, b2)[0]


# -------------------------------------------------------------- transformer

@dataclass
class TransformerConfig:
    d_model: int = 32
    heads: int = 4
    ffn_width: int = 64
    layers: int = 2
    max_len: int = 32
    use_positional: bool = True
    causal: bool = False
    ln_eps: float = 1e-5

    def validate(self) -> None:
        if self.d_model % self.heads:
            raise ConfigError("d_model must be divisible by heads")
        if self.layers < 1:
            raise ConfigError("transformer needs at least one layer")
        if self.d_model % 2:
            raise ConfigError("d_model must be even")

    def to_dict(self):
        return asdict(self)


_BLOCK_KEYS = ("Wq", "Wk", "Wv", "Wo", "ln1_g", "ln1_b", "W1", "b1", "W2", "b2", "ln2_g", "ln2_b")


def init_transformer(cfg: TransformerConfig, vocab_size: int, rng: np.random.Generator,
                     prefix: str = "text.") -> Dict[str, Array]:
    cfg.validate()
    d, f = cfg.d_model, cfg.ffn_width
    p = {f"{prefix}emb": rng.normal(0.0, 1.0, size=(vocab_size, d))}
    p[f"{prefix}emb"][PAD] = 0.0
    for layer in range(cfg.layers):
        b = f"{prefix}l{layer}."
        for w in ("Wq", "Wk", "Wv", "Wo"):
            p[b + w] = xavier(rng, d, d)
        p[b + "ln1_g"] = np.ones(d)
        p[b + "ln1_b"] = np.zeros(d)
        p[b + "W1"] = xavier(rng, d, f)
        p[b + "b1"] = np.zeros(f)
        p[b + "W2"] = xavier(rng, f, d)
        p[b + "b2"] = np.zeros(d)
        p[b + "ln2_g"] = np.ones(d)
        p[b + "ln2_b"] = np.zeros(d)
    return p


def encoder_block_forward(x, mask, cfg: TransformerConfig, w: Dict[str, Array]):
    """MHA, add & norm, FFN, add & norm."""
    attn, c_attn = multi_head_attention_forward(x, x, x, cfg.heads, w, mask, cfg.causal)
    z1, c_ln1 = layer_norm_forward(x + attn, w["ln1_g"], w["ln1_b"], cfg.ln_eps)
    f, c_ffn = ffn_forward(z1, w["W1"], w["b1"], w["W2"], w["b2"])
    z2, c_ln2 = layer_norm_forward(z1 + f, w["ln2_g"], w["ln2_b"], cfg.ln_eps)
    return z2, (c_attn, c_ln1, c_ffn, c_ln2)


def encoder_block_backward(dz2, cache, w):
    c_attn, c_ln1, c_ffn, c_ln2 = cache
    g = {}
    du, g["ln2_g"], g["ln2_b"] = layer_norm_backward(dz2, c_ln2)
    dz1_ffn, gf = ffn_backward(du, c_ffn, w["W1"], w["W2"])
    g.update(gf)
    dz1 = du + dz1_ffn
    dv, g["ln1_g"], g["ln1_b"] = layer_norm_backward(dz1, c_ln1)
    dq, dk, dvv, ga = multi_head_attention_backward(dv, c_attn, w)
    g.update(ga)
    return dv + dq + dk + dvv, g


def _block_weights(values, prefix, layer):
    b = f"{prefix}l{layer}."
    return {k: values[b + k] for k in _BLOCK_KEYS}


def transformer_forward(ids, mask, cfg: TransformerConfig, values: Dict[str, Array],
                        prefix: str = "text."):
    """Encode a padded batch and mean-pool the non-PAD rows.

    Returns ``(pooled (B, d_model), cache)``.
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    table = values[f"{prefix}emb"]
    if table.shape[1] != cfg.d_model:
        raise ConfigError("embedding width does not match d_model")
    x = embed_tokens(ids, table)
    if cfg.use_positional:
        x = x + positional_encoding(ids.shape[1], cfg.d_model)[None]
    caches = []
    for layer in range(cfg.layers):
        x, c = encoder_block_forward(x, mask, cfg, _block_weights(values, prefix, layer))
        caches.append(c)
    count = np.maximum(mask.sum(axis=1, keepdims=True), 1)
    pooled = (x * mask[..., None]).sum(axis=1) / count
    return pooled, (ids, mask, count, caches)


def transformer_backward(dpooled, cache, cfg: TransformerConfig, values, prefix: str = "text."):
    ids, mask, count, caches = cache
    grads = {}
    dx = mask[..., None] * (dpooled / count)[:, None, :]
    for layer in reversed(range(cfg.layers)):
        w = _block_weights(values, prefix, layer)
        dx, g = encoder_block_backward(dx, caches[layer], w)
        for k, v in g.items():
            grads[f"{prefix}l{layer}.{k}"] = v
    demb = np.zeros_like(values[f"{prefix}emb"])
    np.add.at(demb, ids, dx)
    grads[f"{prefix}emb"] = demb
    return grads


def transformer_encode(ids, cfg: TransformerConfig, weights, prefix: str = "text.",
                       proj: Optional[str] = None) -> EncoderOutput:
    """Encode token ids to one pooled vector per sequence.

    ``ids`` may be a single id list or a list of lists. With ``proj`` set,
    the pooled vector goes through the linear map ``{proj}W``, ``{proj}b``.
    """
    values = weights.values if not isinstance(weights, dict) else weights
    single = len(ids) > 0 and np.ndim(ids[0]) == 0
    seqs = [list(ids)] if single else [list(s) for s in ids]
    seqs = [s[: cfg.max_len] for s in seqs]
    batch, mask = pad_batch(seqs)
    pooled, _ = transformer_forward(batch, mask, cfg, values, prefix)
    if proj is not None:
        pooled = pooled @ values[f"{proj}W"] + values[f"{proj}b"]
    out = pooled[0] if single else pooled
    return EncoderOutput(out, pooled.shape[1])


# --------------------------------------------------------------------- LSTM

@dataclass
class LstmConfig:
    input_size: int = 3
    hidden: int = 20
    layers: int = 2
    dropout: float = 0.0

    def validate(self) -> None:
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("LSTM needs hidden >= 1 and layers >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


def init_lstm(cfg: LstmConfig, rng: np.random.Generator, prefix: str = "lstm.") -> Dict[str, Array]:
    cfg.validate()
    H = cfg.hidden
    bound = 1.0 / np.sqrt(H)
    p = {}
    for layer in range(cfg.layers):
        n_in = cfg.input_size if layer == 0 else H
        b = f"{prefix}l{layer}."
        p[b + "W_ih"] = rng.uniform(-bound, bound, size=(4 * H, n_in))
        p[b + "W_hh"] = rng.uniform(-bound, bound, size=(4 * H, H))
        p[b + "b_ih"] = rng.uniform(-bound, bound, size=4 * H)
        p[b + "b_hh"] = rng.uniform(-bound, bound, size=4 * H)
    return p


def lstm_cell_forward(x, h_prev, c_prev, W_ih, W_hh, b_ih, b_hh):
    """One LSTM step, gates in the order input, forget, cell, output."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    H = W_hh.shape[1]
    if W_ih.shape != (4 * H, x.shape[1]) or h_prev.shape[1] != H or c_prev.shape[1] != H:
        raise DimensionError("LSTM cell shapes do not match the hidden size")
    z = x @ W_ih.T + b_ih + h_prev @ W_hh.T + b_hh
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


def lstm_cell(x_t, h_prev, c_prev, weights):
    """One step on a single sample; ``weights`` has ``W_ih, W_hh, b_ih, b_hh``."""
    h, c, _ = lstm_cell_forward(x_t, h_prev, c_prev, weights["W_ih"], weights["W_hh"],
                                weights["b_ih"], weights["b_hh"])
    if np.ndim(x_t) == 1:
        return h[0], c[0]
    return h, c


def lstm_cell_backward(dh, dc, cache, W_ih, W_hh):
    """Returns ``(dx, dh_prev, dc_prev, dW_ih, dW_hh, db)``."""
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
    )
    return dz @ W_ih, dz @ W_hh, dc * f, dz.T @ x, dz.T @ h_prev, dz.sum(axis=0)


def lstm_forward_batch(seq, mask, cfg: LstmConfig, values, prefix: str = "lstm.",
                       rng: Optional[np.random.Generator] = None, training: bool = False):
    """Run the stacked LSTM over ``seq`` (B, T, input).

    Steps where ``mask`` is False leave (h, c) unchanged, so padding and
    missing semesters are skipped. Returns the top layer's final hidden state.
    """
    seq = np.asarray(seq, dtype=np.float64)
    B, T, _ = seq.shape
    if T == 0:
        raise DomainError("LSTM input has no timesteps")
    if seq.shape[2] != cfg.input_size:
        raise DimensionError(f"LSTM expects input width {cfg.input_size}, got {seq.shape[2]}")
    m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64)
    H = cfg.hidden
    layer_in = seq
    caches = []
    for layer in range(cfg.layers):
        b = f"{prefix}l{layer}."
        W_ih, W_hh, b_ih, b_hh = values[b + "W_ih"], values[b + "W_hh"], values[b + "b_ih"], values[b + "b_hh"]
        drop = None
        if layer > 0 and training and cfg.dropout > 0.0:
            if rng is None:
                raise ConfigError("dropout during training needs a seeded generator")
            keep = 1.0 - cfg.dropout
            drop = (rng.random(layer_in.shape) < keep) / keep
            layer_in = layer_in * drop
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        outs = np.zeros((B, T, H))
        steps = []
        for t in range(T):
            h_new, c_new, cell = lstm_cell_forward(layer_in[:, t], h, c, W_ih, W_hh, b_ih, b_hh)
            mt = m[:, t:t + 1]
            h = mt * h_new + (1 - mt) * h
            c = mt * c_new + (1 - mt) * c
            outs[:, t] = h
            steps.append(cell)
        caches.append((steps, drop))
        layer_in = outs
    return h, (m, caches, seq.shape)


def lstm_backward_batch(dh_out, cache, cfg: LstmConfig, values, prefix: str = "lstm."):
    m, caches, shape = cache
    B, T, _ = shape
    H = cfg.hidden
    grads = {}
    d_above = None  # gradient w.r.t. this layer's per-step outputs
    for layer in reversed(range(cfg.layers)):
        b = f"{prefix}l{layer}."
        W_ih, W_hh = values[b + "W_ih"], values[b + "W_hh"]
        steps, drop = caches[layer]
        dW_ih = np.zeros_like(W_ih)
        dW_hh = np.zeros_like(W_hh)
        db = np.zeros(4 * H)
        n_in = W_ih.shape[1]
        dx_seq = np.zeros((B, T, n_in))
        dh = dh_out.copy() if layer == cfg.layers - 1 else np.zeros((B, H))
        dc = np.zeros((B, H))
        for t in reversed(range(T)):
            if d_above is not None:
                dh = dh + d_above[:, t]
            mt = m[:, t:t + 1]
            dx, dh_prev, dc_prev, gW_ih, gW_hh, gb = lstm_cell_backward(mt * dh, mt * dc, steps[t], W_ih, W_hh)
            dW_ih += gW_ih
            dW_hh += gW_hh
            db += gb
            dx_seq[:, t] = dx
            dh = dh_prev + (1 - mt) * dh
            dc = dc_prev + (1 - mt) * dc
        grads[b + "W_ih"] = dW_ih
        grads[b + "W_hh"] = dW_hh
        grads[b + "b_ih"] = db
        grads[b + "b_hh"] = db.copy()
        if drop is not None:
            dx_seq = dx_seq * drop
        d_above = dx_seq
    return grads, d_above


def lstm_forward(seq, cfg: LstmConfig, weights, dropout_rng=None, training: bool = False,
                 proj: Optional[str] = None, prefix: str = "lstm.") -> EncoderOutput:
    """Single-sequence convenience wrapper over :func:`lstm_forward_batch`."""
    values = weights.values if not isinstance(weights, dict) else weights
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DomainError("lstm_forward needs a (T, input) sequence with T >= 1")
    h, _ = lstm_forward_batch(seq[None], None, cfg, values, prefix, dropout_rng, training)
    if proj is not None:
        h = h @ values[f"{proj}W"] + values[f"{proj}b"]
    return EncoderOutput(h[0], h.shape[1])


# ---------------------------------------------------------------------- ANN

def ann_forward(x, mode: str = "identity", weights=None, prefix: str = "") -> EncoderOutput:
    x = np.asarray(x, dtype=np.float64)
    if mode == "identity":
        return EncoderOutput(x, x.shape[-1])
    if mode != "linear":
        raise ConfigError(f"unknown ANN mode {mode!r}")
    W, b = weights[f"{prefix}W"], weights[f"{prefix}b"]
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[-1]:
        raise DimensionError(f"ANN input width {x.shape[-1]} does not match weight {W.shape}")
    out = x @ W + b
    return EncoderOutput(out, out.shape[-1])


def linear_backward(dout, x, W):
    lead = tuple(range(dout.ndim - 1))
    return dout @ W.T, np.tensordot(x, dout, axes=(lead, lead)), dout.sum(axis=lead)
