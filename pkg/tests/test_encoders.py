import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from talentpred.encoders import (
    PAD,
    UNK,
    LstmConfig,
    TransformerConfig,
    Vocabulary,
    ann_forward,
    embed_tokens,
    encoder_block_backward,
    encoder_block_forward,
    ffn,
    ffn_backward,
    ffn_forward,
    init_lstm,
    init_transformer,
    linear_backward,
    lstm_backward_batch,
    lstm_cell,
    lstm_cell_backward,
    lstm_cell_forward,
    lstm_forward,
    lstm_forward_batch,
    multi_head_attention,
    multi_head_attention_backward,
    multi_head_attention_forward,
    pad_batch,
    positional_encoding,
    split_tokens,
    tokenize,
    transformer_backward,
    transformer_encode,
    transformer_forward,
)
from talentpred.errors import ConfigError, DimensionError, DomainError
from talentpred.numerics import grad_check

from oracles import attention_single_head, lstm_cell_eq

TOL = 1e-4


# ---------------------------------------------------------------- tokenizer

@pytest.fixture
def vocab():
    return Vocabulary.build(["Gold medal in swimming", "Science olympiad 金獎", "debate team captain"])


def test_reserved_ids(vocab):
    assert vocab.id_of("[PAD]") == PAD == 0
    assert vocab.id_of("[UNK]") == UNK == 1
    assert sorted(vocab.token_to_id.values()) == list(range(vocab.size))


def test_tokenize_known_word_stable(vocab):
    a = tokenize("swimming medal", vocab)
    assert a == tokenize("swimming medal", vocab)
    assert a[0] == vocab.id_of("swimming") and a[0] > UNK


def test_tokenize_unknown_word(vocab):
    assert tokenize("xylophone", vocab) == [UNK]


def test_tokenize_empty_text(vocab):
    assert tokenize("", vocab) == [UNK]
    assert tokenize("  ,. ", vocab) == [UNK]


def test_tokenize_truncates_to_max_len(vocab):
    words = " ".join(["gold"] * 11)
    assert len(tokenize(words, vocab, max_len=8)) == 8
    padded = tokenize("gold medal", vocab, max_len=6, pad=True)
    assert padded[2:] == [PAD] * 4


def test_cjk_split_per_codepoint():
    assert split_tokens("Science金獎 Team") == ["science", "金", "獎", "team"]


def test_vocabulary_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.tsv"
    vocab.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "[PAD]\t0" and lines[1] == "[UNK]\t1"
    assert [int(l.split("\t")[1]) for l in lines] == list(range(vocab.size))
    assert Vocabulary.load(path).token_to_id == vocab.token_to_id


def test_pad_batch_mask():
    ids, mask = pad_batch([[5, 6, 7], [8]])
    assert ids.tolist() == [[5, 6, 7], [8, 0, 0]]
    assert mask.tolist() == [[True] * 3, [True, False, False]]


# ---------------------------------------------------------------- embedding

def test_embed_pad_row_zero(rng):
    vals = init_transformer(TransformerConfig(d_model=8, heads=2, layers=1), 10, rng)
    assert not embed_tokens([PAD, PAD], vals["text.emb"]).any()


def test_embed_repeated_and_gather(rng):
    table = rng.normal(size=(9, 4))
    ids = [3, 3, 7, 0]
    out = embed_tokens(ids, table)
    np.testing.assert_array_equal(out[0], out[1])
    for r, i in enumerate(ids):
        np.testing.assert_array_equal(out[r], table[i])


def test_embed_out_of_range(rng):
    with pytest.raises(DomainError):
        embed_tokens([9], rng.normal(size=(9, 4)))


# ------------------------------------------------------- positional encoding

def test_positional_encoding_position_zero():
    pe = positional_encoding(3, 8)
    assert not pe[0, 0::2].any()
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)


def test_positional_encoding_first_column_is_sin_pos():
    pe = positional_encoding(20, 6)
    np.testing.assert_allclose(pe[:, 0], np.sin(np.arange(20)), atol=1e-15)


def test_positional_encoding_formula_and_range():
    L, d = 7, 10
    pe = positional_encoding(L, d)
    for pos in range(L):
        for i in range(d // 2):
            ang = pos / 10000 ** (2 * i / d)
            assert abs(pe[pos, 2 * i] - math.sin(ang)) < 1e-12
            assert abs(pe[pos, 2 * i + 1] - math.cos(ang)) < 1e-12
    assert np.all(np.abs(pe) <= 1)


def test_positional_encoding_odd_width():
    with pytest.raises(ConfigError):
        positional_encoding(4, 5)


# ----------------------------------------------------------------- attention

def _attn_weights(rng, d):
    return {k: rng.normal(size=(d, d)) / math.sqrt(d) for k in ("Wq", "Wk", "Wv", "Wo")}


def test_identical_keys_give_mean_of_values(rng):
    d = 8
    w = _attn_weights(rng, d)
    Q = rng.normal(size=(4, d))
    K = np.tile(rng.normal(size=d), (4, 1))
    V = rng.normal(size=(4, d))
    out = multi_head_attention(Q, K, V, 2, w)
    expect = (V @ w["Wv"]).mean(axis=0) @ w["Wo"]
    np.testing.assert_allclose(out, np.tile(expect, (4, 1)), atol=1e-12)


def test_causal_row_zero_ignores_later_values(rng):
    d = 8
    w = _attn_weights(rng, d)
    X = rng.normal(size=(5, d))
    out = multi_head_attention(X, X, X, 4, w, causal=True)
    V2 = X.copy()
    V2[1:] += rng.normal(size=(4, d))
    out2 = multi_head_attention(X, X, V2, 4, w, causal=True)
    np.testing.assert_array_equal(out[0], out2[0])
    assert not np.allclose(out[1:], out2[1:])


def test_single_head_matches_formula(rng):
    eye = {k: np.eye(2) for k in ("Wq", "Wk", "Wv", "Wo")}
    for causal in (False, True):
        Q, K, V = rng.normal(size=(3, 2, 2))
        got = multi_head_attention(Q, K, V, 1, eye, causal=causal)
        np.testing.assert_allclose(got, attention_single_head(Q.tolist(), K.tolist(), V.tolist(), causal),
                                   atol=1e-12)


def test_multi_head_matches_per_head_formula(rng):
    d, h = 6, 3
    w = _attn_weights(rng, d)
    Q, K, V = rng.normal(size=(3, 4, d))
    got = multi_head_attention(Q, K, V, h, w)
    q, k, v = Q @ w["Wq"], K @ w["Wk"], V @ w["Wv"]
    dk = d // h
    heads = [attention_single_head(q[:, i*dk:(i+1)*dk].tolist(), k[:, i*dk:(i+1)*dk].tolist(),
                                   v[:, i*dk:(i+1)*dk].tolist()) for i in range(h)]
    np.testing.assert_allclose(got, np.concatenate(heads, axis=1) @ w["Wo"], atol=1e-12)


def test_heads_must_divide_width(rng):
    with pytest.raises(ConfigError):
        multi_head_attention(*rng.normal(size=(3, 2, 6)), 4, _attn_weights(rng, 6))


def test_key_mask_hides_pad_keys(rng):
    d = 4
    w = _attn_weights(rng, d)
    X = rng.normal(size=(1, 3, d))
    mask = np.array([[True, True, False]])
    a, _ = multi_head_attention_forward(X, X, X, 2, w, key_mask=mask)
    Y = X.copy()
    Y[0, 2] = 100.0
    b, _ = multi_head_attention_forward(Y[:, :], Y, Y, 2, w, key_mask=mask)
    np.testing.assert_allclose(a[0, :2], b[0, :2], atol=1e-12)


@pytest.mark.parametrize("causal", [False, True])
def test_attention_grad_check(causal):
    for seed in range(3):
        r = np.random.default_rng(seed)
        d = 4
        q_in, k_in, v_in = r.normal(size=(3, 2, 3, d))
        mask = np.array([[True, True, True], [True, True, False]])
        wout = r.normal(size=(2, 3, d))
        params = {**_attn_weights(r, d), "q": q_in, "k": k_in, "v": v_in}

        def f(p):
            w = {k: p[k] for k in ("Wq", "Wk", "Wv", "Wo")}
            out, cache = multi_head_attention_forward(p["q"], p["k"], p["v"], 2, w, mask, causal)
            dq, dk, dv, g = multi_head_attention_backward(wout, cache, w)
            return float((out * wout).sum()), {**g, "q": dq, "k": dk, "v": dv}

        rep = grad_check(f, params)
        assert rep.passed, rep


# ----------------------------------------------------------------------- FFN

def test_ffn_identity():
    x = np.abs(np.random.default_rng(1).normal(size=(3, 4)))
    np.testing.assert_allclose(ffn(x, np.eye(4), np.zeros(4), np.eye(4), np.zeros(4)), x)


def test_ffn_negative_input_gives_b2(rng):
    x = -np.abs(rng.normal(size=(3, 4))) - 0.1
    b2 = rng.normal(size=2)
    out = ffn(x, np.abs(rng.normal(size=(4, 5))), np.zeros(5), rng.normal(size=(5, 2)), b2)
    np.testing.assert_allclose(out, np.tile(b2, (3, 1)))


def test_ffn_composition_oracle(rng):
    x, W1, b1, W2, b2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 6)), rng.normal(size=6), \
        rng.normal(size=(6, 2)), rng.normal(size=2)
    expect = np.array([[sum(max(0.0, sum(x[r, i] * W1[i, j] for i in range(4)) + b1[j]) * W2[j, c]
                            for j in range(6)) + b2[c] for c in range(2)] for r in range(3)])
    np.testing.assert_allclose(ffn(x, W1, b1, W2, b2), expect, atol=1e-12)


def test_ffn_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        ffn(rng.normal(size=(2, 3)), rng.normal(size=(4, 5)), np.zeros(5), rng.normal(size=(5, 2)), np.zeros(2))


def test_ffn_grad_check():
    for seed in range(3):
        r = np.random.default_rng(seed)
        w = r.normal(size=(2, 3, 2))
        p = {"x": r.normal(size=(2, 3, 4)), "W1": r.normal(size=(4, 5)), "b1": r.normal(size=5),
             "W2": r.normal(size=(5, 2)), "b2": r.normal(size=2)}

        def f(v):
            out, cache = ffn_forward(v["x"], v["W1"], v["b1"], v["W2"], v["b2"])
            dx, g = ffn_backward(w, cache, v["W1"], v["W2"])
            return float((out * w).sum()), {**g, "x": dx}

        assert grad_check(f, p).passed


# --------------------------------------------------------------- transformer

def _tiny(pe=True, causal=False, layers=2):
    return TransformerConfig(d_model=8, heads=2, ffn_width=12, layers=layers, max_len=10,
                             use_positional=pe, causal=causal)


def test_transformer_output_width(rng):
    cfg = _tiny()
    vals = init_transformer(cfg, 12, rng)
    for L in (1, 4, 10, 15):
        out = transformer_encode(list(rng.integers(2, 12, size=L)), cfg, vals)
        assert out.width == 8 and out.embedding.shape == (8,)
    vals["proj.W"], vals["proj.b"] = rng.normal(size=(8, 1)), np.zeros(1)
    assert transformer_encode([3, 4], cfg, vals, proj="proj.").width == 1


def test_transformer_permutation_invariance_without_pe(rng):
    cfg = _tiny(pe=False)
    vals = init_transformer(cfg, 12, rng)
    ids = [2, 5, 7, 9, 11]
    a = transformer_encode(ids, cfg, vals).embedding
    b = transformer_encode([9, 2, 11, 7, 5], cfg, vals).embedding
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_transformer_pad_extension_invariance(rng):
    cfg = _tiny()
    vals = init_transformer(cfg, 12, rng)
    ids, mask = pad_batch([[3, 4, 5]], length=3)
    ids2, mask2 = pad_batch([[3, 4, 5]], length=8)
    a, _ = transformer_forward(ids, mask, cfg, vals)
    b, _ = transformer_forward(ids2, mask2, cfg, vals)
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("causal", [False, True])
def test_encoder_block_grad_check(causal):
    cfg = _tiny(causal=causal, layers=1)
    for seed in range(3):
        r = np.random.default_rng(seed)
        vals = init_transformer(cfg, 6, r)
        w = {k.split(".")[-1]: v for k, v in vals.items() if ".l0." in k}
        x = r.normal(size=(2, 4, 8))
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
        wout = r.normal(size=(2, 4, 8))

        def f(p):
            ww = {k: p[k] for k in w}
            out, cache = encoder_block_forward(p["x"], mask, cfg, ww)
            dx, g = encoder_block_backward(wout, cache, ww)
            return float((out * wout).sum()), {**g, "x": dx}

        rep = grad_check(f, {**w, "x": x})
        assert rep.passed, rep


def test_full_transformer_grad_check():
    cfg = _tiny()
    r = np.random.default_rng(4)
    vals = init_transformer(cfg, 7, r)
    ids, mask = pad_batch([[2, 3, 4], [5, 6]])
    wout = r.normal(size=(2, 8))

    def f(p):
        pooled, cache = transformer_forward(ids, mask, cfg, p)
        return float((pooled * wout).sum()), transformer_backward(wout, cache, cfg, p)

    rep = grad_check(f, vals)
    assert rep.passed, rep


def test_transformer_config_validation():
    with pytest.raises(ConfigError):
        TransformerConfig(d_model=10, heads=4).validate()
    with pytest.raises(ConfigError):
        TransformerConfig(layers=0).validate()


# ---------------------------------------------------------------------- LSTM

def _cell_weights(r, n_in, H, scale=0.5):
    return {"W_ih": r.normal(size=(4 * H, n_in)) * scale, "W_hh": r.normal(size=(4 * H, H)) * scale,
            "b_ih": r.normal(size=4 * H) * scale, "b_hh": r.normal(size=4 * H) * scale}


def test_lstm_cell_zero_weights():
    H = 3
    w = {"W_ih": np.zeros((12, 2)), "W_hh": np.zeros((12, H)), "b_ih": np.zeros(12), "b_hh": np.zeros(12)}
    h, c, cache = lstm_cell_forward(np.ones(2), np.zeros(H), np.zeros(H), *w.values())
    _, _, _, i, f, g, o, _ = cache
    assert np.all(i == 0.5) and np.all(f == 0.5) and np.all(o == 0.5) and not g.any()
    assert not h.any() and not c.any()


def test_lstm_cell_pure_memory(rng):
    H = 2
    w = _cell_weights(rng, 3, H)
    w["b_ih"][:H] = -1e4          # input gate shut
    w["b_ih"][H:2 * H] = 1e4      # forget gate open
    c_prev = rng.normal(size=H)
    _, c = lstm_cell(rng.normal(size=3), rng.normal(size=H), c_prev, w)
    np.testing.assert_allclose(c, c_prev, atol=1e-12)


def test_lstm_cell_matches_equations(rng):
    for _ in range(10):
        w = _cell_weights(rng, 3, 4)
        x, h0, c0 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
        h, c = lstm_cell(x, h0, c0, w)
        eh, ec = lstm_cell_eq(x, h0, c0, *(w[k].tolist() for k in ("W_ih", "W_hh", "b_ih", "b_hh")))
        np.testing.assert_allclose(h, eh, atol=1e-12)
        np.testing.assert_allclose(c, ec, atol=1e-12)


def test_lstm_cell_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        lstm_cell(rng.normal(size=3), rng.normal(size=5), rng.normal(size=4), _cell_weights(rng, 3, 4))


def test_lstm_cell_grad_check():
    for seed in range(3):
        r = np.random.default_rng(seed)
        H = 3
        p = {**_cell_weights(r, 2, H), "x": r.normal(size=(2, 2)), "h": r.normal(size=(2, H)),
             "c": r.normal(size=(2, H))}
        wh, wc = r.normal(size=(2, H)), r.normal(size=(2, H))

        def f(v):
            h, c, cache = lstm_cell_forward(v["x"], v["h"], v["c"], v["W_ih"], v["W_hh"], v["b_ih"], v["b_hh"])
            dx, dh, dc, dWi, dWh, db = lstm_cell_backward(wh, wc, cache, v["W_ih"], v["W_hh"])
            return float((h * wh).sum() + (c * wc).sum()), \
                {"x": dx, "h": dh, "c": dc, "W_ih": dWi, "W_hh": dWh, "b_ih": db, "b_hh": db}

        assert grad_check(f, p).passed


def test_lstm_zero_weights_output_is_projection_bias(rng):
    cfg = LstmConfig(input_size=3, hidden=4, layers=2)
    w = {k: np.zeros_like(v) for k, v in init_lstm(cfg, rng).items()}
    w["proj.W"], w["proj.b"] = rng.normal(size=(4, 1)), np.array([0.7])
    out = lstm_forward(rng.normal(size=(5, 3)), cfg, w, proj="proj.")
    assert out.width == 1 and out.embedding[0] == 0.7


def test_lstm_single_step_equals_cell(rng):
    cfg = LstmConfig(input_size=3, hidden=4, layers=1)
    w = init_lstm(cfg, rng)
    x = rng.normal(size=3)
    h, _ = lstm_cell(x, np.zeros(4), np.zeros(4), {k.split(".")[-1]: v for k, v in w.items()})
    np.testing.assert_allclose(lstm_forward(x[None], cfg, w).embedding, h, atol=1e-15)


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_lstm_stack_equals_composed_cells(rng, layers):
    cfg = LstmConfig(input_size=3, hidden=4, layers=layers)
    w = init_lstm(cfg, rng)
    seq = rng.normal(size=(6, 3))
    inputs = list(seq)
    for l in range(layers):
        cw = {k.split(".")[-1]: v for k, v in w.items() if f".l{l}." in k}
        h, c = np.zeros(4), np.zeros(4)
        outs = []
        for x in inputs:
            h, c = lstm_cell(x, h, c, cw)
            outs.append(h)
        inputs = outs
    np.testing.assert_allclose(lstm_forward(seq, cfg, w).embedding, inputs[-1], atol=1e-12)


def test_lstm_dropout_zero_is_deterministic(rng):
    cfg = LstmConfig(input_size=3, hidden=4, layers=2, dropout=0.0)
    w = init_lstm(cfg, rng)
    seq = rng.normal(size=(4, 3))
    a = lstm_forward(seq, cfg, w, np.random.default_rng(1), training=True).embedding
    b = lstm_forward(seq, cfg, w, np.random.default_rng(2), training=True).embedding
    c = lstm_forward(seq, cfg, w).embedding
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_lstm_dropout_active_only_in_training(rng):
    cfg = LstmConfig(input_size=3, hidden=4, layers=2, dropout=0.5)
    w = init_lstm(cfg, rng)
    seq = rng.normal(size=(4, 3))
    train = lstm_forward(seq, cfg, w, np.random.default_rng(1), training=True).embedding
    infer = lstm_forward(seq, cfg, w, np.random.default_rng(1), training=False).embedding
    assert not np.allclose(train, infer)
    np.testing.assert_array_equal(infer, lstm_forward(seq, cfg, w).embedding)


def test_lstm_empty_sequence(rng):
    cfg = LstmConfig()
    with pytest.raises(DomainError):
        lstm_forward(np.zeros((0, 3)), cfg, init_lstm(cfg, rng))


def test_lstm_masked_steps_carry_state(rng):
    cfg = LstmConfig(input_size=3, hidden=4, layers=2)
    w = init_lstm(cfg, rng)
    seq = rng.normal(size=(1, 5, 3))
    mask = np.array([[1, 1, 0, 1, 0]], dtype=bool)
    h, _ = lstm_forward_batch(seq, mask, cfg, w)
    dense = seq[:, mask[0]]
    h2, _ = lstm_forward_batch(dense, None, cfg, w)
    np.testing.assert_allclose(h, h2, atol=1e-14)


@pytest.mark.parametrize("dropout", [0.0, 0.3])
def test_lstm_stack_grad_check(dropout):
    cfg = LstmConfig(input_size=3, hidden=3, layers=2, dropout=dropout)
    for seed in range(3):
        r = np.random.default_rng(seed)
        w = init_lstm(cfg, r)
        seq = r.normal(size=(2, 4, 3))
        mask = np.array([[1, 1, 1, 1], [1, 0, 1, 0]], dtype=bool)
        wout = r.normal(size=(2, 3))

        def f(p):
            h, cache = lstm_forward_batch(seq, mask, cfg, p, rng=np.random.default_rng(9), training=True)
            g, _ = lstm_backward_batch(wout, cache, cfg, p)
            return float((h * wout).sum()), g

        rep = grad_check(f, w)
        assert rep.passed, rep


def test_lstm_config_validation():
    with pytest.raises(ConfigError):
        LstmConfig(hidden=0).validate()
    with pytest.raises(ConfigError):
        LstmConfig(dropout=1.0).validate()


# ----------------------------------------------------------------------- ANN

def test_ann_identity(rng):
    x = rng.normal(size=5)
    out = ann_forward(x)
    np.testing.assert_array_equal(out.embedding, x)
    assert out.width == 5


def test_ann_linear_zero_weight(rng):
    b = np.array([0.25])
    out = ann_forward(rng.normal(size=4), "linear", {"W": np.zeros((4, 1)), "b": b})
    np.testing.assert_array_equal(out.embedding, b)
    assert out.width == 1


def test_ann_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        ann_forward(rng.normal(size=3), "linear", {"W": np.zeros((4, 1)), "b": np.zeros(1)})


def test_ann_linear_grad_check():
    for seed in range(3):
        r = np.random.default_rng(seed)
        x = r.normal(size=(5, 4))
        wout = r.normal(size=(5, 2))

        def f(p):
            out = ann_forward(p["x"], "linear", p).embedding
            dx, dW, db = linear_backward(wout, p["x"], p["W"])
            return float((out * wout).sum()), {"x": dx, "W": dW, "b": db}

        assert grad_check(f, {"x": x, "W": r.normal(size=(4, 2)), "b": r.normal(size=2)}).passed
