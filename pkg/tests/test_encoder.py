"""Encoder forward pass: shapes, masking, dropout determinism, checkpoints."""
from __future__ import annotations

import numpy as np
import pytest

from dedup_al.encoder import (
    DropoutMask,
    EncoderConfig,
    Prediction,
    attention,
    checkpoint_digest,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    predict_batch,
    save_checkpoint,
    softmax,
)
from dedup_al.preprocess import TokenSequence

CFG = EncoderConfig(vocab_size=20, d_model=16, n_heads=2, n_layers=2, d_ff=24,
                    max_len=12, dropout_rate=0.1, seed=0)


def make_seq(rng, length, max_len=12, pair_id="x|y"):
    ids = np.full(max_len, 7, dtype=np.int64)  # [PAD]
    ids[:length] = rng.integers(0, 20, size=length)
    return TokenSequence(pair_id=pair_id, ids=ids, length=length)


def test_softmax_rows_normalize(rng):
    x = rng.normal(size=(4, 7))
    s = softmax(x)
    assert np.allclose(s.sum(axis=-1), 1.0)
    assert np.all(s > 0)
    # shift invariance
    assert np.allclose(softmax(x + 100.0), s)


def test_attention_masks_keys():
    rng = np.random.default_rng(0)
    Q = rng.normal(size=(1, 4, 8))
    K = rng.normal(size=(1, 4, 8))
    V = rng.normal(size=(1, 4, 8))
    mask = np.array([[True, True, False, False]])
    out = attention(Q, K, V, mask)
    # masked value rows must not influence the output
    V2 = V.copy()
    V2[:, 2:, :] = 999.0
    assert np.allclose(out, attention(Q, K, V2, mask))


def test_attention_rejects_nonfinite():
    bad = np.full((1, 2, 4), np.nan)
    ok = np.zeros((1, 2, 4))
    with pytest.raises(FloatingPointError):
        attention(bad, ok, ok)


def test_init_params_deterministic_shapes():
    p1 = init_params(CFG)
    p2 = init_params(CFG)
    assert set(p1.tensors) == set(p2.tensors)
    assert all(np.array_equal(p1[n], p2[n]) for n in p1.tensors)
    assert p1["tok_emb"].shape == (20, 16)
    assert p1["pos_emb"].shape == (12, 16)
    assert p1["head.w"].shape == (2, 16)
    assert p1["layers.0.ff.w1"].shape == (16, 24)
    assert all(a.dtype == np.float64 for a in p1.tensors.values())


def test_config_validates():
    with pytest.raises(ValueError):
        EncoderConfig(vocab_size=10, d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(vocab_size=10, dropout_rate=1.0)


def test_forward_batch_matches_single(rng):
    params = init_params(CFG)
    seqs = [make_seq(rng, int(rng.integers(3, 12)), pair_id=f"a|{i}") for i in range(7)]
    batched = predict_batch(params, seqs, batch_size=3)
    for seq, pred in zip(seqs, batched):
        solo = forward(params, seq)
        assert pred.pair_id == seq.pair_id
        assert np.allclose(pred.logits, solo.logits, atol=1e-12)


def test_padding_is_inert(rng):
    params = init_params(CFG)
    seq = make_seq(rng, 5)
    ids2 = seq.ids.copy()
    ids2[5:] = 3  # garbage in padded region
    seq2 = TokenSequence(pair_id=seq.pair_id, ids=ids2, length=5)
    assert np.allclose(forward(params, seq).logits, forward(params, seq2).logits)


def test_forward_validates_inputs(rng):
    params = init_params(CFG)
    ids = np.zeros((1, 13), dtype=np.int64)
    with pytest.raises(ValueError, match="max_len"):
        forward_batch(params, ids, np.ones((1, 13), dtype=bool))
    ids = np.full((1, 4), 25, dtype=np.int64)
    with pytest.raises(ValueError, match="vocabulary"):
        forward_batch(params, ids, np.ones((1, 4), dtype=bool))


def test_dropout_mask_reproducible(rng):
    params = init_params(CFG)
    seq = make_seq(rng, 8)
    ids, mask = seq.ids[None, :], seq.attention_mask[None, :]
    m = DropoutMask(rate=0.2, seed=99, pass_index=0)
    l1, _ = forward_batch(params, ids, mask, dropout=m)
    l2, _ = forward_batch(params, ids, mask, dropout=m)
    assert np.array_equal(l1, l2)
    other = DropoutMask(rate=0.2, seed=99, pass_index=1)
    l3, _ = forward_batch(params, ids, mask, dropout=other)
    assert not np.allclose(l1, l3)


def test_prediction_probability():
    pred = Prediction(pair_id="a|b", logits=np.array([0.0, 0.0]))
    assert pred.p == pytest.approx(0.5)
    assert pred.confidence == pytest.approx(0.5)
    sure = Prediction(pair_id="a|b", logits=np.array([-10.0, 10.0]))
    assert sure.p > 0.999


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_params(CFG)
    path = tmp_path / "model.npz"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.config == CFG
    assert checkpoint_digest(loaded) == checkpoint_digest(params)
    seq = make_seq(rng, 6)
    assert np.allclose(forward(params, seq).logits, forward(loaded, seq).logits)


def test_checkpoint_digest_sensitive(tmp_path):
    params = init_params(CFG)
    before = checkpoint_digest(params)
    params.tensors["head.b"][0] += 1e-9
    assert checkpoint_digest(params) != before


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bogus.npz"
    np.savez(path, __meta__=np.frombuffer(b'{"format": "nope"}', dtype=np.uint8))
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(path)
