"""Tokenizer, toy encoder, precomputed-state provider, and span pooling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import opfuse.autodiff as ad
from opfuse.autodiff import Tape, Tensor
from opfuse.data import Record, Span
from opfuse.encoder import (EncoderError, EncoderOutput, FileEncoder,
                            NoTokenOverlap, ToyEncoder, read_encoder_states,
                            span_pool, tokenize, write_encoder_states)

from oracles import max_rel_err, numeric_gradient


def test_tokenize_words_and_punctuation():
    seq = tokenize("go Long at $190")
    assert [t.text for t in seq] == ["go", "long", "at", "$", "190"]
    assert [(t.span.start, t.span.end) for t in seq] == [
        (0, 2), (3, 7), (8, 10), (11, 12), (12, 15)]


def test_tokenize_empty():
    assert tokenize("") == ()


def test_tokenize_offsets_round_trip():
    text = "Tesla I'll buy back in and go Long at $190"
    for tok in tokenize(text):
        assert text[tok.span.start:tok.span.end].lower() == tok.text


@settings(max_examples=50, deadline=None)
@given(st.text(min_size=0, max_size=40))
def test_tokenize_round_trip_property(text):
    seq = tokenize(text)
    for tok in seq:
        assert text[tok.span.start:tok.span.end].lower() == tok.text
    spans = [t.span for t in seq]
    for a, b in zip(spans, spans[1:]):
        assert a.end <= b.start  # ordered, non-overlapping


def make_encoder(**kw):
    defaults = dict(width=16, layers=2, heads=4, vocab_buckets=64,
                    rng=np.random.default_rng(0))
    defaults.update(kw)
    return ToyEncoder(**defaults)


def test_toy_encoder_output_shapes():
    enc = ToyEncoder(rng=np.random.default_rng(0))  # default config
    seq = tokenize("buy the dip now")
    out = enc.encode(seq)
    assert out.hidden.shape == (4, 64)
    assert out.pooled.shape == (1, 64)


def test_toy_encoder_empty_text_uses_padding_token():
    enc = make_encoder()
    out = enc.encode(())
    assert out.hidden.shape == (1, 16)
    assert out.pooled.shape == (1, 16)


def test_toy_encoder_position_sensitivity():
    enc = make_encoder()
    a = enc.encode(tokenize("alpha beta")).pooled.data
    b = enc.encode(tokenize("beta alpha")).pooled.data
    assert not np.allclose(a, b)


def test_toy_encoder_deterministic():
    a = make_encoder().encode(tokenize("same seed same output")).hidden.data
    b = make_encoder().encode(tokenize("same seed same output")).hidden.data
    assert np.array_equal(a, b)


def test_toy_encoder_embedding_gradient_matches_finite_differences():
    enc = make_encoder(width=8, layers=1, heads=2, vocab_buckets=6)
    seq = tokenize("aa bb aa")
    head_w = Tensor(np.random.default_rng(1).standard_normal((8, 4)))

    def forward():
        out = enc.encode(seq)
        logits = ad.matmul(out.pooled, head_w)
        return ad.cross_entropy(logits, [2])

    with Tape() as tape:
        loss = forward()
    grads = tape.backward(loss)
    table = enc.parameters()["encoder.embedding"]
    numeric = numeric_gradient(lambda: forward().item(), table)
    assert max_rel_err(grads.wrt(table), numeric) < 1e-4


def test_span_pool_single_token():
    enc = make_encoder()
    seq = tokenize("alpha beta gamma")
    out = enc.encode(seq)
    pooled = span_pool(out, seq, seq[1].span)
    assert np.allclose(pooled.data, out.hidden.data[1:2])


def test_span_pool_two_tokens_mean():
    enc = make_encoder()
    seq = tokenize("alpha beta gamma")
    out = enc.encode(seq)
    span = Span(seq[0].span.start, seq[1].span.end)
    pooled = span_pool(out, seq, span)
    assert np.allclose(pooled.data, out.hidden.data[0:2].mean(axis=0, keepdims=True))


def test_span_pool_whitespace_gap_raises():
    seq = tokenize("ab  cd")  # tokens at [0,2) and [4,6); char 2..4 is gap
    out = EncoderOutput(hidden=Tensor(np.zeros((2, 4))), pooled=Tensor(np.zeros((1, 4))))
    with pytest.raises(NoTokenOverlap):
        span_pool(out, seq, Span(2, 4))


def test_span_pool_split_invariance():
    # When all covered hidden states are equal the split across tokens is moot.
    hidden = np.tile(np.arange(4.0), (3, 1))
    out = EncoderOutput(hidden=Tensor(hidden), pooled=Tensor(hidden[:1]))
    seq = tokenize("aa bb cc")
    one = span_pool(out, seq, Span(0, 2)).data
    all_three = span_pool(out, seq, Span(0, 8)).data
    assert np.allclose(one, all_three)


def record(text="Tesla up big", rid="r1"):
    return Record(id=rid, split="train", text=text, emotion="optimism")


def test_state_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    hidden = rng.standard_normal((3, 8))
    pooled = rng.standard_normal(8)
    path = tmp_path / "states.bin"
    write_encoder_states(path, [("r1", [(0, 5), (6, 8), (9, 12)], hidden, pooled)])
    stored = read_encoder_states(path)["r1"]
    assert stored.offsets == ((0, 5), (6, 8), (9, 12))
    assert stored.hidden.tobytes() == hidden.tobytes()
    assert stored.pooled.tobytes() == pooled.tobytes()


def test_file_encoder_missing_id(tmp_path):
    path = tmp_path / "states.bin"
    write_encoder_states(path, [("r1", [(0, 5)], np.zeros((1, 8)), np.zeros(8))])
    enc = FileEncoder(path, width=8)
    with pytest.raises(EncoderError) as err:
        enc.load_precomputed("xyz")
    assert "xyz" in str(err.value)


def test_file_encoder_width_mismatch(tmp_path):
    path = tmp_path / "states.bin"
    write_encoder_states(path, [("r1", [(0, 5)], np.zeros((1, 768)), np.zeros(768))])
    enc = FileEncoder(path, width=64)
    with pytest.raises(EncoderError) as err:
        enc.load_precomputed("r1")
    assert "768" in str(err.value) and "64" in str(err.value)


def test_file_encoder_states_are_frozen(tmp_path):
    path = tmp_path / "states.bin"
    write_encoder_states(path, [("r1", [(0, 5)], np.ones((1, 4)), np.ones(4))])
    enc = FileEncoder(path, width=4)
    seq, out = enc.encode_record(record())
    assert not out.hidden.requires_grad and not out.pooled.requires_grad
    assert seq[0].text == "tesla"


def test_provider_substitutability(tmp_path):
    # Exporting the toy encoder's states and reloading them through the file
    # provider must leave every downstream quantity unchanged.
    enc = make_encoder()
    rec = record("Tesla I'll buy back in")
    seq, out = enc.encode_record(rec)
    path = tmp_path / "states.bin"
    write_encoder_states(
        path, [(rec.id, [(t.span.start, t.span.end) for t in seq],
                out.hidden.data, out.pooled.data.reshape(-1))])
    file_enc = FileEncoder(path, width=16)
    seq2, out2 = file_enc.encode_record(rec)
    assert [t.text for t in seq2] == [t.text for t in seq]
    assert np.array_equal(out2.hidden.data, out.hidden.data)
    assert np.array_equal(out2.pooled.data, out.pooled.data)
    span = Span(seq[0].span.start, seq[0].span.end)
    assert np.array_equal(span_pool(out, seq, span).data,
                          span_pool(out2, seq2, span).data)


def test_rejects_non_state_file(tmp_path):
    path = tmp_path / "bogus.bin"
    path.write_bytes(b"OPFUSE-CKPT-1\nnope")
    with pytest.raises(EncoderError):
        read_encoder_states(path)
