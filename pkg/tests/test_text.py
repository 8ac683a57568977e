import numpy as np
import pytest

from tsgan import autodiff as ad
from tsgan.gradcheck import numerical_gradient, relative_error
from tsgan.params import ParamStore
from tsgan.text import PAD, UNK, TextEncoder, Vocabulary, tokenize


def _vocab():
    return Vocabulary(["the", "dog"])


def test_tokenize_examples():
    v = _vocab()
    assert v.stoi["the"] == 2 and v.stoi["dog"] == 3
    ids, n = tokenize("The Dog!", v, 4)
    assert ids.tolist() == [2, 3, 0, 0] and n == 2
    ids, n = tokenize("", v, 4)
    assert ids.tolist() == [0, 0, 0, 0] and n == 0
    ids, n = tokenize(" ".join(["dog"] * 20), v, 18)
    assert len(ids) == 18 and n == 18
    assert tokenize("a cat", v, 3)[0].tolist() == [UNK, UNK, PAD]


def test_vocabulary_build_and_roundtrip(tmp_path):
    v = Vocabulary.build(["a warm scene", "a cold scene", "warm!"])
    assert v.itos[:2] == ["<pad>", "<unk>"]
    assert v.itos[2:5] == ["a", "scene", "warm"]  # by frequency, then alphabetical
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text(encoding="utf-8").splitlines()
    assert lines[3] == "scene"
    assert Vocabulary.load(tmp_path / "vocab.txt") == v


def test_vocabulary_cap():
    v = Vocabulary.build([f"w{i}" for i in range(100)], max_size=10)
    assert len(v) == 10


def _encoder(d=8, cond=6, vocab=12, seed=0, dtype=np.float64):
    store = ParamStore(np.random.default_rng(seed), dtype=dtype)
    return TextEncoder(store, vocab, d, cond), store


def test_encode_shapes_paper_preset():
    enc, _ = _encoder(d=256, cond=100, vocab=50, dtype=np.float32)
    tokens = np.random.default_rng(0).integers(2, 50, size=(2, 18))
    feats = enc.encode(tokens)
    assert feats.e.shape == (2, 256, 18) and feats.e_bar.shape == (2, 256)
    cv = enc.condition(feats.e_bar, rng=np.random.default_rng(1))
    assert cv.e_c.shape == (2, 100)


def test_all_pad_columns_are_equal():
    enc, _ = _encoder()
    feats = enc.encode(np.zeros((1, 5), dtype=int))
    e = feats.e.data[0]
    assert np.all(e == e[:, :1]) and feats.lengths[0] == 0 and not feats.mask.any()


def test_padding_length_does_not_change_sentence_feature():
    enc, _ = _encoder()
    short = np.array([[3, 4, 5, 0, 0]])
    long = np.array([[3, 4, 5, 0, 0, 0, 0, 0, 0]])
    a, b = enc.encode(short), enc.encode(long)
    np.testing.assert_array_equal(a.e_bar.data, b.e_bar.data)
    np.testing.assert_array_equal(a.e.data[..., :3], b.e.data[..., :3])


def test_explicit_length_masks_trailing_tokens():
    enc, _ = _encoder()
    a = enc.encode(np.array([[3, 4, 0]]), lengths=np.array([2]))
    b = enc.encode(np.array([[3, 4, 9]]), lengths=np.array([2]))
    np.testing.assert_array_equal(a.e_bar.data, b.e_bar.data)


def test_out_of_range_token():
    enc, _ = _encoder(vocab=5)
    with pytest.raises(IndexError):
        enc.encode(np.array([[1, 7]]))


def test_condition_reparameterisation():
    enc, _ = _encoder()
    e_bar = enc.encode(np.array([[2, 3, 4]])).e_bar
    zero = enc.condition(e_bar, noise=np.zeros((1, 6)))
    np.testing.assert_array_equal(zero.e_c.data, zero.ca_mu.data)
    a = enc.condition(e_bar, rng=np.random.default_rng(5))
    b = enc.condition(e_bar, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a.e_c.data, b.e_c.data)
    expected = a.ca_mu.data + np.exp(0.5 * a.ca_logvar.data) * a.noise
    np.testing.assert_allclose(a.e_c.data, expected, rtol=1e-12)


def test_encoder_is_deterministic():
    enc, _ = _encoder()
    t = np.array([[2, 5, 7, 0]])
    np.testing.assert_array_equal(enc.encode(t).e.data, enc.encode(t).e.data)


def test_gradient_reaches_embedding_and_recurrent_weights():
    enc, store = _encoder()
    tokens = np.array([[2, 5, 7, 0], [3, 3, 0, 0]])
    noise = np.random.default_rng(2).normal(size=(2, 6))
    probe_e = np.random.default_rng(3).normal(size=(2, 8, 4))

    def loss():
        f = enc.encode(tokens)
        cv = enc.condition(f.e_bar, noise=noise)
        return ad.add(ad.sum_(ad.mul(f.e, probe_e)), ad.sum_(ad.mul(cv.e_c, cv.e_c)))

    store.zero_grad()
    ad.backward(loss())
    for name in ("text.embed", "text.fwd.w_h", "text.bwd.w_x", "text.ca.weight"):
        p = store[name]
        assert p.grad is not None and np.abs(p.grad).sum() > 0
        numeric = numerical_gradient(lambda: float(loss().data), p.data)
        assert relative_error(p.grad, numeric) < 1e-5, name
    # PAD row never receives gradient (its lookup is masked)
    assert not store["text.embed"].grad[PAD].any()
