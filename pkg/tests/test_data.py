import json

import numpy as np
import pytest

from tsgan.codec import save_png
from tsgan.data import (PALETTES, BatchSchedule, ManifestError, PairDataset, augment, batch_iter,
                        dominant_channel, load_manifest, synth_toy_corpus, toy_sample, write_manifest)
from tsgan.text import Vocabulary


def _images(root, n):
    (root / "img").mkdir(exist_ok=True)
    rng = np.random.default_rng(0)
    for i in range(n):
        save_png(rng.uniform(size=(3, 12, 12)), root / "img" / f"{i}.png")


def test_manifest_valid_and_dropped(tmp_path):
    _images(tmp_path, 3)
    rows = [{"image_path": f"img/{i}.png", "caption": f"a calm scene {i}"} for i in range(3)]
    rows.append({"image_path": "img/0.png", "caption": "ab"})
    rows.append({"image_path": "img/0.png", "caption": "another caption for the same image"})
    write_manifest(tmp_path / "m.jsonl", rows)
    man = load_manifest(tmp_path / "m.jsonl")
    assert len(man) == 4 and man.dropped == 1
    assert sum(r.image_path.name == "0.png" for r in man.records) == 2


def test_manifest_malformed_line_number(tmp_path):
    _images(tmp_path, 1)
    (tmp_path / "m.jsonl").write_text(
        json.dumps({"image_path": "img/0.png", "caption": "fine caption"}) + "\n{not json\n")
    with pytest.raises(ManifestError, match=":2:"):
        load_manifest(tmp_path / "m.jsonl")
    (tmp_path / "k.jsonl").write_text(json.dumps({"caption": "no path here"}) + "\n")
    with pytest.raises(ManifestError, match=":1:"):
        load_manifest(tmp_path / "k.jsonl")


def test_manifest_missing_image_is_skipped(tmp_path, caplog):
    _images(tmp_path, 1)
    write_manifest(tmp_path / "m.jsonl", [{"image_path": "img/0.png", "caption": "present image"},
                                          {"image_path": "img/9.png", "caption": "missing image"}])
    man = load_manifest(tmp_path / "m.jsonl")
    assert len(man) == 1 and "missing image" in caplog.text


def test_augment_properties():
    img = np.random.default_rng(1).uniform(size=(3, 40, 48)).astype(np.float32)
    a = augment(img, np.random.default_rng(7), 32)
    b = augment(img, np.random.default_rng(7), 32)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (3, 32, 32) and a.min() >= 0 and a.max() <= 1
    for seed in range(20):
        assert augment(img, np.random.default_rng(seed), 24).shape == (3, 24, 24)


def test_flip_is_involution():
    img = np.random.default_rng(2).uniform(size=(3, 16, 16)).astype(np.float32)
    plain = augment(img, np.random.default_rng(3), 16, flip=False)
    flipped = augment(img, np.random.default_rng(3), 16, flip=True)
    np.testing.assert_array_equal(flipped[:, :, ::-1], plain)


def test_augment_upscales_small_source(caplog):
    out = augment(np.full((3, 8, 8), 0.5, np.float32), np.random.default_rng(0), 16)
    assert out.shape == (3, 16, 16) and "upscaling" in caplog.text


def test_toy_corpus_is_deterministic(tmp_path):
    a = synth_toy_corpus(8, 1, tmp_path / "a", size=32)
    b = synth_toy_corpus(8, 1, tmp_path / "b", size=32)
    assert a.captions() == b.captions()
    for ra, rb in zip(a.records, b.records):
        assert ra.image_path.read_bytes() == rb.image_path.read_bytes()
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()
    c = synth_toy_corpus(8, 2, tmp_path / "c", size=32)
    assert c.captions() != a.captions()


def test_golden_palette_channel_order():
    rng = np.random.default_rng(0)
    seen = 0
    while seen < 5:
        img, caption, palette = toy_sample(rng, 32)
        if palette == "golden":
            r, g, b = img.mean(axis=(1, 2))
            assert r > g > b and "golden" in caption
            seen += 1


def test_toy_vocabulary_is_small():
    rng = np.random.default_rng(4)
    caps = [toy_sample(rng, 8)[1] for _ in range(400)]
    assert len(Vocabulary.build(caps)) - 2 <= 64


def test_palette_word_predicts_dominant_channel():
    rng = np.random.default_rng(5)
    for _ in range(120):
        img, caption, palette = toy_sample(rng, 16)
        assert palette in caption.split()
        assert int(np.argmax(img.mean(axis=(1, 2)))) == dominant_channel(palette)
    assert len(PALETTES) == 8


def test_batch_iter(tmp_path):
    man = synth_toy_corpus(10, 0, tmp_path, size=8)
    batches = list(batch_iter(man, 4, seed=3))
    assert len(batches) == 2 and all(len(b) == 4 for b in batches)
    again = list(batch_iter(man, 4, seed=3))
    assert [[r.id for r in b] for b in batches] == [[r.id for r in b] for b in again]
    sched = BatchSchedule(10, 4, seed=3)
    assert not np.array_equal(sched.permutation(0), sched.permutation(1))
    np.testing.assert_array_equal(sched.indices(2), sched.permutation(1)[:4])
    with pytest.raises(ValueError):
        BatchSchedule(3, 4, 0)
    with pytest.raises(ValueError):
        BatchSchedule(0, 1, 0)


def test_dataset_augments_only_training_split(tmp_path):
    man = synth_toy_corpus(4, 0, tmp_path, size=24)
    vocab = Vocabulary.build(man.captions())
    train = PairDataset(man, vocab, 16, 8, train=True)
    val = PairDataset(man, vocab, 16, 8, train=False)
    a = val.batch([0, 1])
    np.testing.assert_array_equal(a.images, val.batch([0, 1]).images)
    assert a.images.shape == (2, 3, 16, 16) and a.tokens.shape == (2, 8)
    t1 = train.batch([0, 1], np.random.default_rng(1))
    t2 = train.batch([0, 1], np.random.default_rng(2))
    assert not np.array_equal(t1.images, t2.images)
    with pytest.raises(ValueError):
        train.batch([0])
