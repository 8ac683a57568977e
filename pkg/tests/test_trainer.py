import numpy as np
import pytest

from tsgan.checkpoint import CheckpointError, read_blobs, read_sidecar
from tsgan.config import TrainConfig
from tsgan.data import PairDataset, synth_toy_corpus
from tsgan.text import Vocabulary
from tsgan.trainer import Trainer, TrainingAborted, fit, load_checkpoint, read_trace, stream


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    man = synth_toy_corpus(6, 0, root, size=12)
    return man, Vocabulary.build(man.captions())


def _trainer(corpus, **over):
    man, vocab = corpus
    cfg = TrainConfig()
    cfg.update({"model.preset": "tiny", "trainer.batch_size": 2, "trainer.seed": 4, **over})
    ds = PairDataset(man, vocab, cfg.model.image_size, cfg.model.text_len, train=True)
    return Trainer(cfg, vocab, ds)


def _snapshot(params):
    return {p.name: p.data.copy() for p in params}


def test_streams_are_independent_and_reproducible():
    a = stream(1, "z", 3).standard_normal(4)
    np.testing.assert_array_equal(a, stream(1, "z", 3).standard_normal(4))
    assert not np.array_equal(a, stream(1, "ca", 3).standard_normal(4))
    assert not np.array_equal(a, stream(1, "z", 4).standard_normal(4))


def test_step_updates_every_group_and_leaves_codec(corpus):
    tr = _trainer(corpus)
    m = tr.model
    codec = m.codec.mixing.data.tobytes()
    before = {g: _snapshot(m.store.group(g)) for g in ("text.", "gen.", "disc0.", "disc1.")}
    report = tr.train_step()
    assert m.codec.mixing.data.tobytes() == codec
    for g, snap in before.items():
        assert any(not np.array_equal(snap[p.name], p.data) for p in m.store.group(g)), g
    assert report.l_g_total == pytest.approx(report.l_g + 0.1 * (report.l_s_stage0 + report.l_s_stage1))
    assert report.l_d_total == pytest.approx(report.l_d + 0.1 * (report.l_s_stage0 + report.l_s_stage1))
    assert all(p.step_count == 1 for p in m.store.values())


def test_text_encoder_only_moves_in_generator_phase(corpus):
    tr = _trainer(corpus)
    snap = _snapshot(tr.model.text_params())
    gen = _snapshot(tr.model.generator_params())
    tr.discriminator_phase({})
    for p in tr.model.text_params():
        np.testing.assert_array_equal(snap[p.name], p.data)
    for p in tr.model.generator_params():
        np.testing.assert_array_equal(gen[p.name], p.data)


def test_stage1_variant(corpus):
    tr = _trainer(corpus, **{"model.variant": "stage1"})
    report = tr.train_step()
    assert np.isnan(report.l_s_stage1) and tr.model.stages == 1
    assert tr.draws_per_step == 2


def test_runs_are_deterministic(corpus):
    a, b = _trainer(corpus), _trainer(corpus)
    for _ in range(3):
        ra, rb = a.train_step(), b.train_step()
        assert (ra.l_g, ra.l_d, ra.l_s_stage0, ra.l_s_stage1) == (rb.l_g, rb.l_d, rb.l_s_stage0, rb.l_s_stage1)


def test_checkpoint_roundtrip_is_byte_identical(corpus, tmp_path):
    tr = _trainer(corpus)
    tr.train_step()
    tr.save_checkpoint(tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt", train_set=tr.train_set)
    back.save_checkpoint(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt.json").read_bytes() == (tmp_path / "b.ckpt.json").read_bytes()
    assert read_sidecar(tmp_path / "a.ckpt")["step"] == 1


def test_checkpoint_corruption_is_rejected(corpus, tmp_path):
    tr = _trainer(corpus)
    tr.save_checkpoint(tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[len(raw) // 2] ^= 0x40
    (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        read_blobs(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(bytes(raw[:40]))
    with pytest.raises(CheckpointError):
        read_blobs(tmp_path / "short.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[7] = 99
    (tmp_path / "ver.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        read_blobs(tmp_path / "ver.ckpt")


def test_resume_matches_uninterrupted_run(corpus, tmp_path):
    full = _trainer(corpus)
    reference = [full.train_step() for _ in range(6)]
    part = _trainer(corpus)
    for _ in range(3):
        part.train_step()
    part.save_checkpoint(tmp_path / "k.ckpt")
    resumed = load_checkpoint(tmp_path / "k.ckpt", train_set=part.train_set)
    for ref in reference[3:]:
        got = resumed.train_step()
        for key in ("l_g", "l_d", "l_s_stage0", "l_s_stage1"):
            assert abs(getattr(got, key) - getattr(ref, key)) <= 1e-12


def test_evaluate_forced_perfect_style(corpus):
    tr = _trainer(corpus)
    model = tr.model
    original = model.generate

    def perfect(*args, **kwargs):
        gen = original(*args, **kwargs)
        gen.stages[-1] = model.render(gen.content, gen.target)
        return gen

    model.generate = perfect
    result = tr.evaluate(tr.train_set)
    assert result.sl_mean == 0.0 and result.psnr_mean == 99.0 and result.n == 6


def test_evaluate_is_deterministic(corpus):
    tr = _trainer(corpus)
    assert tr.evaluate(tr.train_set).as_dict() == tr.evaluate(tr.train_set).as_dict()


def test_numeric_abort_carries_scores(corpus, monkeypatch):
    import tsgan.trainer as trainer_mod
    from tsgan.autodiff import NumericError

    def broken(scores):
        raise NumericError("non-finite values produced by log")

    monkeypatch.setattr(trainer_mod, "generator_loss", broken)
    tr = _trainer(corpus)
    with pytest.raises(TrainingAborted) as info:
        tr.train_step()
    assert set(info.value.scores) >= {f"d{t}.{k}.{b}" for t in (0, 1) for k in ("real", "fake")
                                      for b in ("s_i", "s_s", "s_ci", "s_cs")}
    assert "step 0" in str(info.value)


def test_overflow_in_forward_aborts(corpus):
    tr = _trainer(corpus)
    tr.model.store["gen.sg0.fc1.weight"].data[...] = np.float32(1e30)
    with pytest.raises(TrainingAborted, match="non-finite"):
        tr.train_step()


def test_discriminator_only_steps_leave_generator(corpus):
    tr = _trainer(corpus)
    snap = _snapshot(tr.model.generator_params() + tr.model.text_params())
    for _ in range(2):
        tr.discriminator_only_step()
    assert tr.step == 2
    for p in tr.model.generator_params() + tr.model.text_params():
        np.testing.assert_array_equal(snap[p.name], p.data)


def test_fit_writes_outputs_and_resumes(corpus, tmp_path):
    tr = _trainer(corpus, **{"trainer.max_steps": 4, "trainer.eval_every": 2, "trainer.checkpoint_every": 2})
    fit(tr, tmp_path / "run")
    rows = read_trace(tmp_path / "run" / "trace.csv")
    assert [r["step"] for r in rows] == ["1", "2", "3", "4"]
    assert rows[1]["sl_eval"] and not rows[0]["sl_eval"]
    for name in ("trace.png", "config.json", "vocab.txt", "samples/step_000002.png",
                 "checkpoints/step_000002.ckpt", "checkpoints/final.ckpt"):
        assert (tmp_path / "run" / name).exists(), name

    again = load_checkpoint(tmp_path / "run" / "checkpoints" / "step_000002.ckpt", train_set=tr.train_set)
    fit(again, tmp_path / "run", resumed=True)
    assert read_trace(tmp_path / "run" / "trace.csv") == rows
