import json
import shutil

import numpy as np
import pytest

from tsgan.cli import main
from tsgan.config import TrainConfig
from tsgan.data import PairDataset, load_manifest, write_manifest
from tsgan.text import Vocabulary
from tsgan.trainer import Trainer, read_trace


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth-data", "--out", str(out), "--n", "8", "--seed", "1", "--size", "16"]) == 0
    return out


@pytest.fixture(scope="module")
def tiny_run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--out", str(out), f"data.manifest={corpus / 'manifest.jsonl'}",
                 "model.preset=tiny", "trainer.batch_size=2", "trainer.max_steps=4",
                 "trainer.eval_every=2", "trainer.checkpoint_every=2"])
    assert code == 0
    return out


def test_synth_data(corpus, tmp_path, capsys):
    assert len(list((corpus / "images").glob("*.png"))) == 8
    assert len((corpus / "manifest.jsonl").read_text().splitlines()) == 8
    again = tmp_path / "again"
    assert main(["synth-data", "--out", str(again), "--n", "8", "--seed", "1", "--size", "16"]) == 0
    for f in sorted((corpus / "images").glob("*.png")):
        assert f.read_bytes() == (again / "images" / f.name).read_bytes()
    assert (corpus / "manifest.jsonl").read_bytes() == (again / "manifest.jsonl").read_bytes()
    assert "wrote 8 images" in capsys.readouterr().out


def test_synth_data_rejects_zero(tmp_path, capsys):
    assert main(["synth-data", "--out", str(tmp_path), "--n", "0"]) == 1
    assert "--n" in capsys.readouterr().err


def test_train_desk_ten_steps(corpus, tmp_path):
    man = tmp_path / "m.jsonl"
    rows = [json.loads(line) for line in (corpus / "manifest.jsonl").read_text().splitlines()]
    for r in rows:
        r["image_path"] = str(corpus / r["image_path"])
    write_manifest(man, rows)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model.preset": "desk", "trainer.max_steps": 10, "trainer.eval_every": 0,
                               "trainer.checkpoint_every": 0, "data.manifest": "m.jsonl"}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    rows = read_trace(tmp_path / "run" / "trace.csv")
    assert len(rows) == 10 and rows[-1]["step"] == "10"
    assert (tmp_path / "run" / "trace.png").stat().st_size > 0


def test_train_bad_key(corpus, capsys):
    assert main(["train", "trainer.learning_rate=0.1"]) == 1
    assert "trainer.learning_rate" in capsys.readouterr().err
    assert main(["train", "trainer.batch_size=four"]) == 1


def test_train_outputs(tiny_run):
    assert [r["step"] for r in read_trace(tiny_run / "trace.csv")] == ["1", "2", "3", "4"]
    for name in ("checkpoints/final.ckpt", "checkpoints/final.ckpt.json", "samples/step_000004.png",
                 "trace.png", "config.json", "vocab.txt"):
        assert (tiny_run / name).exists(), name


def test_resume_continues_trace(corpus, tiny_run, tmp_path):
    run = tmp_path / "resumed"
    shutil.copytree(tiny_run, run)
    code = main(["train", "--config", str(run / "config.json"), "--out", str(run),
                 "--resume", str(run / "checkpoints" / "step_000002.ckpt")])
    assert code == 0
    assert read_trace(run / "trace.csv") == read_trace(tiny_run / "trace.csv")


def test_eval_and_report(corpus, tiny_run, tmp_path, capsys):
    ckpt = tiny_run / "checkpoints" / "final.ckpt"
    out = tmp_path / "eval.json"
    args = ["eval", "--ckpt", str(ckpt), "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out)]
    assert main(args) == 0
    printed = capsys.readouterr().out
    assert "SL_mean" in printed and "PSNR_mean" in printed
    first = json.loads(out.read_text())
    assert out.with_suffix(".png").exists()
    assert main(args) == 0
    assert json.loads(out.read_text()) == first


def test_eval_empty_manifest(tiny_run, tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    code = main(["eval", "--ckpt", str(tiny_run / "checkpoints" / "final.ckpt"),
                 "--manifest", str(tmp_path / "empty.jsonl")])
    assert code == 1


def test_eval_style_perfect_checkpoint(corpus, tmp_path, capsys):
    """A one-image set whose SG0 is hard-wired to emit that image's own style."""
    rows = [json.loads((corpus / "manifest.jsonl").read_text().splitlines()[0])]
    rows[0]["image_path"] = str(corpus / rows[0]["image_path"])
    write_manifest(tmp_path / "one.jsonl", rows)
    man = load_manifest(tmp_path / "one.jsonl")
    vocab = Vocabulary.build(man.captions())
    cfg = TrainConfig()
    cfg.update({"model.preset": "tiny", "model.variant": "stage1", "trainer.batch_size": 1})
    ds = PairDataset(man, vocab, cfg.model.image_size, cfg.model.text_len, train=False)
    tr = Trainer(cfg, vocab, ds)
    _, target = tr.model.analyse(ds.batch([0]).images)
    mu, sigma = (a[0].astype(np.float64) for a in target.numpy())
    store = tr.model.store
    store["gen.sg0.fc3.weight"].data[...] = 0
    store["gen.sg0.fc3.bias"].data[...] = np.concatenate([mu, np.log(np.expm1(sigma))])
    tr.save_checkpoint(tmp_path / "perfect.ckpt")
    out = tmp_path / "perfect.json"
    assert main(["eval", "--ckpt", str(tmp_path / "perfect.ckpt"), "--manifest", str(tmp_path / "one.jsonl"),
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["SL_mean"] < 1e-6
    assert report["PSNR_mean"] > 60


def test_stylize(corpus, tiny_run, tmp_path):
    ckpt = str(tiny_run / "checkpoints" / "final.ckpt")
    image = str(corpus / "images" / "00000.png")
    styles = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        assert main(["stylize", "--ckpt", ckpt, "--image", image, "--caption", "a cool calm scene of ocean stripes",
                     "--seed", str(seed), "--out", str(out)]) == 0
        for name in ("input.png", "stage1.png", "stage2.png", "styles.png"):
            assert (out / name).exists()
        from tsgan.codec import load_png
        assert load_png(out / "stage2.png").shape == (3, 8, 8)
        styles.append(json.loads((out / "style.json").read_text())["mu"])
    assert styles[0] != styles[1]
    assert main(["stylize", "--ckpt", ckpt, "--image", image, "--caption", "a cool calm scene of ocean stripes",
                 "--seed", "1", "--out", str(tmp_path / "s1b")]) == 0
    assert (tmp_path / "s1b" / "style.json").read_text() == (tmp_path / "s1" / "style.json").read_text()


def test_stylize_missing_image(tiny_run, tmp_path):
    code = main(["stylize", "--ckpt", str(tiny_run / "checkpoints" / "final.ckpt"), "--image",
                 str(tmp_path / "nope.png"), "--caption", "anything at all", "--out", str(tmp_path)])
    assert code == 1


def test_inspect(tiny_run, tmp_path, capsys):
    assert main(["inspect", "--ckpt", str(tiny_run / "checkpoints" / "final.ckpt"),
                 "--trace", str(tiny_run / "trace.csv"), "--out", str(tmp_path / "t.png")]) == 0
    text = capsys.readouterr().out
    assert "step 4" in text and "disc1." in text
    assert (tmp_path / "t.png").stat().st_size > 0
    assert main(["inspect"]) == 1


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for key in TrainConfig.keys():
        assert key in text
    assert "0.0002" in text and "160" in text


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as info:
        main(["train", "--no-such-flag"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
