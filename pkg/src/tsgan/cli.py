"""Command-line entry point: ``tsgan {synth-data,train,eval,stylize,inspect}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig

log = logging.getLogger("tsgan")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _keys_help() -> str:
    lines = ["configuration keys (JSON file or key=value overrides):"]
    for key, f in TrainConfig.keys().items():
        lines.append(f"  {key:<26} default {f.default!r:<14} {f.metadata['help']}")
    return "\n".join(lines)


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None and not p.exists() and (base / p).exists():
        return base / p
    return p


def _load_config(path: str | None, overrides: list[str]) -> tuple[TrainConfig, Path | None]:
    cfg = TrainConfig.load(path) if path else TrainConfig()
    cfg.apply_overrides(overrides)
    return cfg, Path(path).parent if path else None


# -- subcommands ------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    from .data import synth_toy_corpus
    from .text import Vocabulary

    if args.n < 1:
        raise UsageError("--n must be at least 1")
    man = synth_toy_corpus(args.n, args.seed, args.out, size=args.size)
    vocab = Vocabulary.build(man.captions())
    print(f"wrote {len(man)} images and {Path(args.out) / 'manifest.jsonl'}; "
          f"{len(vocab) - 2} distinct caption words")
    return EXIT_OK


def _datasets(cfg: TrainConfig, base: Path | None, vocab=None):
    from .data import PairDataset, load_manifest
    from .text import Vocabulary

    if not cfg.manifest:
        raise UsageError("data.manifest is not set")
    man = load_manifest(_resolve(cfg.manifest, base), split="train")
    if not len(man):
        raise UsageError(f"{cfg.manifest}: no usable records")
    vocab = vocab or Vocabulary.build(man.captions())
    p = cfg.model
    train = PairDataset(man, vocab, p.image_size, p.text_len, train=True)
    if cfg.val_manifest:
        vman = load_manifest(_resolve(cfg.val_manifest, base), split="val")
        val = PairDataset(vman, vocab, p.image_size, p.text_len, train=False)
    else:
        val = PairDataset(man, vocab, p.image_size, p.text_len, train=False)
    return vocab, train, val


def cmd_train(args) -> int:
    from .trainer import Trainer, TrainingAborted, fit, load_checkpoint

    cfg, base = _load_config(args.config, args.overrides)
    if args.resume:
        trainer = load_checkpoint(args.resume, config=cfg)
        vocab, train, val = _datasets(cfg, base, vocab=trainer.vocab)
        trainer.train_set = train
        from .data import BatchSchedule
        trainer.schedule = BatchSchedule(len(train), cfg.batch_size, cfg.seed)
    else:
        vocab, train, val = _datasets(cfg, base)
        trainer = Trainer(cfg, vocab, train)
    out = Path(args.out or cfg.out_dir)
    try:
        fit(trainer, out, val, resumed=bool(args.resume))
    except TrainingAborted as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        print(json.dumps(err.scores, indent=1, sort_keys=True), file=sys.stderr)
        return EXIT_NUMERIC
    print(f"trained to step {trainer.step}; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import PairDataset, load_manifest
    from .report import plot_styles
    from .trainer import load_checkpoint

    cfg, base = _load_config(args.config, args.overrides) if args.config else (None, None)
    trainer = load_checkpoint(args.ckpt, config=cfg)
    man = load_manifest(args.manifest, split="val")
    if not len(man):
        raise UsageError(f"{args.manifest}: no usable records")
    p = trainer.model.preset
    ds = PairDataset(man, trainer.vocab, p.image_size, p.text_len, train=False)
    result = trainer.evaluate(ds)
    report = {**result.as_dict(), "checkpoint": str(args.ckpt), "manifest": str(args.manifest),
              "step": trainer.step, "sl_vector_length": 2 * p.style_channels}
    out = Path(args.out) if args.out else Path(str(args.ckpt) + ".eval.json")
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _, gen = trainer.generate_eval(ds, [0])
    plot_styles(tuple(a[0] for a in gen.target.numpy()),
                [tuple(a[0] for a in st.style.numpy()) for st in gen.stages], out.with_suffix(".png"))
    print(f"SL_mean {result.sl_mean:.6f}")
    print(f"PSNR_mean {result.psnr_mean:.4f}")
    return EXIT_OK


def cmd_stylize(args) -> int:
    from . import autodiff as ad
    from .codec import load_png, save_png
    from .data import center_resize
    from .report import plot_styles
    from .text import tokenize
    from .trainer import load_checkpoint, stream

    if not Path(args.image).exists():
        raise UsageError(f"image not found: {args.image}")
    trainer = load_checkpoint(args.ckpt)
    model, p = trainer.model, trainer.model.preset
    image = center_resize(load_png(args.image), p.image_size)[None]
    tokens, n = tokenize(args.caption, trainer.vocab, p.text_len)
    z = stream(args.seed, "z", 0).standard_normal((1, p.z_dim))
    noise = stream(args.seed, "ca", 0).standard_normal((1, p.cond_dim))
    with ad.no_grad():
        gen = model.generate(image, tokens[None], np.array([n]), z, noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_png(image[0], out / "input.png")
    for i, st in enumerate(gen.stages):
        save_png(st.image.data[0], out / f"stage{i + 1}.png")
    mu, sigma = (a[0] for a in gen.final.style.numpy())
    (out / "style.json").write_text(json.dumps(
        {"caption": args.caption, "seed": args.seed, "mu": mu.tolist(), "sigma": sigma.tolist()},
        indent=1) + "\n")
    plot_styles(tuple(a[0] for a in gen.target.numpy()),
                [tuple(a[0] for a in st.style.numpy()) for st in gen.stages], out / "styles.png")
    print(f"wrote {len(gen.stages)} stylized images to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .checkpoint import read_sidecar
    from .report import plot_trace
    from .trainer import load_checkpoint

    if not args.ckpt and not args.trace:
        raise UsageError("give --ckpt and/or --trace")
    if args.ckpt:
        trainer = load_checkpoint(args.ckpt)
        meta = read_sidecar(args.ckpt)
        store = trainer.model.store
        print(f"checkpoint {args.ckpt}: step {trainer.step}, preset {trainer.config.preset}, "
              f"variant {trainer.config.variant}, vocabulary {len(trainer.vocab)}")
        groups = ["text."] + ["gen."] + [f"disc{t}." for t in range(trainer.model.stages)]
        for g in groups:
            n = sum(p.data.size for p in store.group(g))
            print(f"  {g:<8} {len(store.group(g)):>3} tensors {n:>10,d} values")
        print(f"  rng: {json.dumps(meta['rng'], sort_keys=True)}")
    if args.trace:
        out = Path(args.out) if args.out else Path(args.trace).with_suffix(".png")
        plot_trace(args.trace, out)
        print(f"trace figure written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsgan", description="Text-guided two-stage style generation.",
                     epilog=_keys_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write the procedural toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="adversarial training", epilog=_keys_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--resume", metavar="CKPT")
    p.add_argument("--out", help="output directory (default: output.dir)")
    p.add_argument("overrides", nargs="*", metavar="key=value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="SL / PSNR on a manifest")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="JSON report path (default: <ckpt>.eval.json)")
    p.add_argument("overrides", nargs="*", metavar="key=value")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stylize", help="restyle one image from a caption")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("inspect", help="summarise a checkpoint and/or plot a trace")
    p.add_argument("--ckpt")
    p.add_argument("--trace")
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, FileNotFoundError, ValueError) as err:
        print(f"tsgan {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
