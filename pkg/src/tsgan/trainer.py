"""Adversarial training loop, evaluation and checkpoint round trips.

Every random draw is a pure function of the master seed and a counter
(step, phase or sample index), so a run resumed from a checkpoint replays
exactly the same noise, batches and augmentations as an uninterrupted one.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .checkpoint import read_blobs, read_sidecar, write_blobs, write_sidecar, VERSION
from .config import TrainConfig
from .data import BatchSchedule, PairDataset
from .model import TSGModel
from .objectives import (LossReport, discriminator_loss, generator_loss, metric_psnr, metric_sl,
                         pearson_scalar, style_loss, total_losses)
from .params import adam_step
from .text import Vocabulary

log = logging.getLogger(__name__)

STREAMS = {"init": 1, "z": 2, "ca": 3, "augment": 4, "shuffle": 5, "eval": 6}
TRACE_FIELDS = ["step", "l_g", "l_d", "l_s0", "l_s1", "sl_eval", "psnr_eval"]


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name], *counters])


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, scores: dict[str, float]):
        super().__init__(message)
        self.scores = scores


@dataclass
class EvalResult:
    sl_mean: float
    psnr_mean: float
    rho_mean: float
    sl_stage0_mean: float
    n: int

    def as_dict(self) -> dict[str, float]:
        return {"SL_mean": self.sl_mean, "PSNR_mean": self.psnr_mean, "rho_mean": self.rho_mean,
                "SL_stage0_mean": self.sl_stage0_mean, "n": self.n}


class Trainer:
    def __init__(self, config: TrainConfig, vocab: Vocabulary, train_set: PairDataset,
                 model: TSGModel | None = None):
        self.config = config
        self.vocab = vocab
        self.train_set = train_set
        preset = config.model
        stages = 2 if config.variant == "full" else 1
        self.model = model or TSGModel(preset, len(vocab), seed=[config.seed, STREAMS["init"]],
                                       stages=stages, mixing_seed=config.mixing_seed)
        self.schedule = BatchSchedule(len(train_set), config.batch_size, config.seed)
        self.step = 0
        self._last_scores: dict[str, float] = {}

    # -- sampling -----------------------------------------------------------------
    @property
    def draws_per_step(self) -> int:
        return self.model.stages + 1

    def draw(self, step: int, phase: int):
        """Batch, noise z and conditioning noise for one phase of one step."""
        k = step * self.draws_per_step + phase
        b, p = self.config.batch_size, self.model.preset
        batch = self.train_set.batch(self.schedule.indices(k), rng=stream(self.config.seed, "augment", k),
                                     augment_images=self.config.augment and self.train_set.train)
        z = stream(self.config.seed, "z", k).standard_normal((b, p.z_dim))
        noise = stream(self.config.seed, "ca", k).standard_normal((b, p.cond_dim))
        return batch, z, noise

    # -- one step -------------------------------------------------------------------
    def train_step(self) -> LossReport:
        try:
            return self._train_step()
        except NumericError as err:
            raise TrainingAborted(f"step {self.step}: {err}; last branch scores {self._last_scores}",
                                  dict(self._last_scores)) from err

    def discriminator_phase(self, scores: dict[str, float]) -> float:
        """One update of every stage's discriminator; returns the summed L_D."""
        cfg, model = self.config, self.model
        l_d_sum = 0.0
        for t in range(model.stages):
            batch, z, noise = self.draw(self.step, t)
            with ad.no_grad():
                gen = model.generate(batch.images, batch.tokens, batch.lengths, z, noise)
            disc = model.discriminators[t]
            fake = gen.stages[t]
            real_scores = disc(Tensor(batch.images.astype(model.dtype)), gen.target, gen.text.e_bar)
            fake_scores = disc(fake.image, fake.style, gen.text.e_bar)
            for name, v in real_scores.items():
                scores[f"d{t}.real.{name}"] = float(v.data.mean())
            for name, v in fake_scores.items():
                scores[f"d{t}.fake.{name}"] = float(v.data.mean())
            self._last_scores = scores
            l_d = discriminator_loss(real_scores, fake_scores)
            l_s = style_loss(gen.target.concat(), fake.style.concat())
            model.store.zero_grad()
            ad.backward(l_d + cfg.lambda_style * l_s)
            adam_step(model.discriminator_params(t), cfg.lr_d, cfg.beta1, cfg.beta2)
            l_d_sum += float(l_d.data)
        return l_d_sum

    def discriminator_only_step(self) -> dict[str, float]:
        """Update the discriminators against the current, untouched generator."""
        scores: dict[str, float] = {}
        try:
            self.discriminator_phase(scores)
        except NumericError as err:
            raise TrainingAborted(f"step {self.step}: {err}", dict(self._last_scores)) from err
        self.model.store.zero_grad()
        self.step += 1
        return scores

    def _train_step(self) -> LossReport:
        cfg, model = self.config, self.model
        lam = cfg.lambda_style
        scores: dict[str, float] = {}
        l_d_sum = self.discriminator_phase(scores)

        batch, z, noise = self.draw(self.step, model.stages)
        gen = model.generate(batch.images, batch.tokens, batch.lengths, z, noise)
        e_bar = gen.text.e_bar.detach()
        fakes = [disc(st.image, st.style, e_bar) for disc, st in zip(model.discriminators, gen.stages)]
        for t, fs in enumerate(fakes):
            for name, v in fs.items():
                scores[f"g{t}.fake.{name}"] = float(v.data.mean())
        l_g = generator_loss(fakes)
        l_s = [style_loss(gen.target.concat(), st.style.concat()) for st in gen.stages]
        l_g_total, _ = total_losses(l_g, 0.0, l_s, lam)
        model.store.zero_grad()
        ad.backward(l_g_total)
        adam_step(model.generator_params(), cfg.lr_g, cfg.beta1, cfg.beta2)
        adam_step(model.text_params(), cfg.lr_t, cfg.beta1, cfg.beta2)
        model.store.zero_grad()  # discriminator grads from the G pass are discarded

        self.step += 1
        ls = [float(x.data) for x in l_s]
        g_tot, d_tot = total_losses(float(l_g.data), l_d_sum, ls, lam)
        self._last_scores = scores
        return LossReport(l_g=float(l_g.data), l_d=l_d_sum, l_s_stage0=ls[0],
                          l_s_stage1=ls[1] if len(ls) > 1 else math.nan,
                          l_g_total=g_tot, l_d_total=d_tot, scores=scores)

    # -- evaluation -----------------------------------------------------------------
    def generate_eval(self, dataset: PairDataset, indices, seed: int | None = None):
        seed = self.config.seed if seed is None else seed
        p = self.model.preset
        batch = dataset.batch(indices, augment_images=False)
        z = np.stack([stream(seed, "eval", int(i), 0).standard_normal(p.z_dim) for i in batch.indices])
        noise = np.stack([stream(seed, "eval", int(i), 1).standard_normal(p.cond_dim) for i in batch.indices])
        with ad.no_grad():
            gen = self.model.generate(batch.images, batch.tokens, batch.lengths, z, noise)
        return batch, gen

    def evaluate(self, dataset: PairDataset, seed: int | None = None, chunk: int = 16) -> EvalResult:
        """SL and PSNR of the final stage against the input image's own style.

        The PSNR reference is the style-perfect reconstruction
        decode(adain(v, mu_gt, sigma_gt)).
        """
        if not len(dataset):
            raise ValueError("evaluation set is empty")
        sl, sl0, psnr, rho = [], [], [], []
        for start in range(0, len(dataset), chunk):
            idx = np.arange(start, min(start + chunk, len(dataset)))
            _, gen = self.generate_eval(dataset, idx, seed)
            with ad.no_grad():
                ref = self.model.render(gen.content, gen.target).image.data
            h = gen.target.concat().data
            h_final = gen.final.style.concat().data
            h0 = gen.stages[0].style.concat().data
            img = gen.final.image.data
            for j in range(len(idx)):
                sl.append(metric_sl(h[j], h_final[j]))
                sl0.append(metric_sl(h[j], h0[j]))
                psnr.append(metric_psnr(np.clip(img[j], 0, 1), np.clip(ref[j], 0, 1)))
            rho.extend(pearson_scalar(h, h_final).tolist())
        return EvalResult(float(np.mean(sl)), float(np.mean(psnr)), float(np.mean(rho)),
                          float(np.mean(sl0)), len(sl))

    # -- checkpoints ----------------------------------------------------------------
    def save_checkpoint(self, path: str | Path) -> None:
        blobs, adam_steps = {}, {}
        for name, p in self.model.store.items():
            blobs[name] = p.data
            blobs[name + "#adam_m"] = p.adam_m
            blobs[name + "#adam_v"] = p.adam_v
            adam_steps[name] = p.step_count
        write_blobs(path, blobs)
        write_sidecar(path, {
            "format_version": VERSION,
            "config": self.config.to_flat(),
            "vocab": self.vocab.itos,
            "step": self.step,
            "adam_steps": adam_steps,
            # every stream is keyed by (seed, stream id, draw counter); counters follow from step
            "rng": {"seed": self.config.seed, "streams": STREAMS, "draws": self.step * self.draws_per_step},
        })

    def load_state(self, path: str | Path) -> None:
        blobs = read_blobs(path)
        meta = read_sidecar(path)
        store = self.model.store
        missing = [n for n in store if n not in blobs]
        if missing:
            raise ValueError(f"checkpoint lacks parameters {missing[:3]}...")
        for name, p in store.items():
            if blobs[name].shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {blobs[name].shape} != model {p.shape}")
            p.data = blobs[name].copy()
            p.adam_m = blobs[name + "#adam_m"].copy()
            p.adam_v = blobs[name + "#adam_v"].copy()
            p.step_count = int(meta["adam_steps"][name])
            p.grad = None
        self.step = int(meta["step"])


def load_checkpoint(path: str | Path, train_set: PairDataset | None = None,
                    config: TrainConfig | None = None) -> Trainer:
    """Rebuild a trainer (model, vocabulary, counters) from a checkpoint.

    Without ``train_set`` the trainer can evaluate and generate but not step.
    """
    meta = read_sidecar(path)
    cfg = config or TrainConfig.from_flat(meta["config"])
    vocab = Vocabulary(meta["vocab"][2:])
    trainer = Trainer.__new__(Trainer)
    trainer.config, trainer.vocab, trainer.train_set = cfg, vocab, train_set
    stages = 2 if cfg.variant == "full" else 1
    trainer.model = TSGModel(cfg.model, len(vocab), seed=[cfg.seed, STREAMS["init"]], stages=stages,
                             mixing_seed=cfg.mixing_seed)
    trainer.schedule = BatchSchedule(len(train_set), cfg.batch_size, cfg.seed) if train_set else None
    trainer._last_scores = {}
    trainer.load_state(path)
    return trainer


class TraceWriter:
    """CSV loss trace; reopening truncates rows past ``resume_step``."""

    def __init__(self, path: str | Path, resume_step: int | None = None):
        self.path = Path(path)
        rows = []
        if resume_step is not None and self.path.exists():
            with open(self.path, newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["step"]) <= resume_step]
        with open(self.path, "w", newline="") as fh:
            w = csv.DictWriter(fh, TRACE_FIELDS)
            w.writeheader()
            w.writerows(rows)

    def append(self, step: int, report: LossReport, evaluation: EvalResult | None = None) -> None:
        row = {"step": step, "l_g": repr(report.l_g), "l_d": repr(report.l_d),
               "l_s0": repr(report.l_s_stage0),
               "l_s1": "" if math.isnan(report.l_s_stage1) else repr(report.l_s_stage1),
               "sl_eval": repr(evaluation.sl_mean) if evaluation else "",
               "psnr_eval": repr(evaluation.psnr_mean) if evaluation else ""}
        with open(self.path, "a", newline="") as fh:
            csv.DictWriter(fh, TRACE_FIELDS).writerow(row)


def read_trace(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def total_steps(config: TrainConfig, n: int) -> int:
    if config.max_steps > 0:
        return config.max_steps
    return config.epochs * (n // config.batch_size)


def fit(trainer: Trainer, out_dir: str | Path, val_set: PairDataset | None = None,
        resumed: bool = False) -> list[LossReport]:
    """Run to the configured step budget, writing trace, checkpoints, sample grids and figures."""
    from .report import plot_trace, save_sample_grid

    cfg = trainer.config
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "samples").mkdir(exist_ok=True)
    cfg.dump(out / "config.json")
    trainer.vocab.save(out / "vocab.txt")
    trace = TraceWriter(out / "trace.csv", resume_step=trainer.step if resumed else None)
    val = val_set or trainer.train_set
    end = total_steps(cfg, len(trainer.train_set))
    reports = []
    while trainer.step < end:
        report = trainer.train_step()
        reports.append(report)
        step = trainer.step
        evaluation = None
        if cfg.eval_every and step % cfg.eval_every == 0:
            evaluation = trainer.evaluate(val)
            save_sample_grid(trainer, val, out / "samples" / f"step_{step:06d}.png")
            log.info("step %d  SL %.5f  PSNR %.2f", step, evaluation.sl_mean, evaluation.psnr_mean)
        trace.append(step, report, evaluation)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            trainer.save_checkpoint(out / "checkpoints" / f"step_{step:06d}.ckpt")
    trainer.save_checkpoint(out / "checkpoints" / "final.ckpt")
    plot_trace(out / "trace.csv", out / "trace.png")
    return reports

