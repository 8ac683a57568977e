"""The assembled system: frozen codec, text encoder, style generator, discriminators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import ImageCodec, StylePair, adain_merge, normalize, style_extract
from .config import ModelPreset
from .discriminator import Discriminator
from .generator import StyleGenerator
from .params import ParamStore
from .text import ConditionedVector, TextEncoder, TextFeatures


@dataclass
class StageOutput:
    style: StylePair
    feature: Tensor
    image: Tensor


@dataclass
class Generation:
    content: Tensor          # normalized v
    target: StylePair        # style of the input image
    text: TextFeatures
    cond: ConditionedVector
    stages: list[StageOutput]

    @property
    def final(self) -> StageOutput:
        return self.stages[-1]


class TSGModel:
    """All parameters live in one :class:`ParamStore` under the prefixes
    ``text.`` (text encoder), ``gen.`` (SG0, synthesis, SG1) and
    ``disc0.`` / ``disc1.`` (one discriminator set per stage)."""

    def __init__(self, preset: ModelPreset, vocab_size: int, seed: int = 0, stages: int = 2,
                 mixing_seed: int = 0, dtype=np.float32):
        if stages not in (1, 2):
            raise ValueError("stages must be 1 or 2")
        self.preset = preset
        self.stages = stages
        self.vocab_size = vocab_size
        self.store = ParamStore(np.random.default_rng(seed), dtype=dtype)
        self.codec = ImageCodec(preset.squeeze, mixing_seed, dtype=dtype)
        self.text = TextEncoder(self.store, vocab_size, preset.text_dim, preset.cond_dim)
        self.generator = StyleGenerator(self.store, preset, stages=stages)
        self.discriminators = [Discriminator(self.store, preset, f"disc{t}.") for t in range(stages)]

    @property
    def dtype(self):
        return self.store.dtype

    def generator_params(self):
        return self.store.group("gen.")

    def text_params(self):
        return self.store.group("text.")

    def discriminator_params(self, stage: int):
        return self.store.group(f"disc{stage}.")

    def analyse(self, images) -> tuple[Tensor, StylePair]:
        """Encode images; return (normalized content, ground-truth style)."""
        feat = self.codec.encode(ad._lift(np.asarray(images, dtype=self.dtype)))
        return normalize(feat), style_extract(feat)

    def render(self, content: Tensor, style: StylePair) -> StageOutput:
        feature = adain_merge(content, style)
        return StageOutput(style=style, feature=feature, image=self.codec.decode(feature))

    def generate(self, images, tokens, lengths, z, ca_noise) -> Generation:
        """Both generation stages for a batch.

        images [B, 3, H, W]; tokens [B, T]; z [B, z_dim]; ca_noise [B, cond_dim].
        """
        content, target = self.analyse(images)
        text = self.text.encode(tokens, lengths)
        cond = self.text.condition(text.e_bar, noise=ca_noise)
        z = Tensor(np.asarray(z, dtype=self.dtype))
        style0 = self.generator.stage0(z, cond.e_c)
        stages = [self.render(content, style0)]
        if self.stages == 2:
            o = self.generator.mss(text.e, text.mask, content, style0)
            stages.append(self.render(content, self.generator.stage1(style0, o)))
        return Generation(content=content, target=target, text=text, cond=cond, stages=stages)
