"""Per-stage discriminator with four scoring branches.

D^i and D^ci share an image trunk (stride-2 blocks down to a 4x4 map);
D^s and D^cs share a style trunk over concat(mu, sigma). The conditional
heads join the trunk output with the sentence feature; the joint layer
keeps separate weights for the trunk part and the sentence part, which is
the same map as one layer over the concatenation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .codec import StylePair
from .config import ModelPreset
from .params import ParamStore

BRANCHES = ("s_i", "s_s", "s_ci", "s_cs")


@dataclass
class ScoreSet:
    """Branch scores in (0, 1); Tensors of shape [B] (or plain floats in tests)."""

    s_i: Tensor
    s_s: Tensor
    s_ci: Tensor
    s_cs: Tensor

    def items(self):
        return [(name, getattr(self, name)) for name in BRANCHES]

    def means(self) -> dict[str, float]:
        return {name: float(np.mean(ad._lift(v).data)) for name, v in self.items()}


class Discriminator:
    def __init__(self, store: ParamStore, preset: ModelPreset, prefix: str):
        self.preset = preset
        self.prefix = prefix
        side = preset.image_size
        self.trunk = []
        n_in = 3
        for i, n_out in enumerate(preset.disc_channels):
            self.trunk.append((store.create(f"{prefix}img.block{i}.weight", (n_out, n_in, 4, 4), fan_in=n_in * 16),
                               store.create(f"{prefix}img.block{i}.bias", (n_out,), init="zeros")))
            n_in = n_out
            side //= 2
        if side != 4:
            raise DimensionError(f"{len(preset.disc_channels)} blocks map {preset.image_size}px to {side}px, need 4")
        self.trunk_channels = n_in
        flat = n_in * 16
        d, j = preset.text_dim, preset.disc_joint
        self.i_head = (store.create(prefix + "i_head.weight", (flat, 1), fan_in=flat),
                       store.create(prefix + "i_head.bias", (1,), init="zeros"))
        self.ci_joint_img = store.create(prefix + "ci_joint.img", (j, n_in), fan_in=n_in + d)
        self.ci_joint_txt = store.create(prefix + "ci_joint.txt", (j, d), fan_in=n_in + d)
        self.ci_joint_b = store.create(prefix + "ci_joint.bias", (j,), init="zeros")
        self.ci_head = (store.create(prefix + "ci_head.weight", (j * 16, 1), fan_in=j * 16),
                        store.create(prefix + "ci_head.bias", (1,), init="zeros"))

        widths = [2 * preset.style_channels, *preset.disc_style_hidden]
        self.style_trunk = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.style_trunk.append((store.create(f"{prefix}style.fc{i}.weight", (a, b), fan_in=a),
                                     store.create(f"{prefix}style.fc{i}.bias", (b,), init="zeros")))
        h = widths[-1]
        self.s_head = (store.create(prefix + "s_head.weight", (h, 1), fan_in=h),
                       store.create(prefix + "s_head.bias", (1,), init="zeros"))
        self.cs_joint_sty = store.create(prefix + "cs_joint.style", (h, j), fan_in=h + d)
        self.cs_joint_txt = store.create(prefix + "cs_joint.txt", (d, j), fan_in=h + d)
        self.cs_joint_b = store.create(prefix + "cs_joint.bias", (j,), init="zeros")
        self.cs_head = (store.create(prefix + "cs_head.weight", (j, 1), fan_in=j),
                        store.create(prefix + "cs_head.bias", (1,), init="zeros"))

    # -- branches ---------------------------------------------------------------
    def score_image(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (s_i [B], trunk feature [B, C, 4, 4])."""
        if image.shape[-3:] != (3, self.preset.image_size, self.preset.image_size):
            raise DimensionError(f"discriminator expects 3x{self.preset.image_size}x{self.preset.image_size} "
                                 f"images, got {image.shape}")
        x = image
        for w, b in self.trunk:
            x = ad.downsample_block(x, w, b)
        flat = ad.reshape(x, (x.shape[0], -1))
        logit = ad.fully_connected(flat, *self.i_head)
        return ad.sigmoid(ad.reshape(logit, (-1,))), x

    def score_image_cond(self, trunk_feature: Tensor, e_bar: Tensor) -> Tensor:
        b = trunk_feature.shape[0]
        if e_bar.shape[-1] != self.preset.text_dim:
            raise DimensionError(f"sentence feature width {e_bar.shape[-1]} != {self.preset.text_dim}")
        txt = ad.matmul(e_bar, ad.transpose(self.ci_joint_txt))        # [B, J]
        joint = ad.conv1x1(trunk_feature, self.ci_joint_img)           # [B, J, 4, 4]
        joint = ad.add(joint, ad.reshape(ad.add(txt, self.ci_joint_b), (b, -1, 1, 1)))
        joint = ad.leaky_relu(joint)
        logit = ad.fully_connected(ad.reshape(joint, (b, -1)), *self.ci_head)
        return ad.sigmoid(ad.reshape(logit, (-1,)))

    def score_style(self, style: StylePair) -> tuple[Tensor, Tensor]:
        x = style.concat()
        if x.shape[-1] != 2 * self.preset.style_channels:
            raise DimensionError(f"style length {x.shape[-1]} != {2 * self.preset.style_channels}")
        for w, b in self.style_trunk:
            x = ad.leaky_relu(ad.fully_connected(x, w, b))
        logit = ad.fully_connected(x, *self.s_head)
        return ad.sigmoid(ad.reshape(logit, (-1,))), x

    def score_style_cond(self, style_feature: Tensor, e_bar: Tensor) -> Tensor:
        if e_bar.shape[-1] != self.preset.text_dim:
            raise DimensionError(f"sentence feature width {e_bar.shape[-1]} != {self.preset.text_dim}")
        joint = ad.add(ad.matmul(style_feature, self.cs_joint_sty), ad.matmul(e_bar, self.cs_joint_txt))
        joint = ad.leaky_relu(ad.add(joint, self.cs_joint_b))
        logit = ad.fully_connected(joint, *self.cs_head)
        return ad.sigmoid(ad.reshape(logit, (-1,)))

    def __call__(self, image: Tensor, style: StylePair, e_bar: Tensor) -> ScoreSet:
        s_i, trunk = self.score_image(image)
        s_s, feat = self.score_style(style)
        return ScoreSet(s_i=s_i, s_s=s_s, s_ci=self.score_image_cond(trunk, e_bar),
                        s_cs=self.score_style_cond(feat, e_bar))
