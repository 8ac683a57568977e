"""Two-stage style generators and the multi-modality style synthesis block.

All tensors carry a leading batch axis here: images [B, 3, H, W], content
features [B, C, h, w], word features [B, D, T], style vectors [B, C].
"""
from __future__ import annotations

import logging
import math

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .codec import StylePair, adain_merge
from .config import ModelPreset
from .params import ParamStore

log = logging.getLogger(__name__)


def _split_style(raw: Tensor, channels: int) -> StylePair:
    return StylePair(raw[..., :channels], ad.softplus(raw[..., channels:]))


class MLP:
    """Fully connected stack with leaky-ReLU between layers (none after the last)."""

    def __init__(self, store: ParamStore, prefix: str, widths: list[int]):
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = store.create(f"{prefix}fc{i + 1}.weight", (n_in, n_out), fan_in=n_in)
            b = store.create(f"{prefix}fc{i + 1}.bias", (n_out,), init="zeros")
            self.layers.append((w, b))
        self.in_width = widths[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_width:
            raise DimensionError(f"expected input width {self.in_width}, got {x.shape[-1]}")
        for i, (w, b) in enumerate(self.layers):
            x = ad.fully_connected(x, w, b)
            if i < len(self.layers) - 1:
                x = ad.leaky_relu(x)
        return x


def _block_count(src: int, dst: int) -> int:
    n = math.log2(src / dst) if dst else -1
    if n < 0 or not float(n).is_integer():
        raise DimensionError(f"cannot reach side {dst} from {src} by halving")
    return int(n)


def cross_attention(v_ca: Tensor, e: Tensor, mask: np.ndarray, chi0: Tensor, chi1: Tensor) -> Tensor:
    """Word-context image vectors, [B, C1, H1*W1].

    Each sub-region attends over the caption's real words; padded words get
    exactly zero weight. A caption with no real words falls back to uniform
    attention over all T positions.
    """
    b, c1, h1, w1 = v_ca.shape
    v_c = ad.reshape(ad.conv1x1(v_ca, chi0), (b, c1, h1 * w1))
    e_c = ad.matmul(chi1, e)                      # [B, C1, T]
    sim = ad.matmul(ad.swap_last(e_c), v_c)       # [B, T, H1W1]
    mask = np.array(mask, dtype=bool, copy=True)
    empty = ~mask.any(axis=1)
    if empty.any():
        log.warning("caption without real words; attending uniformly over all positions")
        mask[empty] = True
    attn = ad.softmax(sim, axis=1, mask=mask[:, :, None])
    return ad.matmul(e_c, attn)


def self_attention(v_sa: Tensor, chi2: Tensor, chi3: Tensor) -> Tensor:
    """Region self-attention, [B, C2, H2*W2]; each query column mixes key regions."""
    b, c2, h2, w2 = v_sa.shape
    v_q = ad.reshape(ad.conv1x1(v_sa, chi2), (b, c2, h2 * w2))
    v_k = ad.reshape(ad.conv1x1(v_sa, chi3), (b, c2, h2 * w2))
    s = ad.softmax(ad.matmul(ad.swap_last(v_q), v_k), axis=1)
    return ad.matmul(v_q, s)


class StyleSynthesis:
    """Fuses word features with the stage-1 restyled content into a 2C vector."""

    def __init__(self, store: ParamStore, preset: ModelPreset, prefix: str):
        c = preset.style_channels
        c1, c2 = preset.ca_channels, preset.sa_channels
        self.preset = preset
        self.chi = [
            store.create(prefix + "chi0", (c1, c1), fan_in=c1),
            store.create(prefix + "chi1", (c1, preset.text_dim), fan_in=preset.text_dim),
            store.create(prefix + "chi2", (c2, c2), fan_in=c2),
            store.create(prefix + "chi3", (c2, c2), fan_in=c2),
        ]
        self.down_ca = []
        n_in = c
        for i in range(_block_count(preset.feature_side, preset.ca_side)):
            self.down_ca.append((store.create(f"{prefix}down_ca{i}.weight", (c1, n_in, 4, 4), fan_in=n_in * 16),
                                 store.create(f"{prefix}down_ca{i}.bias", (c1,), init="zeros")))
            n_in = c1
        self.down_sa = []
        for i in range(_block_count(preset.ca_side, preset.sa_side)):
            self.down_sa.append((store.create(f"{prefix}down_sa{i}.weight", (c2, n_in, 4, 4), fan_in=n_in * 16),
                                 store.create(f"{prefix}down_sa{i}.bias", (c2,), init="zeros")))
            n_in = c2
        self.proj = store.create(prefix + "proj", (c1, c2), fan_in=c2)
        self.fc_w = store.create(prefix + "fc.weight", (c1, 2 * c), fan_in=c1)
        self.fc_b = store.create(prefix + "fc.bias", (2 * c,), init="zeros")

    def features(self, v0: Tensor) -> tuple[Tensor, Tensor]:
        v_ca = v0
        for w, b in self.down_ca:
            v_ca = ad.downsample_block(v_ca, w, b)
        v_sa = v_ca
        for w, b in self.down_sa:
            v_sa = ad.downsample_block(v_sa, w, b)
        return v_ca, v_sa

    def __call__(self, e: Tensor, mask: np.ndarray, content: Tensor, style0: StylePair) -> Tensor:
        v0 = adain_merge(content, style0)
        v_ca, v_sa = self.features(v0)
        b, c1, h1, w1 = v_ca.shape
        _, c2, h2, w2 = v_sa.shape
        phi_c = cross_attention(v_ca, e, mask, self.chi[0], self.chi[1])
        phi_s = ad.reshape(self_attention(v_sa, self.chi[2], self.chi[3]), (b, c2, h2, w2))
        # channel projection commutes with nearest upsampling; project on the small grid
        phi_s = ad.upsample_nearest(ad.conv1x1(phi_s, self.proj), h1 // h2)
        fused = ad.add(phi_c, ad.reshape(phi_s, (b, c1, h1 * w1)))
        return ad.fully_connected(ad.mean(fused, axis=-1), self.fc_w, self.fc_b)


class StyleGenerator:
    """SG0 (noise + conditioned sentence vector) and SG1 (refinement from the synthesis vector)."""

    def __init__(self, store: ParamStore, preset: ModelPreset, prefix: str = "gen.",
                 stages: int = 2):
        c = preset.style_channels
        h1, h2 = preset.sg_hidden
        self.preset = preset
        self.stages = stages
        self.sg0 = MLP(store, prefix + "sg0.", [preset.z_dim + preset.cond_dim, h1, h2, 2 * c])
        if stages == 2:
            self.mss = StyleSynthesis(store, preset, prefix + "mss.")
            self.sg1 = MLP(store, prefix + "sg1.", [4 * c, h1, h2, 2 * c])

    def stage0(self, z: Tensor, e_c: Tensor) -> StylePair:
        if z.shape[-1] != self.preset.z_dim or e_c.shape[-1] != self.preset.cond_dim:
            raise DimensionError(f"sg0 expects z[{self.preset.z_dim}] and e_c[{self.preset.cond_dim}], "
                                 f"got {z.shape} and {e_c.shape}")
        return _split_style(self.sg0(ad.concat([z, e_c], axis=-1)), self.preset.style_channels)

    def stage1(self, style0: StylePair, o: Tensor) -> StylePair:
        x = ad.concat([style0.mu, style0.sigma, o], axis=-1)
        return _split_style(self.sg1(x), self.preset.style_channels)
