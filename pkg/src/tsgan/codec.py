"""Frozen, exactly invertible image codec and Adain statistics.

The encoder is space-to-depth by a factor ``s`` followed by a fixed 1x1
orthogonal channel mixing drawn from a seeded QR decomposition. Both steps
are linear bijections, so decoding is exact up to float rounding and the
codec has nothing to train.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

STYLE_EPS = 1e-5


class CodecConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StylePair:
    """Per-channel mean and std; both Tensors of shape [C] or [B, C]."""

    mu: Tensor
    sigma: Tensor

    def concat(self) -> Tensor:
        return ad.concat([self.mu, self.sigma], axis=-1)

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mu.data, self.sigma.data


class ImageCodec:
    def __init__(self, squeeze_factor: int = 4, mixing_seed: int = 0, dtype=np.float32):
        if squeeze_factor < 1:
            raise CodecConfigError("squeeze factor must be positive")
        self.squeeze_factor = squeeze_factor
        self.mixing_seed = mixing_seed
        self.channels_out = 3 * squeeze_factor ** 2
        rng = np.random.default_rng(mixing_seed)
        q, r = np.linalg.qr(rng.normal(size=(self.channels_out, self.channels_out)))
        q *= np.sign(np.diag(r))  # unique Haar-distributed Q
        self.mixing = Tensor(q.astype(dtype))
        self.unmixing = Tensor(np.ascontiguousarray(q.T).astype(dtype))

    def astype(self, dtype) -> "ImageCodec":
        return ImageCodec(self.squeeze_factor, self.mixing_seed, dtype)

    def spatial_out(self, side: int) -> int:
        if side % self.squeeze_factor:
            raise CodecConfigError(f"image side {side} is not divisible by {self.squeeze_factor}")
        return side // self.squeeze_factor

    def encode(self, image: Tensor) -> Tensor:
        """[..., 3, H, W] -> [..., 3s^2, H/s, W/s]."""
        s = self.squeeze_factor
        *lead, c, h, w = image.shape
        if c != 3:
            raise DimensionError(f"encode expects 3 colour channels, got {c}")
        hs, ws = self.spatial_out(h), self.spatial_out(w)
        n = len(lead)
        x = ad.reshape(image, (*lead, c, hs, s, ws, s))
        # (c, i, j) ordering of the stacked channels
        x = ad.transpose(x, (*range(n), n, n + 2, n + 4, n + 1, n + 3))
        x = ad.reshape(x, (*lead, self.channels_out, hs, ws))
        return ad.conv1x1(x, self.mixing)

    def decode(self, feature: Tensor) -> Tensor:
        """Exact inverse of :meth:`encode`. Values are not clamped here."""
        s = self.squeeze_factor
        *lead, c, hs, ws = feature.shape
        if c != self.channels_out:
            raise DimensionError(f"decode expects {self.channels_out} channels, got {c}")
        n = len(lead)
        x = ad.conv1x1(feature, self.unmixing)
        x = ad.reshape(x, (*lead, 3, s, s, hs, ws))
        x = ad.transpose(x, (*range(n), n, n + 3, n + 1, n + 4, n + 2))
        return ad.reshape(x, (*lead, 3, hs * s, ws * s))


def style_extract(feature: Tensor) -> StylePair:
    """Spatial mean and sqrt(population variance + 1e-5) per channel."""
    if feature.ndim < 3 or feature.shape[-1] * feature.shape[-2] < 1:
        raise DimensionError(f"style_extract expects [..., C, h, w], got {feature.shape}")
    mu = ad.mean(feature, axis=(-2, -1))
    sigma = ad.sqrt(ad.add(ad.variance(feature, axis=(-2, -1)), STYLE_EPS))
    return StylePair(mu, sigma)


def normalize(feature: Tensor) -> Tensor:
    """Zero-mean, unit-std channels (the content part of a feature)."""
    mu = ad.mean(feature, axis=(-2, -1), keepdims=True)
    std = ad.sqrt(ad.add(ad.variance(feature, axis=(-2, -1), keepdims=True), STYLE_EPS))
    return ad.div(ad.sub(feature, mu), std)


def adain_merge(content: Tensor, style: StylePair) -> Tensor:
    if style.mu.shape[-1] != content.shape[-3] or style.sigma.shape != style.mu.shape:
        raise DimensionError(
            f"adain_merge: content {content.shape} vs style {style.mu.shape}/{style.sigma.shape}")
    normed = normalize(content)
    mu = ad.reshape(style.mu, (*style.mu.shape, 1, 1))
    sigma = ad.reshape(style.sigma, (*style.sigma.shape, 1, 1))
    return ad.add(ad.mul(normed, sigma), mu)


# -- PNG boundary -------------------------------------------------------------

def to_uint8(image: np.ndarray) -> np.ndarray:
    """[3, H, W] floats -> [H, W, 3] uint8 with clamping."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(image: np.ndarray, path: str | Path) -> None:
    Image.fromarray(to_uint8(np.asarray(image))).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """RGB PNG -> float32 [3, H, W] in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return (arr / 255.0).transpose(2, 0, 1).copy()
