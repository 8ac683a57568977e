"""Adversarial and style losses, plus the SL and PSNR evaluation metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .discriminator import ScoreSet

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
PEARSON_EPS = 1e-8


@dataclass
class LossReport:
    l_g: float
    l_d: float
    l_s_stage0: float
    l_s_stage1: float
    l_g_total: float
    l_d_total: float
    scores: dict[str, float] = field(default_factory=dict)


def _neg_log_mean(s) -> Tensor:
    return ad.mul(ad.mean(ad.log(ad._lift(s))), -1.0)


def generator_loss(fake_scores: Sequence[ScoreSet]) -> Tensor:
    """-sum of log fake scores over the four branches, summed over stages, batch-averaged."""
    total = None
    for scores in fake_scores:
        for _, s in scores.items():
            term = _neg_log_mean(s)
            total = term if total is None else ad.add(total, term)
    return total


def discriminator_loss(real: ScoreSet, fake: ScoreSet) -> Tensor:
    """One stage: -sum_branches [log s(real) + log(1 - s(fake))], batch-averaged."""
    total = None
    for (_, r), (_, f) in zip(real.items(), fake.items()):
        term = ad.add(_neg_log_mean(r), _neg_log_mean(ad.sub(1.0, ad._lift(f))))
        total = term if total is None else ad.add(total, term)
    return total


def pearson_scalar(h: np.ndarray, h_i: np.ndarray) -> np.ndarray:
    h, h_i = np.asarray(h, np.float64), np.asarray(h_i, np.float64)
    hc = h - h.mean(axis=-1, keepdims=True)
    gc = h_i - h_i.mean(axis=-1, keepdims=True)
    den = np.sqrt((hc * hc).sum(-1) * (gc * gc).sum(-1) + PEARSON_EPS ** 2)
    return (hc * gc).sum(-1) / den


def style_loss(h: Tensor, h_i: Tensor) -> Tensor:
    """Negative Pearson correlation of concat(mu, sigma) vectors, batch-averaged."""
    h, h_i = ad._lift(h), ad._lift(h_i)
    if h.shape != h_i.shape:
        raise DimensionError(f"style_loss: {h.shape} vs {h_i.shape}")
    flat_var = np.var(h.data, axis=-1) * np.var(h_i.data, axis=-1)
    if np.any(flat_var == 0):
        log.warning("zero-variance style vector; its correlation is taken as 0")
    return ad.mul(ad.mean(ad.pearson(h, h_i, PEARSON_EPS)), -1.0)


def total_losses(l_g, l_d, l_s: Sequence, lam: float = 0.1):
    """(L_G + lam * sum L_S, L_D + lam * sum L_S)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    s = None
    for term in l_s:
        s = term if s is None else s + term
    if s is None:
        return l_g, l_d
    return l_g + lam * s, l_d + lam * s


def metric_sl(s, s_prime) -> float:
    """||s' - s||_2 / C where C is the vector length."""
    s, s_prime = np.asarray(s, np.float64), np.asarray(s_prime, np.float64)
    if s.shape != s_prime.shape or s.ndim != 1:
        raise DimensionError(f"metric_sl: shapes {s.shape} and {s_prime.shape}")
    return float(np.linalg.norm(s_prime - s) / s.size)


def metric_psnr(a, b, peak: float = 1.0) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric_psnr: shapes {a.shape} and {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))
