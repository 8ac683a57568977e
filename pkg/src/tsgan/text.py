"""Caption tokenization, bidirectional GRU text encoder, conditioning augmentation."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
MAX_VOCAB = 8192

_WORD = re.compile(r"[a-z0-9]+")


def words(caption: str) -> list[str]:
    return _WORD.findall(caption.lower())


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @classmethod
    def build(cls, captions: Iterable[str], max_size: int = MAX_VOCAB) -> "Vocabulary":
        counts = Counter(w for c in captions for w in words(c))
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        return cls(ranked[: max_size - 2])

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError(f"{path}: vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}")
        return cls(lines[2:])


def tokenize(caption: str, vocab: Vocabulary, length: int) -> tuple[np.ndarray, int]:
    """Lower-case word ids padded/truncated to ``length``; also returns the real count."""
    ids = [vocab.stoi.get(w, UNK) for w in words(caption)][:length]
    out = np.zeros(length, dtype=np.int64)
    out[: len(ids)] = ids
    return out, len(ids)


@dataclass
class TextFeatures:
    e: Tensor           # [B, D, T] word features
    e_bar: Tensor       # [B, D] sentence feature
    mask: np.ndarray    # [B, T] bool, True for real words
    lengths: np.ndarray  # [B]


@dataclass
class ConditionedVector:
    e_c: Tensor
    ca_mu: Tensor
    ca_logvar: Tensor
    noise: np.ndarray


class TextEncoder:
    """Embedding -> single-layer bidirectional GRU (each direction D/2 wide)."""

    def __init__(self, store: ParamStore, vocab_size: int, dim: int, cond_dim: int,
                 prefix: str = "text."):
        if dim % 2:
            raise ValueError("text feature width must be even")
        self.prefix = prefix
        self.dim, self.hidden, self.cond_dim = dim, dim // 2, cond_dim
        self.vocab_size = vocab_size
        h = self.hidden
        self.embed = store.create(prefix + "embed", (vocab_size, dim), fan_in=2)
        self.dirs = {}
        for d in ("fwd", "bwd"):
            self.dirs[d] = (
                store.create(f"{prefix}{d}.w_x", (dim, 3 * h), fan_in=dim),
                store.create(f"{prefix}{d}.w_h", (h, 3 * h), fan_in=h),
                store.create(f"{prefix}{d}.b_x", (3 * h,), init="zeros"),
                store.create(f"{prefix}{d}.b_h", (3 * h,), init="zeros"),
            )
        self.ca_w = store.create(prefix + "ca.weight", (dim, 2 * cond_dim), fan_in=dim)
        self.ca_b = store.create(prefix + "ca.bias", (2 * cond_dim,), init="zeros")

    def _run(self, xs: Tensor, mask: np.ndarray, direction: str) -> list[Tensor]:
        w_x, w_h, b_x, b_h = self.dirs[direction]
        b, t_len, _ = xs.shape
        h_dim = self.hidden
        proj = ad.fully_connected(xs, w_x, b_x)  # [B, T, 3H], all steps at once
        h = Tensor(np.zeros((b, h_dim), dtype=xs.dtype))
        states: list[Tensor | None] = [None] * t_len
        steps = range(t_len) if direction == "fwd" else range(t_len - 1, -1, -1)
        for t in steps:
            gx = proj[:, t, :]
            gh = ad.fully_connected(h, w_h, b_h)
            r = ad.sigmoid(gx[:, :h_dim] + gh[:, :h_dim])
            z = ad.sigmoid(gx[:, h_dim:2 * h_dim] + gh[:, h_dim:2 * h_dim])
            n = ad.tanh(gx[:, 2 * h_dim:] + r * gh[:, 2 * h_dim:])
            h_new = (1.0 - z) * n + z * h
            # padded steps carry the previous state through unchanged
            h = ad.where_mask(mask[:, t:t + 1], h_new, h)
            states[t] = h
        return states

    def encode(self, tokens: np.ndarray, lengths: np.ndarray | None = None) -> TextFeatures:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if tokens.size and tokens.max() >= self.vocab_size:
            raise IndexError(f"token id {tokens.max()} >= vocabulary size {self.vocab_size}")
        if lengths is None:
            lengths = (tokens != PAD).sum(axis=1)
        lengths = np.asarray(lengths)
        t_len = tokens.shape[1]
        mask = np.arange(t_len)[None, :] < lengths[:, None]
        xs = ad.embedding(tokens, self.embed)
        xs = ad.mul(xs, mask[:, :, None].astype(xs.dtype))
        fwd = self._run(xs, mask, "fwd")
        bwd = self._run(xs, mask, "bwd")
        b = tokens.shape[0]
        cols = [ad.reshape(ad.concat([f, r], axis=1), (b, self.dim, 1)) for f, r in zip(fwd, bwd)]
        e = ad.concat(cols, axis=2)
        # forward final state is carried to the last column; backward final is column 0
        e_bar = ad.concat([fwd[-1], bwd[0]], axis=1)
        return TextFeatures(e=e, e_bar=e_bar, mask=mask, lengths=lengths)

    def condition(self, e_bar: Tensor, noise: np.ndarray | None = None,
                  rng: np.random.Generator | None = None) -> ConditionedVector:
        """Reparameterised sample ``mu + exp(logvar / 2) * n`` from the sentence feature."""
        stats = ad.fully_connected(e_bar, self.ca_w, self.ca_b)
        mu = stats[..., : self.cond_dim]
        logvar = stats[..., self.cond_dim:]
        if noise is None:
            rng = rng if rng is not None else np.random.default_rng()
            noise = rng.standard_normal(mu.shape)
        noise = np.asarray(noise, dtype=mu.dtype)
        e_c = ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), noise))
        return ConditionedVector(e_c=e_c, ca_mu=mu, ca_logvar=logvar, noise=noise)
