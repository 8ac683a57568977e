"""Manifests, augmentation, batching and the procedural toy corpus."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .codec import load_png, save_png
from .text import Vocabulary, tokenize

log = logging.getLogger(__name__)

MIN_CAPTION_CHARS = 5
CROP_AREA = (0.875, 1.0)


class ManifestError(ValueError):
    pass


@dataclass
class Record:
    image_path: Path
    caption: str
    id: str


@dataclass
class Manifest:
    records: list[Record]
    split: str = "train"
    dropped: int = 0
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def captions(self) -> list[str]:
        return [r.caption for r in self.records]


def valid_caption(caption: str) -> bool:
    return sum(ch.isalnum() for ch in caption) >= MIN_CAPTION_CHARS


def load_manifest(path: str | Path, split: str = "train") -> Manifest:
    """Read a JSON-lines manifest; image paths are relative to its directory."""
    path = Path(path)
    root = path.parent
    records, dropped = [], 0
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            image_path, caption = obj["image_path"], obj["caption"]
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise ManifestError(f"{path}:{lineno}: malformed record ({err})") from None
        if not isinstance(caption, str) or not valid_caption(caption):
            dropped += 1
            continue
        full = root / image_path
        if not full.exists():
            log.warning("%s:%d: missing image %s, skipped", path, lineno, full)
            dropped += 1
            continue
        records.append(Record(full, caption, obj.get("id", Path(image_path).stem)))
    if dropped:
        log.info("%s: dropped %d of %d records", path, dropped, dropped + len(records))
    return Manifest(records, split=split, dropped=dropped, root=root)


def write_manifest(manifest_path: str | Path, rows: list[dict]) -> None:
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# -- augmentation ---------------------------------------------------------------

def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a [3, H, W] float image to size x size."""
    if image.shape[1:] == (size, size):
        return image.astype(np.float32, copy=True)
    chans = [np.asarray(Image.fromarray(np.ascontiguousarray(c, dtype=np.float32), mode="F")
                        .resize((size, size), Image.BILINEAR)) for c in image]
    return np.clip(np.stack(chans), 0.0, 1.0).astype(np.float32)


def center_resize(image: np.ndarray, target: int) -> np.ndarray:
    _, h, w = image.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    return resize(image[:, top:top + side, left:left + side], target)


def augment(image: np.ndarray, rng: np.random.Generator, target: int,
            flip: bool | None = None) -> np.ndarray:
    """Random square crop (87.5-100% of the area), horizontal flip, resize to target."""
    _, h, w = image.shape
    if min(h, w) < target:
        log.warning("source %dx%d smaller than target %d; upscaling first", h, w, target)
        image = resize(image[:, :min(h, w), :min(h, w)], target)
        _, h, w = image.shape
    side = min(h, w)
    crop = max(1, int(round(side * np.sqrt(rng.uniform(*CROP_AREA)))))
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    out = image[:, top:top + crop, left:left + crop]
    do_flip = rng.random() < 0.5 if flip is None else flip
    if do_flip:
        out = out[:, :, ::-1]
    return resize(out, target)


# -- dataset and batching ---------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray     # [B, 3, H, W]
    tokens: np.ndarray     # [B, T]
    lengths: np.ndarray    # [B]
    captions: list[str]
    ids: list[str]
    indices: np.ndarray


class PairDataset:
    """Decoded images and tokenized captions held in memory."""

    def __init__(self, manifest: Manifest, vocab: Vocabulary, image_size: int, text_len: int,
                 train: bool = True):
        if not len(manifest):
            raise ManifestError("empty manifest")
        self.manifest = manifest
        self.train = train
        self.image_size = image_size
        self.images = [load_png(r.image_path) for r in manifest.records]
        toks = [tokenize(r.caption, vocab, text_len) for r in manifest.records]
        self.tokens = np.stack([t for t, _ in toks])
        self.lengths = np.array([n for _, n in toks])
        self._plain = [center_resize(im, image_size) for im in self.images]

    def __len__(self) -> int:
        return len(self.images)

    def batch(self, indices, rng: np.random.Generator | None = None, augment_images: bool | None = None) -> Batch:
        indices = np.asarray(indices)
        do_aug = self.train if augment_images is None else augment_images
        if do_aug:
            if rng is None:
                raise ValueError("augmentation needs an rng")
            imgs = [augment(self.images[i], rng, self.image_size) for i in indices]
        else:
            imgs = [self._plain[i] for i in indices]
        recs = [self.manifest.records[i] for i in indices]
        return Batch(images=np.stack(imgs), tokens=self.tokens[indices], lengths=self.lengths[indices],
                     captions=[r.caption for r in recs], ids=[r.id for r in recs], indices=indices)


class BatchSchedule:
    """Seekable epoch-shuffled batch order: draw ``k`` is a pure function of (seed, k)."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n == 0:
            raise ValueError("cannot batch an empty dataset")
        if batch_size > n:
            raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
        self.n, self.batch_size, self.seed = n, batch_size, seed
        self.per_epoch = n // batch_size

    def permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, 0x5EED, epoch]).permutation(self.n)

    def indices(self, k: int) -> np.ndarray:
        epoch, pos = divmod(k, self.per_epoch)
        start = pos * self.batch_size
        return self.permutation(epoch)[start:start + self.batch_size]


def batch_iter(manifest: Manifest, batch_size: int, seed: int, epochs: int = 1) -> Iterator[list[Record]]:
    """Epoch-shuffled batches of records; the last partial batch is dropped."""
    if not len(manifest):
        raise ValueError("empty manifest")
    sched = BatchSchedule(len(manifest), batch_size, seed)
    for k in range(sched.per_epoch * epochs):
        yield [manifest.records[i] for i in sched.indices(k)]


# -- toy corpus -------------------------------------------------------------------

# two base colours per palette; each palette has one clearly dominant channel
PALETTES: dict[str, tuple[tuple[float, float, float], tuple[float, float, float], str]] = {
    "golden": ((0.95, 0.75, 0.20), (0.80, 0.55, 0.10), "warm"),
    "crimson": ((0.85, 0.12, 0.15), (0.60, 0.05, 0.10), "warm"),
    "ember": ((0.90, 0.35, 0.10), (0.50, 0.15, 0.05), "warm"),
    "forest": ((0.15, 0.60, 0.20), (0.10, 0.40, 0.15), "cool"),
    "mint": ((0.55, 0.92, 0.70), (0.30, 0.75, 0.50), "cool"),
    "ocean": ((0.10, 0.35, 0.80), (0.05, 0.20, 0.55), "cool"),
    "violet": ((0.55, 0.20, 0.85), (0.35, 0.10, 0.60), "cool"),
    "frost": ((0.60, 0.80, 0.98), (0.40, 0.60, 0.90), "cool"),
}
TEXTURES = ("stripes", "checks", "blobs")
MOODS = ("calm", "bright", "gloomy", "lively")
COLOR_JITTER = 0.04


def dominant_channel(palette: str) -> int:
    a, b, _ = PALETTES[palette]
    return int(np.argmax(np.add(a, b)))


def _texture_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "stripes":
        angle = rng.uniform(0, np.pi)
        period = rng.uniform(6, 16)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period + phase)
        return (wave > 0).astype(np.float64)
    if kind == "checks":
        cell = int(rng.integers(4, 17))
        oy, ox = rng.integers(0, cell, size=2)
        return (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    field_ = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 10, size / 4)
        field_ += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    return (field_ > 0.5).astype(np.float64)


def toy_sample(rng: np.random.Generator, size: int = 64) -> tuple[np.ndarray, str, str]:
    """One procedural image [3, size, size], its caption, and its palette name."""
    names = list(PALETTES)
    palette = names[int(rng.integers(len(names)))]
    texture = TEXTURES[int(rng.integers(len(TEXTURES)))]
    mood = MOODS[int(rng.integers(len(MOODS)))]
    a, b, temperature = PALETTES[palette]
    ca = np.clip(np.array(a) + rng.uniform(-COLOR_JITTER, COLOR_JITTER, 3), 0, 1)
    cb = np.clip(np.array(b) + rng.uniform(-COLOR_JITTER, COLOR_JITTER, 3), 0, 1)
    mask = _texture_mask(texture, size, rng)
    image = ca[:, None, None] * mask + cb[:, None, None] * (1 - mask)
    caption = f"a {temperature} {mood} scene of {palette} {texture}"
    return image.astype(np.float32), caption, palette


def synth_toy_corpus(n: int, seed: int, out_dir: str | Path, size: int = 64) -> Manifest:
    """Write ``n`` toy PNGs plus ``manifest.jsonl`` under ``out_dir``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0x70F])
    rows = []
    for i in range(n):
        image, caption, palette = toy_sample(rng, size)
        rel = f"images/{i:05d}.png"
        save_png(image, out / rel)
        rows.append({"id": f"{i:05d}", "image_path": rel, "caption": caption, "palette": palette})
    write_manifest(out / "manifest.jsonl", rows)
    return load_manifest(out / "manifest.jsonl")
