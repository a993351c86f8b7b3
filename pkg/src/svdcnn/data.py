"""Character dictionary, text quantization, CSV ingestion and batching."""

from __future__ import annotations

import csv
import string
from dataclasses import dataclass

import numpy as np

# 69 printable symbols: lowercase letters, digits, ASCII punctuation and the
# space character. Index 0 is reserved for padding/unknown, so the table has
# one more row than there are symbols.
ALPHABET = string.ascii_lowercase + string.digits + string.punctuation + " "


class IngestionError(ValueError):
    """A dataset file could not be parsed."""


class Vocabulary:
    """Ordered character dictionary with a padding token at index 0.

    Characters not in the dictionary map to the padding index.
    """

    def __init__(self, characters: str = ALPHABET):
        if len(set(characters)) != len(characters):
            raise ValueError("vocabulary characters must be unique")
        self.characters = characters
        self._index = {ch: i + 1 for i, ch in enumerate(characters)}

    @property
    def size(self) -> int:
        return len(self.characters) + 1

    def index(self, ch: str) -> int:
        return self._index.get(ch, 0)


DEFAULT_VOCAB_SIZE = Vocabulary().size


def quantize(text: str, vocab: Vocabulary, seq_len: int) -> np.ndarray:
    """Map lowercased text to exactly ``seq_len`` indices.

    Longer texts are truncated, shorter ones right-padded with 0.
    """
    if seq_len < 1:
        raise ValueError(f"sequence length must be positive, got {seq_len}")
    out = np.zeros(seq_len, dtype=np.int64)
    lookup = vocab._index
    for i, ch in enumerate(text.lower()[:seq_len]):
        out[i] = lookup.get(ch, 0)
    return out


@dataclass(frozen=True)
class Sample:
    indices: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    samples: list[Sample]
    n_classes: int
    source: str = ""

    def __post_init__(self):
        if not self.samples:
            raise ValueError("dataset must be non-empty")
        for s in self.samples:
            if not 0 <= s.label < self.n_classes:
                raise ValueError(f"label {s.label} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.samples)


def load_csv(path, n_classes: int, seq_len: int = 1024, vocab: Vocabulary | None = None) -> Dataset:
    """Read a class-first CSV: 1-indexed integer class, then text fields.

    Text fields are joined with a single space before quantization. Quoted
    fields with embedded commas and doubled quotes are handled by the CSV
    layer.
    """
    vocab = vocab or Vocabulary()
    samples: list[Sample] = []
    with open(path, newline="", encoding="utf-8", errors="replace") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise IngestionError(f"{path}, line {lineno}: expected at least 2 fields, got {len(row)}")
            try:
                cls = int(row[0])
            except ValueError:
                raise IngestionError(f"{path}, line {lineno}: class field {row[0]!r} is not an integer") from None
            if cls < 1 or cls > n_classes:
                raise IngestionError(f"{path}, line {lineno}: class {cls} outside [1, {n_classes}]")
            text = " ".join(row[1:])
            samples.append(Sample(quantize(text, vocab, seq_len), cls - 1))
    if not samples:
        raise IngestionError(f"{path}: no samples found")
    return Dataset(samples, n_classes, source=str(path))


def make_batches(dataset: Dataset, batch_size: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle into ``(indices [b, s], labels [b])`` batches.

    Every sample appears exactly once; the final partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    batches = []
    for start in range(0, len(dataset), batch_size):
        chunk = order[start:start + batch_size]
        idx = np.stack([dataset.samples[i].indices for i in chunk])
        labels = np.array([dataset.samples[i].label for i in chunk], dtype=np.int64)
        batches.append((idx, labels))
    return batches


def split_dataset(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded train/validation split keeping at least one sample per side."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_val = min(max(1, int(round(len(dataset) * val_fraction))), len(dataset) - 1)
    val = [dataset.samples[i] for i in order[:n_val]]
    train = [dataset.samples[i] for i in order[n_val:]]
    return (
        Dataset(train, dataset.n_classes, source=f"{dataset.source}[train]"),
        Dataset(val, dataset.n_classes, source=f"{dataset.source}[val]"),
    )


def synth_dataset(n: int, n_classes: int, seq_len: int, seed: int, signal: float = 0.4) -> Dataset:
    """Synthetic class-tagged text, linearly learnable from character counts.

    Class ``c`` texts over-represent the letter ``chr(ord('a') + c)`` with
    probability ``signal`` per position; the rest is uniform over the
    alphabet. Labels are assigned round-robin, so class counts are exact.
    """
    if n_classes < 1 or n_classes > 26:
        raise ValueError(f"n_classes must be in [1, 26], got {n_classes}")
    if n < n_classes:
        raise ValueError(f"need at least one sample per class, got n={n}")
    rng = np.random.default_rng(seed)
    vocab = Vocabulary()
    chars = np.array(list(vocab.characters))
    samples = []
    for i in range(n):
        label = i % n_classes
        base = chars[rng.integers(0, len(chars), size=seq_len)]
        mask = rng.random(seq_len) < signal
        text = "".join(np.where(mask, chr(ord("a") + label), base))
        samples.append(Sample(quantize(text, vocab, seq_len), label))
    return Dataset(samples, n_classes, source=f"synthetic(seed={seed})")
