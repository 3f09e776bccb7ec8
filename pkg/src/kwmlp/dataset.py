"""Speech Commands directory scanning, split assignment and batching."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .audio import MfccConfig, read_feature_cache, wav_to_mfcc, write_feature_cache
from .rng import make_rng

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")

SPEECH_COMMANDS_V2_35 = (
    "backward", "bed", "bird", "cat", "dog", "down", "eight", "five", "follow",
    "forward", "four", "go", "happy", "house", "learn", "left", "marvin", "nine",
    "no", "off", "on", "one", "right", "seven", "sheila", "six", "stop", "three",
    "tree", "two", "up", "visual", "wow", "yes", "zero",
)

CACHE_ENV = "KWMLP_CACHE_DIR"


class DatasetConfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class Entry:
    path: str
    label_id: int
    split: str


@dataclass
class DatasetIndex:
    root: Path
    entries: list[Entry]
    label_names: list[str]
    _by_split: dict[str, list[Entry]] = field(default_factory=dict, repr=False)

    def split(self, name: str) -> list[Entry]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        if name not in self._by_split:
            self._by_split[name] = [e for e in self.entries if e.split == name]
        return self._by_split[name]

    def subset(self, n: int, seed: int) -> "DatasetIndex":
        """A seeded random sample of ``n`` entries, keeping split assignments."""
        if n <= 0 or n >= len(self.entries):
            return self
        keep = np.sort(make_rng(seed, "subset").choice(len(self.entries), size=n, replace=False))
        return DatasetIndex(self.root, [self.entries[i] for i in keep], self.label_names)


def _read_list(path: Path) -> set[str]:
    if not path.is_file():
        raise DatasetConfigError(f"missing split list {path}")
    return {ln.strip() for ln in path.read_text().splitlines() if ln.strip()}


def scan_dataset(root, allowed_labels=SPEECH_COMMANDS_V2_35) -> DatasetIndex:
    """Index every ``<label>/*.wav`` under ``root``.

    Files named in ``validation_list.txt`` / ``testing_list.txt`` get those
    splits, the rest are train. Directories starting with ``_`` are ignored;
    directories not in ``allowed_labels`` are skipped with a warning (pass
    ``None`` to accept any name). Label ids follow the sorted label names.
    """
    root = Path(root)
    val = _read_list(root / "validation_list.txt")
    test = _read_list(root / "testing_list.txt")
    labels = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        if d.name.startswith("_"):
            continue
        if allowed_labels is not None and d.name not in allowed_labels:
            log.warning("skipping directory %s: not a known keyword label", d.name)
            continue
        labels.append(d.name)
    entries = []
    for label_id, label in enumerate(labels):
        for wav in sorted((root / label).glob("*.wav")):
            rel = f"{label}/{wav.name}"
            split = "test" if rel in test else "validation" if rel in val else "train"
            entries.append(Entry(rel, label_id, split))
    return DatasetIndex(root, entries, labels)


class FeatureStore:
    """Serve MFCC matrices for index entries.

    Features come from (in order) an in-memory table when ``preload`` is set,
    the on-disk cache, or fresh computation, which then fills the cache.
    ``workers > 0`` computes a batch's clips on a thread pool; the result
    order never depends on the worker count.
    """

    def __init__(self, root, mfcc_cfg: MfccConfig = MfccConfig(), cache_dir=None,
                 workers: int = 0, preload: bool = False):
        self.root = Path(root)
        self.cfg = mfcc_cfg
        cache_dir = cache_dir or os.environ.get(CACHE_ENV)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.workers = workers
        self._pool = ThreadPoolExecutor(workers) if workers > 0 else None
        self._memory: dict[str, np.ndarray] | None = {} if preload else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.cfg.n_mfcc, self.cfg.num_frames

    def cache_path(self, rel: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / (rel[:-4] + ".mfcc" if rel.endswith(".wav") else rel + ".mfcc")

    def load(self, rel: str) -> np.ndarray:
        if self._memory is not None and rel in self._memory:
            return self._memory[rel]
        cp = self.cache_path(rel)
        if cp is not None and cp.is_file():
            feats = read_feature_cache(cp, self.shape)
        else:
            feats = wav_to_mfcc(self.root / rel, self.cfg)
            if cp is not None:
                write_feature_cache(cp, feats)
        if self._memory is not None:
            self._memory[rel] = feats
        return feats

    def get_many(self, entries) -> np.ndarray:
        rels = [e.path for e in entries]
        if self._pool is not None:
            feats = list(self._pool.map(self.load, rels))
        else:
            feats = [self.load(r) for r in rels]
        return np.stack(feats)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()


def batches(index: DatasetIndex, split: str, batch_size: int, features: FeatureStore,
            rng: np.random.Generator | None = None,
            augment: Callable[[np.ndarray], np.ndarray] | None = None,
            ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(mfcc[B, 40, 98], labels[B])``.

    ``rng`` shuffles the epoch (``None`` keeps index order, as in
    evaluation); ``augment`` is applied to each assembled batch. The last
    partial batch is kept.
    """
    entries = index.split(split)
    if not entries:
        raise DatasetConfigError(f"split {split!r} is empty")
    order = rng.permutation(len(entries)) if rng is not None else np.arange(len(entries))
    for start in range(0, len(order), batch_size):
        chunk = [entries[i] for i in order[start:start + batch_size]]
        x = features.get_many(chunk)
        if augment is not None:
            x = augment(x)
        yield x, np.array([e.label_id for e in chunk], dtype=np.int64)
