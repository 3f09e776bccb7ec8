"""Synthetic tone dataset in the Speech Commands layout.

Each class is a pure tone at its own frequency with random amplitude,
phase, small pitch jitter, onset and duration, plus low-level noise. Used
for overfit sanity checks and for smoke-testing the CLI end to end.

    python -m kwmlp.synthetic /tmp/tones --per-class 40
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, save_wav
from .rng import make_rng

DEFAULT_TONES = {"down": 250.0, "go": 500.0, "left": 1000.0, "no": 2000.0, "yes": 4000.0}


def tone_clip(freq: float, rng: np.random.Generator) -> np.ndarray:
    length = int(rng.integers(SAMPLE_RATE * 3 // 4, SAMPLE_RATE + 1))
    dur = int(rng.integers(SAMPLE_RATE * 3 // 10, length + 1))
    onset = int(rng.integers(0, length - dur + 1))
    f = freq * (1.0 + rng.uniform(-0.03, 0.03))
    t = np.arange(dur) / SAMPLE_RATE
    x = np.zeros(length)
    x[onset:onset + dur] = rng.uniform(0.2, 0.8) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    x += rng.normal(0.0, 0.01, size=length)
    return np.clip(x, -1.0, 1.0)


def make_tone_dataset(root, per_class: int = 40, val_per_class: int = 4, test_per_class: int = 4,
                      tones: dict[str, float] | None = None, seed: int = 0) -> Path:
    """Write ``per_class`` train clips (plus val/test clips) per tone label under ``root``."""
    root = Path(root)
    tones = tones or DEFAULT_TONES
    rng = make_rng(seed, "synthetic")
    val, test = [], []
    for label, freq in sorted(tones.items()):
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class + val_per_class + test_per_class):
            name = f"{label}/tone_{i:04d}.wav"
            save_wav(root / name, tone_clip(freq, rng))
            if i >= per_class + val_per_class:
                test.append(name)
            elif i >= per_class:
                val.append(name)
    (root / "validation_list.txt").write_text("".join(n + "\n" for n in val))
    (root / "testing_list.txt").write_text("".join(n + "\n" for n in test))
    return root


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("root")
    ap.add_argument("--per-class", type=int, default=40)
    ap.add_argument("--val-per-class", type=int, default=4)
    ap.add_argument("--test-per-class", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    make_tone_dataset(args.root, args.per_class, args.val_per_class, args.test_per_class, seed=args.seed)
    print(f"wrote tone dataset to {args.root}")


if __name__ == "__main__":
    main()
