"""Synthetic 3-class set for desk-scale training: 440 Hz tone, linear chirp, pink noise."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .noise import colored_noise
from .signal import Waveform
from .train import Split

CLASSES = ("tone", "chirp", "pink")


def tone(n: int, rate: int, rng) -> np.ndarray:
    t = np.arange(n) / rate
    return np.sin(2 * np.pi * 440.0 * t + rng.uniform(0, 2 * np.pi))


def chirp(n: int, rate: int, rng) -> np.ndarray:
    t = np.arange(n) / rate
    f0 = rng.uniform(200.0, 1000.0)
    f1 = rng.uniform(2000.0, min(6000.0, 0.45 * rate))
    sweep = (f1 - f0) / (n / rate)
    return np.sin(2 * np.pi * (f0 * t + 0.5 * sweep * t**2) + rng.uniform(0, 2 * np.pi))


def pink(n: int, rate: int, rng) -> np.ndarray:
    return colored_noise("pink", n, int(rng.integers(2**63)), rate).samples / 3.0


GENERATORS = (tone, chirp, pink)


def make_clip(label: int, n: int, rate: int, rng) -> np.ndarray:
    x = GENERATORS[label](n, rate, rng)
    x = x / np.max(np.abs(x)) * rng.uniform(0.1, 0.9)
    # low-level background so no class is perfectly clean
    x = x + rng.normal(0.0, 1e-3, n)
    return np.clip(x, -1.0, 1.0)


def make_split(per_class: int, duration_s: float = 1.0, rate: int = 16000, seed=0) -> Split:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    labels = np.repeat(np.arange(len(CLASSES)), per_class)
    labels = labels[rng.permutation(labels.size)]
    x = np.stack([make_clip(int(c), n, rate, rng) for c in labels])
    y = np.eye(len(CLASSES))[labels]
    return Split(x, y, rate)


def toy_dataset(train_per_class: int = 100, test_per_class: int = 30, duration_s: float = 1.0,
                rate: int = 16000, seed: int = 0) -> tuple[Split, Split]:
    """300 train / 90 test clips at the defaults."""
    return (make_split(train_per_class, duration_s, rate, [seed, 0]),
            make_split(test_per_class, duration_s, rate, [seed, 1]))


def write_dataset(root, per_class: int = 4, folds: int = 2, duration_s: float = 1.0, rate: int = 16000,
                  seed: int = 0) -> Path:
    """Write WAV clips plus ``manifest.csv`` under ``root``; folds are assigned round-robin."""
    from .data import write_manifest, write_wav

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    split = make_split(per_class, duration_s, rate, seed)
    rows = []
    for i, (x, y) in enumerate(zip(split.x, split.y)):
        name = f"clip{i:04d}.wav"
        write_wav(root / name, Waveform(x, rate))
        rows.append((name, 1 + i % folds, CLASSES[int(np.argmax(y))]))
    path = root / "manifest.csv"
    write_manifest(path, rows)
    return path
