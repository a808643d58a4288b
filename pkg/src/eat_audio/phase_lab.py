"""Phase-only / magnitude-only waveform synthesis and the input-mode comparison experiment."""

from __future__ import annotations

import csv
from dataclasses import replace
from enum import Enum

import numpy as np

from .model import EatConfig
from .signal import StftConfig, Waveform, istft, phase, stft
from .train import Split, TrainConfig, ema_model, evaluate, fit


class InputMode(str, Enum):
    ORIGINAL = "original"
    PHASE = "phase"
    MAGNITUDE = "magnitude"
    PHASE_PLUS_MAGNITUDE = "phase_plus_magnitude"

    @property
    def channels(self) -> int:
        return 2 if self is InputMode.PHASE_PLUS_MAGNITUDE else 1


def magnitude_spectrum(x: Waveform, cfg: StftConfig = StftConfig()):
    X = stft(x, cfg)
    return X.with_data(np.abs(X.data).astype(np.complex128))


def phase_spectrum(x: Waveform, cfg: StftConfig = StftConfig()):
    """Unit-magnitude spectrogram exp(j*phi); bins of zero magnitude get phi = 0."""
    X = stft(x, cfg)
    return X.with_data(np.exp(1j * phase(X)))


def magnitude_waveform(x: Waveform, cfg: StftConfig = StftConfig()) -> Waveform:
    return istft(magnitude_spectrum(x, cfg))


def phase_waveform(x: Waveform, cfg: StftConfig = StftConfig()) -> Waveform:
    return istft(phase_spectrum(x, cfg))


def synthesize(x: np.ndarray, mode: InputMode | str, rate: int, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Model input for one clip: (L,) for single-channel modes, (2, L) for phase+magnitude."""
    mode = InputMode(mode)
    wav = Waveform(x, rate)
    if mode is InputMode.ORIGINAL:
        return wav.samples
    if mode is InputMode.PHASE:
        return phase_waveform(wav, cfg).samples
    if mode is InputMode.MAGNITUDE:
        return magnitude_waveform(wav, cfg).samples
    return np.stack([phase_waveform(wav, cfg).samples, magnitude_waveform(wav, cfg).samples])


def transform_split(split: Split, mode: InputMode | str, cfg: StftConfig = StftConfig()) -> Split:
    x = np.stack([synthesize(row, mode, split.sample_rate, cfg) for row in split.x])
    return Split(x, split.y, split.sample_rate, split.folds)


def run_phase_experiment(train: Split, test: Split, modes, model_cfg: EatConfig, train_cfg: TrainConfig,
                         seeds=(0,), stft_cfg: StftConfig = StftConfig(), on_result=None) -> list[dict]:
    """Train one identical model per (mode, seed) without any augmentation; report accuracy."""
    if train.y.shape[1] < 2:
        raise ValueError("experiment needs at least 2 classes")
    rows = []
    for mode in map(InputMode, modes):
        tr, te = transform_split(train, mode, stft_cfg), transform_split(test, mode, stft_cfg)
        cfg = replace(model_cfg, in_channels=mode.channels)
        for seed in seeds:
            model, state, _ = fit(cfg, replace(train_cfg, seed=seed), tr, seed=seed)
            acc = evaluate(ema_model(model, state), te, train_cfg)["accuracy"]
            row = {"mode": mode.value, "seed": seed, "accuracy": acc}
            rows.append(row)
            if on_result:
                on_result(row)
    return rows


def write_report(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["mode", "seed", "accuracy"])
        writer.writeheader()
        writer.writerows(rows)
