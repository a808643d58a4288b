"""Seeded noise generators: five spectral colors, uniform, and STFT phase noise."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .signal import ComplexSpectrogram, StftConfig, Waveform, istft, phase, rms, stft

MIN_COLORED_LENGTH = 256
DEFAULT_PHASE_STRENGTH = 0.4


class NoiseKind(str, Enum):
    WHITE = "white"
    BLUE = "blue"
    PINK = "pink"
    VIOLET = "violet"
    RED = "red"
    UNIFORM = "uniform"
    PHASE = "phase"

    @property
    def exponent(self) -> float | None:
        """PSD exponent alpha (PSD ~ f**alpha); None for non-colored kinds."""
        return _EXPONENTS.get(self)


_EXPONENTS = {
    NoiseKind.WHITE: 0.0,
    NoiseKind.BLUE: 1.0,
    NoiseKind.PINK: -1.0,
    NoiseKind.VIOLET: 2.0,
    NoiseKind.RED: -2.0,
}
COLORED_KINDS = tuple(_EXPONENTS)


def _normalize(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    return x / np.sqrt(np.mean(x**2))


def colored_noise(kind: NoiseKind | str, length: int, seed, sample_rate: int = 22050) -> Waveform:
    """Zero-mean, unit-RMS noise with PSD proportional to f**alpha.

    White Gaussian noise is shaped in the frequency domain by f**(alpha/2)
    with the DC bin zeroed.
    """
    kind = NoiseKind(kind)
    if kind not in _EXPONENTS:
        raise ValueError(f"{kind.value} is not a colored noise kind")
    if length < MIN_COLORED_LENGTH:
        raise ValueError(f"colored noise needs length >= {MIN_COLORED_LENGTH}, got {length}")
    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.standard_normal(length))
    f = np.fft.rfftfreq(length)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (_EXPONENTS[kind] / 2.0)
    shaped = np.fft.irfft(spectrum * scale, n=length)
    return Waveform(_normalize(shaped), sample_rate)


def uniform_noise(length: int, seed, sample_rate: int = 22050) -> Waveform:
    """Amplitude-uniform noise on [-1, 1], rescaled to unit RMS."""
    if length <= 0:
        raise ValueError(f"length must be positive, got {length}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, length)
    return Waveform(x / np.sqrt(np.mean(x**2)), sample_rate)


def phase_noise_spectrum(X: ComplexSpectrogram, strength: float, seed) -> ComplexSpectrogram:
    """|X| * exp(j(phi + eps)), eps ~ N(0, strength**2) per bin."""
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, strength, X.data.shape) if strength > 0 else 0.0
    return X.with_data(np.abs(X.data) * np.exp(1j * (phase(X) + eps)))


def phase_noise(
    x: Waveform,
    strength: float = DEFAULT_PHASE_STRENGTH,
    seed=None,
    cfg: StftConfig = StftConfig(),
) -> Waveform:
    """Perturb STFT phases with Gaussian noise and resynthesize.

    Overlap-add of phase-scrambled frames partially cancels, so the output
    is rescaled to the RMS of the plain STFT round trip.
    """
    X = stft(x, cfg)
    reference = istft(X).samples
    y = istft(phase_noise_spectrum(X, strength, seed)).samples
    out_rms = rms(y)
    if out_rms > 0:
        y = y * (rms(reference) / out_rms)
    return Waveform(y, x.sample_rate)


def make_noise(kind: NoiseKind | str, length: int, seed, sample_rate: int = 22050) -> Waveform:
    """Unit-RMS additive noise of any kind except ``phase``."""
    kind = NoiseKind(kind)
    if kind is NoiseKind.UNIFORM:
        return uniform_noise(length, seed, sample_rate)
    if kind is NoiseKind.PHASE:
        raise ValueError("phase noise is a transform of a signal, not an additive source")
    return colored_noise(kind, length, seed, sample_rate)
