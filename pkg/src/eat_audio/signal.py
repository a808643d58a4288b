"""Core DSP: waveforms, STFT/ISTFT, polar decomposition, resampling, gain."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

# Floor applied to RMS before taking the log (-160 dB).
RMS_FLOOR = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def replace(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 1024
    hop: int | None = None
    window: str = "hann"
    centered: bool = True

    def __post_init__(self):
        n_fft = self.n_fft
        if n_fft < 2 or n_fft & (n_fft - 1):
            raise ValueError(f"n_fft must be a power of two >= 2, got {n_fft}")
        if self.hop is None:
            object.__setattr__(self, "hop", n_fft // 4)
        if not 0 < self.hop <= n_fft:
            raise ValueError(f"hop must be in (0, n_fft], got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.centered:
            if n_fft % self.hop:
                raise ValueError(f"hop {self.hop} must divide n_fft {n_fft}")
            # overlap-add of the squared window must never vanish
            if self.overlap_norm().min() <= 1e-6:
                raise ValueError(f"hop {self.hop} is not overlap-add compliant for n_fft {n_fft}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def window_array(self) -> np.ndarray:
        return hann(self.n_fft)

    def overlap_norm(self) -> np.ndarray:
        """One period (``hop`` samples) of the summed squared window."""
        w2 = self.window_array() ** 2
        return w2.reshape(-1, self.hop).sum(axis=0) if self.n_fft % self.hop == 0 else w2[: self.hop]

    def n_frames(self, length: int) -> int:
        if self.centered:
            return 1 + length // self.hop
        if length < self.n_fft:
            raise ValueError(f"uncentered STFT needs at least n_fft={self.n_fft} samples, got {length}")
        return 1 + (length - self.n_fft) // self.hop


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # (n_bins, n_frames)
    config: StftConfig
    origin_length: int
    sample_rate: int = 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2 or self.data.shape[0] != self.config.n_bins:
            raise ValueError(
                f"expected ({self.config.n_bins}, n_frames) spectrogram, got {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains NaN or Inf")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "ComplexSpectrogram":
        return ComplexSpectrogram(data, self.config, self.origin_length, self.sample_rate)


def _as_samples(x) -> tuple[np.ndarray, int]:
    if isinstance(x, Waveform):
        return x.samples, x.sample_rate
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain NaN or Inf")
    return x, 1


def stft(x: Waveform | np.ndarray, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    samples, rate = _as_samples(x)
    if samples.ndim != 1 or samples.shape[0] < 1:
        raise ValueError("stft needs a non-empty 1-D signal")
    length = samples.shape[0]
    n_frames = cfg.n_frames(length)
    if cfg.centered:
        half = cfg.n_fft // 2
        # enough trailing zeros for the last frame to be complete
        tail = (n_frames - 1) * cfg.hop + cfg.n_fft - (length + half)
        samples = np.concatenate([np.zeros(half), samples, np.zeros(max(tail, 0))])
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.n_fft)[:: cfg.hop][:n_frames]
    spec = np.fft.rfft(frames * cfg.window_array(), axis=1).T
    return ComplexSpectrogram(spec, cfg, length, rate)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n_frames, n_fft = frames.shape
    out = np.zeros((n_frames - 1) * hop + n_fft)
    if n_fft % hop == 0:
        for r in range(n_fft // hop):
            seg = frames[:, r * hop : (r + 1) * hop].reshape(-1)
            out[r * hop : r * hop + seg.shape[0]] += seg
    else:
        for t in range(n_frames):
            out[t * hop : t * hop + n_fft] += frames[t]
    return out


def istft(X: ComplexSpectrogram) -> Waveform:
    """Inverse STFT by windowed overlap-add, normalized by the summed squared window.

    Returns exactly ``X.origin_length`` samples.
    """
    cfg = X.config
    w = cfg.window_array()
    frames = np.fft.irfft(X.data.T, n=cfg.n_fft, axis=1) * w
    signal = _overlap_add(frames, cfg.hop)
    norm = _overlap_add(np.broadcast_to(w**2, frames.shape), cfg.hop)
    start = cfg.n_fft // 2 if cfg.centered else 0
    stop = start + X.origin_length
    if signal.shape[0] < stop:
        signal = np.concatenate([signal, np.zeros(stop - signal.shape[0])])
        norm = np.concatenate([norm, np.zeros(stop - norm.shape[0])])
    signal, norm = signal[start:stop], norm[start:stop]
    covered = norm > 1e-10
    if cfg.centered and not covered.all():
        raise ValueError("zero overlap-add normalization; configuration is not COLA compliant")
    out = np.zeros_like(signal)
    out[covered] = signal[covered] / norm[covered]
    return Waveform(out, X.sample_rate)


def magnitude(X: ComplexSpectrogram | np.ndarray) -> np.ndarray:
    data = X.data if isinstance(X, ComplexSpectrogram) else np.asarray(X)
    return np.abs(data)


def phase(X: ComplexSpectrogram | np.ndarray) -> np.ndarray:
    """Principal phase in (-pi, pi]; zero entries get phase 0."""
    data = X.data if isinstance(X, ComplexSpectrogram) else np.asarray(X)
    ph = np.angle(data)
    ph[ph == -np.pi] = np.pi
    ph[data == 0] = 0.0
    return ph


def _kaiser_sinc(cutoff: float, half_len: int, beta: float) -> np.ndarray:
    """Unit-DC-gain Kaiser-windowed sinc; ``cutoff`` in cycles/sample."""
    n = np.arange(-half_len, half_len + 1)
    h = 2 * cutoff * np.sinc(2 * cutoff * n) * np.kaiser(2 * half_len + 1, beta)
    return h / h.sum()


def resample(x: Waveform, target_rate: int, zero_crossings: int = 64, beta: float = 8.0) -> Waveform:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc filter."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == x.sample_rate:
        return Waveform(x.samples.copy(), x.sample_rate)
    g = math.gcd(target_rate, x.sample_rate)
    up, down = target_rate // g, x.sample_rate // g
    factor = max(up, down)
    h = _kaiser_sinc(0.5 / factor, zero_crossings * factor, beta)
    y = resample_poly(x.samples, up, down, window=h)
    n_out = int(round(len(x) * target_rate / x.sample_rate))
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.shape[0])])
    return Waveform(y, target_rate)


def pad_or_trim(x: Waveform, target_len: int, mode: str = "zero_pad_end") -> Waveform:
    """Force ``x`` to ``target_len`` samples.

    ``zero_pad_end`` appends zeros / drops the tail; ``center`` pads or
    crops symmetrically (extra sample goes at the end).
    """
    if target_len <= 0:
        raise ValueError(f"target_len must be positive, got {target_len}")
    n = len(x)
    s = x.samples
    if n == target_len:
        return Waveform(s.copy(), x.sample_rate)
    if mode == "zero_pad_end":
        out = s[:target_len] if n > target_len else np.concatenate([s, np.zeros(target_len - n)])
    elif mode == "center":
        if n > target_len:
            off = (n - target_len) // 2
            out = s[off : off + target_len]
        else:
            lead = (target_len - n) // 2
            out = np.concatenate([np.zeros(lead), s, np.zeros(target_len - n - lead)])
    else:
        raise ValueError(f"unknown pad mode {mode!r}")
    return Waveform(out.copy(), x.sample_rate)


def rms(x: Waveform | np.ndarray) -> float:
    samples, _ = _as_samples(x)
    return float(np.sqrt(np.mean(samples**2)))


def gain_db(x: Waveform | np.ndarray) -> float:
    return 20.0 * math.log10(max(rms(x), RMS_FLOOR))
