"""Label-preserving waveform transforms and a seeded pipeline that chains them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.signal import fftconvolve

from .noise import DEFAULT_PHASE_STRENGTH, NoiseKind, make_noise, phase_noise
from .signal import StftConfig, Waveform, rms

MU = 255.0
FILTER_TAPS = 101
SHIFT_TAPS = 32
SHIFT_BETA = 8.0


def random_amplitude(x: Waveform, gain_range_db=(-6.0, 6.0), fragment: bool = False, rng=None):
    """Scale the whole signal, or one contiguous 10-50% fragment, by a random dB gain.

    Returns ``(waveform, params)``.
    """
    lo, hi = gain_range_db
    if not -30.0 <= lo <= hi <= 30.0:
        raise ValueError(f"gain range must lie within [-30, 30] dB, got {gain_range_db}")
    rng = np.random.default_rng(rng)
    gain = rng.uniform(lo, hi) if hi > lo else lo
    scale = 10.0 ** (gain / 20.0)
    y = x.samples.copy()
    n = len(x)
    if fragment:
        seg = max(1, int(round(rng.uniform(0.1, 0.5) * n)))
        start = int(rng.integers(0, n - seg + 1))
        y[start : start + seg] *= scale
        params = {"gain_db": gain, "start": start, "length": seg}
    else:
        y *= scale
        params = {"gain_db": gain}
    return x.replace(y), params


def _fractional_delay_kernel(frac: float) -> tuple[np.ndarray, int]:
    """Kaiser-windowed sinc taps delaying by ``frac`` samples, and the tap offset."""
    half = SHIFT_TAPS // 2
    k = np.arange(-half + 1, half + 1)  # 32 taps
    t = k - frac
    win = np.i0(SHIFT_BETA * np.sqrt(np.clip(1.0 - (t / half) ** 2, 0.0, None))) / np.i0(SHIFT_BETA)
    h = np.sinc(t) * win
    return h / h.sum(), -half + 1


def time_shift(x: Waveform, shift: float, mode: str = "linear") -> Waveform:
    """Delay ``x`` by ``shift`` samples (negative advances).

    The integer part is an index shift, zero-filling (``linear``) or wrapping
    (``cyclic``); the fractional part uses a 32-tap windowed-sinc interpolator.
    """
    n = len(x)
    if abs(shift) >= n:
        raise ValueError(f"|shift| must be < length {n}, got {shift}")
    if mode not in ("linear", "cyclic"):
        raise ValueError(f"unknown shift mode {mode!r}")
    whole = math.floor(shift)
    frac = shift - whole
    s = x.samples
    if frac > 0:
        # y[i] = sum_j h[j] x[i - first - j]
        h, first = _fractional_delay_kernel(frac)
        if mode == "cyclic":
            pad = h.size
            ext = np.concatenate([s[-pad:] if pad <= n else np.resize(s, pad), s,
                                  s[:pad] if pad <= n else np.resize(s, pad)])
            s = np.convolve(ext, h)[pad - first : pad - first + n]
        else:
            s = np.convolve(s, h)[-first : -first + n]
    if mode == "cyclic":
        out = np.roll(s, whole)
    else:
        out = np.zeros(n)
        if whole >= 0:
            out[whole:] = s[: n - whole]
        else:
            out[: n + whole] = s[-whole:]
    return x.replace(out)


def lowpass_taps(cutoff_hz: float, sample_rate: int, taps: int = FILTER_TAPS) -> np.ndarray:
    fc = cutoff_hz / sample_rate
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(taps)
    return h / h.sum()


def filter_taps(kind: str, cutoff_hz: float, sample_rate: int) -> np.ndarray:
    if not 0 < cutoff_hz < sample_rate / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {sample_rate / 2})")
    h = lowpass_taps(cutoff_hz, sample_rate)
    if kind == "low_pass":
        return h
    if kind == "high_pass":
        h = -h
        h[FILTER_TAPS // 2] += 1.0
        return h
    raise ValueError(f"unknown filter kind {kind!r}")


def random_filter(x: Waveform, kind: str, cutoff_hz, rng=None):
    """Linear-phase FIR low/high-pass, delay-compensated.

    ``cutoff_hz`` is either a frequency or a ``(lo, hi)`` range drawn uniformly.
    """
    if isinstance(cutoff_hz, (tuple, list)):
        cutoff_hz = float(np.random.default_rng(rng).uniform(*cutoff_hz))
    h = filter_taps(kind, cutoff_hz, x.sample_rate)
    y = fftconvolve(x.samples, h, mode="same")
    return x.replace(y), {"kind": kind, "cutoff_hz": cutoff_hz}


def invert_polarity(x: Waveform) -> Waveform:
    return x.replace(-x.samples)


def time_mask(x: Waveform, mask_fraction: float, rng=None):
    if not 0.0 <= mask_fraction <= 0.5:
        raise ValueError(f"mask_fraction must be in [0, 0.5], got {mask_fraction}")
    n = len(x)
    seg = int(round(mask_fraction * n))
    y = x.samples.copy()
    if seg == 0:
        return x.replace(y), {"start": 0, "length": 0}
    start = int(np.random.default_rng(rng).integers(0, n - seg + 1))
    y[start : start + seg] = 0.0
    return x.replace(y), {"start": start, "length": seg}


def mu_law_compress(x, mu: float = MU):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def mu_law_expand(y, mu: float = MU):
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu


def _uniform_quantize(x: np.ndarray, levels: int) -> np.ndarray:
    # mid-rise grid: -1 + step/2 + k*step, k = 0..levels-1
    step = 2.0 / levels
    k = np.clip(np.floor((x + 1.0) / step), 0, levels - 1)
    return -1.0 + step / 2 + k * step


def quantize(x: Waveform, mode: str = "mu_law", levels: int = 256) -> Waveform:
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    s = x.samples
    if np.max(np.abs(s), initial=0.0) > 1.0:
        raise ValueError("quantize expects samples within [-1, 1]")
    if mode == "mu_law":
        y = mu_law_expand(_uniform_quantize(mu_law_compress(s), levels))
    elif mode == "linear":
        y = _uniform_quantize(s, levels)
    else:
        raise ValueError(f"unknown quantization mode {mode!r}")
    return x.replace(y)


def add_noise(x: Waveform, kind: NoiseKind | str, snr_db_range=(10.0, 40.0), rng=None,
              stft_cfg: StftConfig = StftConfig()):
    """Add unit-RMS noise of ``kind`` scaled to a uniformly drawn SNR.

    ``phase`` noise perturbs the signal's own STFT phases instead (SNR is not
    used). A silent input is returned unchanged with a warning.
    """
    lo, hi = snr_db_range
    if not 0.0 <= lo <= hi <= 60.0:
        raise ValueError(f"SNR range must lie within [0, 60] dB, got {snr_db_range}")
    kind = NoiseKind(kind)
    rng = np.random.default_rng(rng)
    seed = int(rng.integers(2**63))
    if kind is NoiseKind.PHASE:
        y = phase_noise(x, DEFAULT_PHASE_STRENGTH, seed, stft_cfg)
        return y, {"kind": kind.value, "strength": DEFAULT_PHASE_STRENGTH}
    signal_rms = rms(x)
    if signal_rms == 0.0:
        warnings.warn("add_noise: silent input, SNR undefined; returning input unchanged")
        return x.replace(x.samples.copy()), {"kind": kind.value, "skipped": True}
    snr = rng.uniform(lo, hi) if hi > lo else lo
    noise = make_noise(kind, len(x), seed, x.sample_rate).samples
    noise = noise * (signal_rms / 10.0 ** (snr / 20.0))
    return x.replace(x.samples + noise), {"kind": kind.value, "snr_db": snr}


@dataclass
class AugmentSpec:
    """One pipeline stage: transform name, parameter ranges, application probability."""

    name: str
    params: dict[str, Any] = field(default_factory=dict)
    probability: float = 0.5

    def __post_init__(self):
        if self.name not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.name!r}; known: {sorted(TRANSFORMS)}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")
        merged = dict(DEFAULT_PARAMS[self.name])
        merged.update(self.params)
        for key, value in merged.items():
            if isinstance(value, (tuple, list)) and len(value) == 2 and all(
                isinstance(v, (int, float)) for v in value
            ) and value[0] > value[1]:
                raise ValueError(f"{self.name}.{key}: empty range {value}")
            bounds = BOUNDS.get((self.name, key))
            if bounds is not None:
                values = value if isinstance(value, (tuple, list)) else (value,)
                lo, hi = bounds
                if not all(isinstance(v, (int, float)) and lo <= v <= hi for v in values):
                    raise ValueError(f"{self.name}.{key}: {value} outside [{lo}, {hi}]")
        self.params = merged


def _draw(rng, value):
    if isinstance(value, (tuple, list)) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return float(rng.uniform(value[0], value[1])) if value[1] > value[0] else float(value[0])
    return value


def _apply_amplitude(x, p, rng):
    return random_amplitude(x, tuple(p["gain_db"]), bool(rng.random() < p["fragment_prob"]), rng)


def _apply_shift(x, p, rng):
    limit = p["max_fraction"] * len(x)
    shift = float(rng.uniform(-limit, limit))
    mode = str(rng.choice(p["modes"]))
    return time_shift(x, shift, mode), {"shift": shift, "mode": mode}


def _apply_filter(x, p, rng):
    kind = str(rng.choice(p["kinds"]))
    nyquist = x.sample_rate / 2
    lo, hi = p["low_pass_cutoff"] if kind == "low_pass" else p["high_pass_cutoff"]
    return random_filter(x, kind, (lo * nyquist, hi * nyquist), rng)


def _apply_polarity(x, p, rng):
    return invert_polarity(x), {}


def _apply_mask(x, p, rng):
    return time_mask(x, _draw(rng, p["fraction"]), rng)


def _apply_quantize(x, p, rng):
    mode = str(rng.choice(p["modes"]))
    levels = int(rng.integers(p["levels"][0], p["levels"][1] + 1))
    peak = np.max(np.abs(x.samples), initial=0.0)
    if peak > 1.0:  # quantizer domain is [-1, 1]
        x = x.replace(x.samples / peak)
    y = quantize(x, mode, levels)
    if peak > 1.0:
        y = y.replace(y.samples * peak)
    return y, {"mode": mode, "levels": levels}


def _apply_noise(x, p, rng):
    kind = str(rng.choice(p["kinds"]))
    return add_noise(x, kind, tuple(p["snr_db"]), rng)


TRANSFORMS: dict[str, Callable] = {
    "amplitude": _apply_amplitude,
    "time_shift": _apply_shift,
    "filter": _apply_filter,
    "invert_polarity": _apply_polarity,
    "time_mask": _apply_mask,
    "quantize": _apply_quantize,
    "noise": _apply_noise,
}

# Ranges are not given by the method description; these are working defaults.
DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "amplitude": {"gain_db": (-6.0, 6.0), "fragment_prob": 0.5},
    "time_shift": {"max_fraction": 0.1, "modes": ("linear", "cyclic")},
    # cutoffs as fractions of Nyquist
    "filter": {"kinds": ("low_pass", "high_pass"), "low_pass_cutoff": (0.25, 0.9),
               "high_pass_cutoff": (0.005, 0.05)},
    "invert_polarity": {},
    "time_mask": {"fraction": (0.0, 0.2)},
    "quantize": {"modes": ("mu_law", "linear"), "levels": (64, 256)},
    "noise": {"kinds": tuple(k.value for k in NoiseKind), "snr_db": (10.0, 40.0)},
}


# admissible values for each numeric parameter (inclusive)
BOUNDS: dict[tuple[str, str], tuple[float, float]] = {
    ("amplitude", "gain_db"): (-30.0, 30.0),
    ("amplitude", "fragment_prob"): (0.0, 1.0),
    ("time_shift", "max_fraction"): (0.0, 0.99),
    ("filter", "low_pass_cutoff"): (1e-3, 0.999),
    ("filter", "high_pass_cutoff"): (1e-3, 0.999),
    ("time_mask", "fraction"): (0.0, 0.5),
    ("quantize", "levels"): (2, 2**16),
    ("noise", "snr_db"): (0.0, 60.0),
}


def default_specs(probability: float = 0.5, noise: bool = True) -> list[AugmentSpec]:
    names = [n for n in TRANSFORMS if noise or n != "noise"]
    return [AugmentSpec(n, probability=probability) for n in names]


class AugmentPipeline:
    """Apply each stage with its probability; every stage preserves length and rate.

    The noise stage draws exactly one noise kind per call.
    """

    def __init__(self, specs: list[AugmentSpec]):
        self.specs = list(specs)

    def __call__(self, x: Waveform, rng) -> tuple[Waveform, list[dict]]:
        rng = np.random.default_rng(rng)
        log = []
        for spec in self.specs:
            if spec.probability <= 0.0 or rng.random() >= spec.probability:
                continue
            x, params = TRANSFORMS[spec.name](x, spec.params, rng)
            log.append({"stage": spec.name, **params})
        return x, log
