"""Label-mixing augmentations: gain-normalized mixup, timemix, FreqMix, PhaseMix."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .signal import ComplexSpectrogram, StftConfig, Waveform, gain_db, istft, phase, stft


@dataclass
class LabeledSample:
    waveform: Waveform
    label: np.ndarray

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float64)
        if self.label.ndim != 1:
            raise ValueError("label must be a vector")
        if np.any(self.label < 0) or np.any(self.label > 1):
            raise ValueError("label entries must lie in [0, 1]")


class MixKind(str, Enum):
    MIXUP = "mixup"
    TIMEMIX = "timemix"
    FREQMIX = "freqmix"
    PHASEMIX = "phasemix"


@dataclass
class MixParams:
    lam: float
    kind: MixKind
    p: float = 0.0

    def __post_init__(self):
        self.kind = MixKind(self.kind)
        lo = 0.5 if self.kind is MixKind.FREQMIX else 0.0
        if not lo <= self.lam <= 1.0:
            raise ValueError(f"{self.kind.value} needs lambda in [{lo}, 1], got {self.lam}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")


def _check_pair(a: LabeledSample, b: LabeledSample):
    if len(a.waveform) != len(b.waveform):
        raise ValueError(f"length mismatch: {len(a.waveform)} vs {len(b.waveform)}")
    if a.waveform.sample_rate != b.waveform.sample_rate:
        raise ValueError("sample rate mismatch")
    if a.label.shape != b.label.shape:
        raise ValueError("label dimension mismatch")


def _check_lambda(lam: float, lo: float = 0.0):
    if not lo <= lam <= 1.0:
        raise ValueError(f"lambda must be in [{lo}, 1], got {lam}")


def mix_labels(y1: np.ndarray, y2: np.ndarray, weight: float) -> np.ndarray:
    return weight * y1 + (1.0 - weight) * y2


def mixup_weight(lam: float, gain1_db: float, gain2_db: float) -> float:
    """Effective amplitude weight of sample 1 after correcting for sample gains."""
    if lam == 0.0:
        return 0.0
    if lam == 1.0:
        return 1.0
    return 1.0 / (1.0 + 10.0 ** ((gain1_db - gain2_db) / 20.0) * (1.0 - lam) / lam)


def mixup(a: LabeledSample, b: LabeledSample, lam: float, rng=None) -> LabeledSample:
    _check_pair(a, b)
    _check_lambda(lam)
    q = mixup_weight(lam, gain_db(a.waveform), gain_db(b.waveform))
    x = (q * a.waveform.samples + (1.0 - q) * b.waveform.samples) / np.sqrt(q * q + (1.0 - q) ** 2)
    return LabeledSample(a.waveform.replace(x), mix_labels(a.label, b.label, lam))


def timemix(a: LabeledSample, b: LabeledSample, lam: float, rng=None) -> LabeledSample:
    """Paste a co-located segment of length round((1-lam)*n) from ``b`` into ``a``."""
    _check_pair(a, b)
    _check_lambda(lam)
    n = len(a.waveform)
    seg = int(round((1.0 - lam) * n))
    x = a.waveform.samples.copy()
    if seg > 0:
        start = int(np.random.default_rng(rng).integers(0, n - seg + 1))
        x[start : start + seg] = b.waveform.samples[start : start + seg]
    return LabeledSample(a.waveform.replace(x), mix_labels(a.label, b.label, lam))


def cutoff_bin(lam: float, n_bins: int) -> int:
    return int(np.floor(lam * n_bins))


def freqmix_spectrum(X1: ComplexSpectrogram, X2: ComplexSpectrogram, lam: float, p: float):
    """Splice complementary frequency bands; sample 1 always keeps ``k_c`` bins.

    p <= 0.5: low bins [0, k_c) from X1, the rest from X2.
    p >  0.5: high bins [n_bins - k_c, n_bins) from X1, the rest from X2.
    Returns ``(X_mix, from_first)`` where ``from_first`` masks the bins taken from X1.
    """
    _check_lambda(lam, 0.5)
    n_bins = X1.data.shape[0]
    k_c = cutoff_bin(lam, n_bins)
    from_first = np.zeros(n_bins, dtype=bool)
    if p <= 0.5:
        from_first[:k_c] = True
    else:
        from_first[n_bins - k_c :] = True
    data = np.concatenate(
        [X1.data[:k_c], X2.data[k_c:]] if p <= 0.5 else [X2.data[: n_bins - k_c], X1.data[n_bins - k_c :]],
        axis=0,
    )
    return X1.with_data(data), from_first


def freqmix(a: LabeledSample, b: LabeledSample, lam: float, p: float,
            cfg: StftConfig = StftConfig()) -> LabeledSample:
    _check_pair(a, b)
    _check_lambda(lam, 0.5)
    X_mix, _ = freqmix_spectrum(stft(a.waveform, cfg), stft(b.waveform, cfg), lam, p)
    return LabeledSample(istft(X_mix), mix_labels(a.label, b.label, lam))


def phasemix_polar(X1: ComplexSpectrogram, X2: ComplexSpectrogram, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Polar form ``(|X1|, phi_mix)`` of the mix; phases are interpolated as principal values."""
    _check_lambda(lam)
    return np.abs(X1.data), lam * phase(X1) + (1.0 - lam) * phase(X2)


def phasemix_spectrum(X1: ComplexSpectrogram, X2: ComplexSpectrogram, lam: float) -> ComplexSpectrogram:
    """|X1| * exp(j * phi_mix). The modulus of the product matches |X1| to one ulp."""
    mag, phi = phasemix_polar(X1, X2, lam)
    return X1.with_data(mag * np.exp(1j * phi))


def phasemix_label_weight(lam: float) -> float:
    return 0.5 * lam + 0.5


def phasemix(a: LabeledSample, b: LabeledSample, lam: float,
             cfg: StftConfig = StftConfig()) -> LabeledSample:
    _check_pair(a, b)
    _check_lambda(lam)
    X_mix = phasemix_spectrum(stft(a.waveform, cfg), stft(b.waveform, cfg), lam)
    return LabeledSample(istft(X_mix), mix_labels(a.label, b.label, phasemix_label_weight(lam)))


def draw_mix_params(kind: MixKind | str, rng) -> MixParams:
    kind = MixKind(kind)
    if kind is MixKind.FREQMIX:
        return MixParams(float(rng.uniform(0.5, 1.0)), kind, float(rng.uniform(0.0, 1.0)))
    return MixParams(float(rng.uniform(0.0, 1.0)), kind)


def apply_mix(a: LabeledSample, b: LabeledSample, params: MixParams, rng=None,
              cfg: StftConfig = StftConfig()) -> LabeledSample:
    if params.kind is MixKind.MIXUP:
        return mixup(a, b, params.lam, rng)
    if params.kind is MixKind.TIMEMIX:
        return timemix(a, b, params.lam, rng)
    if params.kind is MixKind.FREQMIX:
        return freqmix(a, b, params.lam, params.p, cfg)
    return phasemix(a, b, params.lam, cfg)


@dataclass
class MixPolicy:
    """Which mixing strategies are enabled, and how often mixing happens.

    Each call mixes with probability ``probability``; when it does, exactly one
    of the enabled kinds is picked uniformly.
    """

    kinds: tuple[MixKind, ...] = tuple(MixKind)
    probability: float = 0.5
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.kinds = tuple(MixKind(k) for k in self.kinds)
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")

    @property
    def enabled(self) -> bool:
        return bool(self.kinds) and self.probability > 0.0

    def __call__(self, a: LabeledSample, b: LabeledSample, rng) -> tuple[LabeledSample, dict | None]:
        rng = np.random.default_rng(rng)
        if not self.enabled or rng.random() >= self.probability:
            return a, None
        kind = self.kinds[int(rng.integers(len(self.kinds)))]
        params = draw_mix_params(kind, rng)
        out = apply_mix(a, b, params, rng, self.stft)
        return out, {"stage": "mix", "kind": kind.value, "lam": params.lam, "p": params.p}
