"""Raw-waveform audio classification with spectral mixing augmentations."""

from .model import EatConfig, EatModel, build, eat_m, eat_s, param_count
from .signal import ComplexSpectrogram, StftConfig, Waveform, istft, stft

__all__ = ["ComplexSpectrogram", "EatConfig", "EatModel", "StftConfig", "Waveform", "build", "eat_m", "eat_s",
           "istft", "param_count", "stft"]
__version__ = "0.1.0"
