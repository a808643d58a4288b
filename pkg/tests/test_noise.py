import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import welch_slope

from eat_audio.noise import (
    COLORED_KINDS,
    NoiseKind,
    colored_noise,
    make_noise,
    phase_noise,
    phase_noise_spectrum,
    uniform_noise,
)
from eat_audio.signal import StftConfig, Waveform, istft, rms, stft

SLOPES = {"white": 0.0, "blue": 1.0, "pink": -1.0, "violet": 2.0, "red": -2.0}


def test_kind_exponents():
    assert {k.value: k.exponent for k in NoiseKind if k.value in SLOPES} == SLOPES
    assert NoiseKind.UNIFORM.exponent is None and NoiseKind.PHASE.exponent is None


@pytest.mark.parametrize("kind", sorted(SLOPES))
def test_slope(kind):
    x = colored_noise(kind, 65536, seed=3).samples
    assert welch_slope(x) == pytest.approx(SLOPES[kind], abs=0.3)


@pytest.mark.parametrize("kind", COLORED_KINDS)
def test_unit_rms_zero_mean(kind):
    x = colored_noise(kind, 4096, seed=0).samples
    assert np.sqrt(np.mean(x**2)) == pytest.approx(1.0, abs=1e-12)
    assert abs(x.mean()) < 1e-12


@given(st.sampled_from(COLORED_KINDS), st.integers(256, 3000), st.integers(0, 2**32))
def test_deterministic(kind, n, seed):
    a, b = colored_noise(kind, n, seed), colored_noise(kind, n, seed)
    assert np.array_equal(a.samples, b.samples)
    assert np.all(np.isfinite(a.samples))


def test_too_short():
    with pytest.raises(ValueError):
        colored_noise("pink", 255, 0)


def test_uniform_noise():
    x = uniform_noise(65536, seed=9).samples
    assert abs(x.mean()) < 0.02
    assert rms(x) == pytest.approx(1.0, abs=1e-6)
    assert np.array_equal(x, uniform_noise(65536, seed=9).samples)
    # still uniform in shape: the sample range is flat up to sqrt(3)
    assert np.max(np.abs(x)) <= np.sqrt(3) + 1e-9


def test_uniform_bad_length():
    with pytest.raises(ValueError):
        uniform_noise(0, 0)


def test_make_noise_phase_rejected():
    with pytest.raises(ValueError):
        make_noise("phase", 1000, 0)


class TestPhaseNoise:
    def tone(self, n=22050, rate=22050):
        return Waveform(np.sin(2 * np.pi * 440 * np.arange(n) / rate), rate)

    def test_strength_zero_is_round_trip(self):
        x = self.tone()
        cfg = StftConfig()
        np.testing.assert_allclose(phase_noise(x, 0.0, 1, cfg).samples, istft(stft(x, cfg)).samples, atol=1e-12)

    def test_magnitude_untouched_before_resynthesis(self, rng):
        X = stft(Waveform(rng.standard_normal(5000), 16000))
        Y = phase_noise_spectrum(X, 1.3, seed=4)
        np.testing.assert_allclose(np.abs(Y.data), np.abs(X.data), rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_energy_preserved_at_pi(self, seed):
        x = self.tone()
        y = phase_noise(x, np.pi, seed)
        assert len(y) == len(x)
        assert np.sum(y.samples**2) == pytest.approx(np.sum(x.samples**2), rel=0.05)

    def test_negative_strength(self):
        with pytest.raises(ValueError):
            phase_noise(self.tone(), -0.1, 0)
