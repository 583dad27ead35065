import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import lfilter

from core.audio_io import AudioBuffer
from core.dsp import (
    DEFAULT_RESOLUTIONS,
    IaifConfig,
    LpcModel,
    TremorConfig,
    autocorrelation,
    build_stack,
    cepstral_features,
    contour_band_ratio,
    correlogram,
    estimate_f0,
    f0_contour,
    iaif,
    inverse_filter,
    levinson_durbin,
    lpc_fit,
    medium_tremor_index,
    spectrogram,
    tremor_index,
)
from core.errors import (
    BadWindowError,
    DegenerateFlowError,
    FrameTooShortError,
    InsufficientVoicingError,
    LagTooLargeError,
    SingularAutocorrelationError,
)

SR = 16000


def fm_tone(f0: float, rate: float, depth: float, dur: float = 2.0) -> AudioBuffer:
    """Sine whose instantaneous frequency is f0 + depth·sin(2π·rate·t)"""
    t = np.arange(int(dur * SR)) / SR
    phase = f0 * t - depth / (2 * np.pi * rate) * np.cos(2 * np.pi * rate * t) if rate else f0 * t
    return AudioBuffer(samples=0.5 * np.sin(2 * np.pi * phase), sample_rate=SR)


# Autocorrelation / LPC

def test_autocorrelation_direct_sum():
    np.testing.assert_allclose(autocorrelation([1, 1, 1, 1], 2), [4, 3, 2])
    with pytest.raises(LagTooLargeError):
        autocorrelation([1, 2, 3], 3)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_autocorrelation_peaks_at_zero_lag(seed):
    x = np.random.default_rng(seed).normal(size=64)
    r = autocorrelation(x, 20)
    assert np.all(np.abs(r) <= r[0] + 1e-12)


def test_white_noise_is_uncorrelated():
    x = np.random.default_rng(0).normal(size=4096)
    r = autocorrelation(x, 1)
    assert abs(r[1] / r[0]) < 0.1


def test_levinson_white_and_ar1():
    white = levinson_durbin([1.0, 0.0, 0.0, 0.0], 3)
    np.testing.assert_allclose(white.coeffs, 0.0)
    assert white.gain == pytest.approx(1.0)

    e = np.random.default_rng(1).normal(size=100_000)
    x = lfilter([1.0], [1.0, -0.9], e)
    model = levinson_durbin(autocorrelation(x, 1), 1)
    assert model.coeffs[0] == pytest.approx(0.9, abs=0.02)


def test_levinson_recovers_ar2_poles():
    poles = 0.95 * np.exp(np.array([1j, -1j]) * 0.3 * np.pi)
    a = np.real(np.poly(poles))
    x = lfilter([1.0], a, np.random.default_rng(2).normal(size=100_000))
    model = levinson_durbin(autocorrelation(x, 2), 2)
    roots = np.roots(model.polynomial())
    for p in poles:
        assert np.min(np.abs(roots - p)) < 0.02


def test_levinson_reflection_coefficients_in_unit_interval():
    rng = np.random.default_rng(4)
    for _ in range(10):
        model = lpc_fit(rng.normal(size=512), 12)
        assert np.all(np.abs(model.reflection) < 1.0)


def test_levinson_singular():
    with pytest.raises(SingularAutocorrelationError):
        levinson_durbin([0.0, 0.0, 0.0], 2)
    with pytest.raises(SingularAutocorrelationError):
        # Perfectly predictable: r of a constant sequence
        levinson_durbin([1.0, 1.0, 1.0], 2)


def test_inverse_filter_recovers_excitation():
    poles = np.array([0.9 * np.exp(1j * w) for w in (0.2, 0.7, 1.2, 1.9, 2.6)])
    poles = np.concatenate([poles, poles.conj()])
    a = np.real(np.poly(poles))
    model = LpcModel(coeffs=-a[1:], gain=1.0)
    excitation = np.random.default_rng(5).normal(size=2000)
    x = lfilter([1.0], a, excitation)
    recovered = inverse_filter(x, model)
    err = np.linalg.norm(recovered[10:] - excitation[10:]) / np.linalg.norm(excitation[10:])
    assert err < 1e-6


def test_inverse_filter_trivial_cases():
    x = np.random.default_rng(6).normal(size=50)
    np.testing.assert_array_equal(inverse_filter(x, LpcModel(coeffs=np.zeros(0), gain=1.0)), x)
    np.testing.assert_array_equal(inverse_filter(np.zeros(30), LpcModel(coeffs=np.array([0.5, -0.2]), gain=1.0)), 0.0)


# IAIF

def test_iaif_normalizes_and_keeps_periodicity():
    t = np.arange(4000) / SR
    # Rosenberg-like pulse train through a resonance, then lip radiation
    phase = (t * 125.0) % 1.0
    flow = np.where(phase < 0.6, 0.5 * (1 - np.cos(np.pi * phase / 0.6)), 0.0)
    speech = np.diff(lfilter([1.0], [1.0, -1.3, 0.8], flow), prepend=0.0)
    g = iaif(speech, SR)
    assert g.normalized
    assert np.max(np.abs(g.flow)) == pytest.approx(1.0)
    np.testing.assert_allclose(g.flow_deriv[1:], np.diff(g.flow) * SR)
    assert estimate_f0(g.flow[1000:], SR) == pytest.approx(125.0, abs=1.5)


def test_iaif_rejects_short_and_silent_frames():
    with pytest.raises(FrameTooShortError):
        iaif(np.ones(100), SR)
    with pytest.raises((SingularAutocorrelationError, DegenerateFlowError)):
        iaif(np.zeros(2000), SR)


def test_iaif_default_order():
    assert IaifConfig().order_for(16000) == 18
    assert IaifConfig(lpc_order=10).order_for(16000) == 10


# Spectrograms and stacks

def test_spectrogram_sine_bin():
    t = np.arange(SR) / SR
    spec = spectrogram(AudioBuffer(samples=0.5 * np.sin(2 * np.pi * 1000 * t), sample_rate=SR), 512, 256, 512)
    assert spec.shape[1] == 257
    assert np.all(np.argmax(spec, axis=1) == 32)
    assert np.all(spec >= 0.0)


def test_spectrogram_zero_and_bad_window():
    assert np.all(spectrogram(AudioBuffer(samples=np.zeros(2000), sample_rate=SR), 256, 128, 512) == 0.0)
    with pytest.raises(BadWindowError):
        spectrogram(AudioBuffer(samples=np.zeros(2000), sample_rate=SR), 128, 256, 512)


def test_spectrogram_parseval():
    x = np.random.default_rng(7).normal(size=4096) * 0.1
    window_len, hop, nfft = 256, 128, 512
    spec = spectrogram(AudioBuffer(samples=x, sample_rate=SR), window_len, hop, nfft)
    w = np.hanning(window_len + 1)[:-1]
    frames = np.array([x[i * hop:i * hop + window_len] for i in range(spec.shape[0])])
    time_energy = np.sum((frames * w) ** 2)
    power = spec ** 2
    freq_energy = (power[:, 0].sum() + 2 * power[:, 1:-1].sum() + power[:, -1].sum()) / nfft
    assert freq_energy == pytest.approx(time_energy, rel=1e-6)


def test_default_stack_alignment():
    rng = np.random.default_rng(8)
    stack = build_stack(AudioBuffer(samples=rng.uniform(-0.5, 0.5, SR), sample_rate=SR), DEFAULT_RESOLUTIONS)
    assert len(stack.layers) == 3
    assert len({layer.shape[0] for layer in stack.layers}) == 1
    assert stack.n_bins == [257, 257, 257]
    assert all(np.all(np.isfinite(layer)) and np.all(layer >= 0.0) for layer in stack.layers)


def test_single_resolution_stack_matches_spectrogram():
    buf = AudioBuffer(samples=np.random.default_rng(9).uniform(-0.5, 0.5, 4000), sample_rate=SR)
    stack = build_stack(buf, [(256, 80, 512)])
    np.testing.assert_array_equal(stack.layers[0], spectrogram(buf, 256, 80, 512))


def test_correlogram_stack():
    buf = fm_tone(200.0, 0, 0.0, dur=0.5)
    stack = build_stack(buf, DEFAULT_RESOLUTIONS, kind="correlogram")
    assert stack.kind == "correlogram"
    assert all(np.all(layer >= 0.0) and np.all(layer <= 1.0 + 1e-9) for layer in stack.layers)
    c = correlogram(buf, 800, 160, 200)
    # Period of 80 samples shows as a peak at lag 80
    assert np.all(c[:, 80] > 0.8)


# Pitch

def test_estimate_f0_sine_and_noise():
    t = np.arange(2048) / SR
    assert estimate_f0(np.sin(2 * np.pi * 220 * t), SR) == pytest.approx(220.0, abs=1.0)
    assert estimate_f0(np.random.default_rng(10).normal(size=2048), SR) is None


def test_estimate_f0_pulse_train_has_no_octave_error():
    x = np.zeros(4096)
    x[np.round(np.arange(0, 4096, SR / 110.0)).astype(int)[:-1]] = 1.0
    assert estimate_f0(x, SR) == pytest.approx(110.0, abs=1.0)


def test_estimate_f0_strong_second_harmonic_is_not_an_octave_error():
    # half-period NCCF is about 0.92 here
    t = np.arange(2048) / SR
    x = 0.2 * np.sin(2 * np.pi * 110 * t) + np.sin(2 * np.pi * 220 * t + 0.4)
    assert estimate_f0(x, SR) == pytest.approx(110.0, abs=1.0)


@settings(max_examples=20)
@given(st.floats(min_value=0.01, max_value=100.0))
def test_estimate_f0_scale_invariant(c):
    t = np.arange(1024) / SR
    x = np.sin(2 * np.pi * 180 * t) + 0.3 * np.sin(2 * np.pi * 360 * t)
    assert estimate_f0(c * x, SR) == pytest.approx(estimate_f0(x, SR), rel=1e-9)


def test_estimate_f0_rejects_bad_band():
    with pytest.raises(ValueError):
        estimate_f0(np.zeros(100), SR, fmin=400, fmax=60)


def test_f0_contour_shape():
    times, f0 = f0_contour(fm_tone(150.0, 0, 0.0, dur=1.0))
    assert times.shape == f0.shape
    assert np.nanmax(np.abs(f0 - 150.0)) < 1.5


# Tremor

def test_tremor_index_bands():
    assert tremor_index(fm_tone(150.0, 3.0, 5.0)) >= 0.8
    assert tremor_index(fm_tone(150.0, 8.0, 5.0)) <= 0.3
    assert medium_tremor_index(fm_tone(150.0, 5.0, 5.0)) >= 0.8


def test_tremor_index_constant_f0_is_zero():
    assert tremor_index(fm_tone(150.0, 0, 0.0)) == 0.0


def sinusoidal_contour(rate: float, amplitude: float, n: int = 200, hop_s: float = 0.01) -> np.ndarray:
    return 120.0 + amplitude * np.sin(2 * np.pi * rate * np.arange(n) * hop_s)


def test_contour_band_ratio_steady_gate_boundary():
    # RMS of a sinusoid is amplitude / sqrt(2); the gate sits at 0.5 Hz RMS
    assert contour_band_ratio(sinusoidal_contour(3.0, 0.6), 0.01, 0.5, 4.0) == 0.0
    assert contour_band_ratio(sinusoidal_contour(3.0, 0.8), 0.01, 0.5, 4.0) == pytest.approx(1.0, abs=1e-9)
    ungated = TremorConfig(min_modulation_hz=0.0)
    assert contour_band_ratio(sinusoidal_contour(3.0, 0.1), 0.01, 0.5, 4.0, ungated) == pytest.approx(1.0, abs=1e-9)
    assert contour_band_ratio(np.full(200, 120.0), 0.01, 0.5, 4.0, ungated) == 0.0


def test_contour_band_ratio_separates_bands():
    assert contour_band_ratio(sinusoidal_contour(8.0, 5.0), 0.01, 0.5, 4.0) == pytest.approx(0.0, abs=1e-9)
    assert contour_band_ratio(sinusoidal_contour(5.0, 5.0), 0.01, 4.0, 7.0) == pytest.approx(1.0, abs=1e-9)
    mixed = sinusoidal_contour(2.0, 3.0) + sinusoidal_contour(8.0, 3.0) - 120.0
    assert contour_band_ratio(mixed, 0.01, 0.5, 4.0) == pytest.approx(0.5, abs=1e-6)


def test_tremor_index_needs_voicing():
    noise = AudioBuffer(samples=np.random.default_rng(11).uniform(-0.5, 0.5, SR), sample_rate=SR)
    with pytest.raises(InsufficientVoicingError):
        tremor_index(noise)


# Cepstra

def test_cepstra_of_zero_frame():
    c = cepstral_features(np.zeros(400), SR)
    assert c.shape == (13,)
    assert c[0] != 0.0
    np.testing.assert_allclose(c[1:], 0.0, atol=1e-9)


def test_cepstra_scaling_shifts_only_c0():
    x = np.random.default_rng(12).normal(size=400)
    a, b = cepstral_features(x, SR), cepstral_features(2.0 * x, SR)
    np.testing.assert_allclose(a[1:], b[1:], atol=1e-9)
    assert b[0] - a[0] == pytest.approx(np.sqrt(26) * np.log(4.0))


def test_cepstra_distinguish_tones():
    t = np.arange(400) / SR
    a = cepstral_features(np.sin(2 * np.pi * 1000 * t), SR)
    b = cepstral_features(np.sin(2 * np.pi * 3000 * t), SR)
    assert np.linalg.norm(a - b) > 0.0
    with pytest.raises(ValueError):
        cepstral_features(t, SR, n_mel=10, n_cep=13)
