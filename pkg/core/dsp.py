"""Signal representations and glottal flow recovery.

Autocorrelation LPC, inverse filtering (two-pass IAIF), spectrogram stacks,
normalized-autocorrelation f0, log-mel cepstra and the f0-contour tremor
indices. All functions are pure over immutable inputs.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import librosa
import numpy as np
from pydantic import BaseModel, Field
from scipy.fft import dct
from scipy.signal import correlate, get_window, lfilter

from core.audio_io import AudioBuffer, frame_signal
from core.errors import (
    BadWindowError,
    DegenerateFlowError,
    FrameTooShortError,
    InsufficientVoicingError,
    LagTooLargeError,
    SingularAutocorrelationError,
)

LOG_FLOOR = 1e-10
UNVOICED = None
LAG_WEIGHT = 0.05


# ---------------------------------------------------------------------------
# Configuration models
# ---------------------------------------------------------------------------

class IaifConfig(BaseModel):
    lpc_order: Optional[int] = Field(default=None, ge=1, le=64, description="Vocal tract LPC order; None means 2 + sample_rate/1000")
    tilt_order: int = Field(default=1, ge=1, le=4, description="Order of the coarse glottal tilt model removed before the tract fit")
    rho: float = Field(default=0.99, ge=0.0, lt=1.0, description="Leaky integrator coefficient cancelling lip radiation")
    f0_min: float = Field(default=60.0, gt=0.0, description="Lowest f0 the frame must cover three periods of")
    normalize: bool = Field(default=True, description="Scale output flow to max|flow| = 1")

    def order_for(self, sample_rate: int) -> int:
        if self.lpc_order is not None:
            return self.lpc_order
        return 2 + int(round(sample_rate / 1000.0))


class F0Config(BaseModel):
    fmin: float = Field(default=60.0, gt=0.0, description="Lowest f0 searched (Hz)")
    fmax: float = Field(default=400.0, gt=0.0, description="Highest f0 searched (Hz)")
    voicing_threshold: float = Field(default=0.3, ge=0.0, le=1.0, description="Minimum normalized autocorrelation peak for a voiced frame")
    frame_ms: float = Field(default=25.0, gt=0.0, description="Contour analysis frame length")
    hop_ms: float = Field(default=10.0, gt=0.0, description="Contour analysis hop")


class TremorConfig(F0Config):
    low_edge_hz: float = Field(default=0.5, ge=0.0, description="Lower edge of all modulation bands (excludes DC leakage)")
    tremor_edge_hz: float = Field(default=4.0, gt=0.0, description="Upper edge of the low-frequency tremor band")
    high_edge_hz: float = Field(default=12.0, gt=0.0, description="Upper edge of the reference modulation band")
    medium_band_hz: Tuple[float, float] = Field(default=(4.0, 7.0), description="Medium tremor band")
    min_voiced_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    min_modulation_hz: float = Field(default=0.5, ge=0.0, description="RMS f0 modulation in the reference band below which the index is 0")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LpcModel:
    """All-pole model with predictor convention x̂[n] = Σ a_k x[n−k]."""
    coeffs: np.ndarray
    gain: float
    reflection: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def order(self) -> int:
        return int(self.coeffs.shape[0])

    def polynomial(self) -> np.ndarray:
        """Inverse filter A(z) = 1 − Σ a_k z^−k as lfilter coefficients"""
        return np.concatenate(([1.0], -np.asarray(self.coeffs, dtype=np.float64)))


@dataclass(frozen=True)
class GlottalFlowSignal:
    flow: np.ndarray
    flow_deriv: np.ndarray
    sample_rate: float
    normalized: bool

    def __len__(self) -> int:
        return self.flow.shape[0]

    @classmethod
    def from_flow(cls, flow: Sequence[float], sample_rate: int, normalize: bool = True) -> "GlottalFlowSignal":
        u = np.asarray(flow, dtype=np.float64).copy()
        if normalize:
            peak = np.max(np.abs(u)) if u.size else 0.0
            if not np.isfinite(peak) or peak <= 0.0:
                raise DegenerateFlowError("Flow is identically zero and cannot be normalized")
            u = u / peak
        deriv = np.diff(u, prepend=u[:1]) * sample_rate if u.size else u.copy()
        return cls(flow=u, flow_deriv=deriv, sample_rate=sample_rate, normalized=normalize)


class Resolution(NamedTuple):
    window_len: int
    hop: int
    nfft: int


DEFAULT_RESOLUTIONS = (Resolution(128, 80, 512), Resolution(256, 80, 512), Resolution(512, 80, 512))


@dataclass(frozen=True)
class RepresentationStack:
    layers: List[np.ndarray]
    descriptors: List[Resolution]
    kind: str = "spectrogram"

    @property
    def n_frames(self) -> int:
        return self.layers[0].shape[0] if self.layers else 0

    @property
    def n_bins(self) -> List[int]:
        return [layer.shape[1] for layer in self.layers]


# ---------------------------------------------------------------------------
# LPC and inverse filtering
# ---------------------------------------------------------------------------

def autocorrelation(frame: Sequence[float], max_lag: int) -> np.ndarray:
    """r[k] = Σ_n x[n] x[n+k] for k = 0..max_lag"""
    x = np.asarray(frame, dtype=np.float64)
    if max_lag < 0 or max_lag >= x.shape[0]:
        raise LagTooLargeError(f"max_lag {max_lag} must be below frame length {x.shape[0]}")
    n = x.shape[0]
    full = correlate(x, x, mode="full", method="auto")
    return full[n - 1:n + max_lag].copy()


def levinson_durbin(r: Sequence[float], order: int) -> LpcModel:
    """Levinson-Durbin recursion on an autocorrelation sequence"""
    r = np.asarray(r, dtype=np.float64)
    if order < 0 or order >= r.shape[0]:
        raise LagTooLargeError(f"order {order} needs at least {order + 1} autocorrelation lags")
    if not r[0] > 0.0:
        raise SingularAutocorrelationError("r[0] must be positive")

    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    for i in range(order):
        if err <= r[0] * 1e-14:
            raise SingularAutocorrelationError(f"Prediction error vanished at order {i} of {order}")
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        ki = acc / err
        prev = a[:i].copy()
        a[:i] = prev - ki * prev[::-1]
        a[i] = ki
        k[i] = ki
        err *= (1.0 - ki * ki)

    if err < 0.0:
        raise SingularAutocorrelationError("Negative prediction error; autocorrelation is not positive definite")
    return LpcModel(coeffs=a, gain=float(np.sqrt(err)), reflection=k)


def inverse_filter(frame: Sequence[float], model: LpcModel) -> np.ndarray:
    """e[n] = x[n] − Σ a_k x[n−k] with zero initial history"""
    x = np.asarray(frame, dtype=np.float64)
    if model.order == 0:
        return x.copy()
    return lfilter(model.polynomial(), [1.0], x)


def lpc_fit(frame: Sequence[float], order: int) -> LpcModel:
    """Hann-windowed autocorrelation LPC of one frame"""
    x = np.asarray(frame, dtype=np.float64)
    w = get_window("hann", x.shape[0])
    return levinson_durbin(autocorrelation(x * w, order), order)


def iaif(frame: Sequence[float], sample_rate: int, cfg: Optional[IaifConfig] = None) -> GlottalFlowSignal:
    """Two-pass iterative adaptive inverse filtering.

    1. low-order LPC captures the coarse glottal tilt, which is removed;
    2. the vocal tract LPC is fitted on the tilt-free signal and used to
       inverse-filter the original frame;
    3. leaky integration cancels lip radiation.
    """
    cfg = cfg or IaifConfig()
    x = np.asarray(frame, dtype=np.float64)
    min_len = int(np.ceil(3.0 * sample_rate / cfg.f0_min))
    if x.shape[0] < min_len:
        raise FrameTooShortError(f"IAIF needs >= {min_len} samples (3 periods at {cfg.f0_min} Hz), got {x.shape[0]}")

    tilt = lpc_fit(x, cfg.tilt_order)
    untilted = inverse_filter(x, tilt)

    tract = lpc_fit(untilted, cfg.order_for(sample_rate))
    residual = inverse_filter(x, tract)

    flow = lfilter([1.0], [1.0, -cfg.rho], residual)
    return GlottalFlowSignal.from_flow(flow, sample_rate, normalize=cfg.normalize)


# ---------------------------------------------------------------------------
# Time-frequency representations
# ---------------------------------------------------------------------------

def _check_resolution(window_len: int, hop: int, nfft: int):
    if window_len < 1 or hop < 1:
        raise BadWindowError(f"window_len and hop must be >= 1 (got {window_len}, {hop})")
    if hop > window_len:
        raise BadWindowError(f"hop {hop} exceeds window length {window_len}")
    if nfft < window_len:
        raise BadWindowError(f"nfft {nfft} is shorter than window length {window_len}")


def spectrogram_samples(samples: np.ndarray, window_len: int, hop: int, nfft: int) -> np.ndarray:
    _check_resolution(window_len, hop, nfft)
    frames = frame_signal(samples, window_len, hop)
    window = get_window("hann", window_len)
    if frames.shape[0] == 0:
        return np.zeros((0, nfft // 2 + 1))
    return np.abs(np.fft.rfft(frames * window, n=nfft, axis=1))


def spectrogram(buf: AudioBuffer, window_len: int, hop: int, nfft: int) -> np.ndarray:
    """Hann-windowed magnitude spectrogram, n_frames × (nfft/2 + 1), no padding"""
    return spectrogram_samples(buf.samples, window_len, hop, nfft)


def correlogram_samples(samples: np.ndarray, window_len: int, hop: int, n_lags: int) -> np.ndarray:
    _check_resolution(window_len, hop, max(window_len, n_lags))
    frames = frame_signal(samples, window_len, hop)
    out = np.zeros((frames.shape[0], n_lags))
    if frames.shape[0] == 0:
        return out
    window = get_window("hann", window_len)
    spec = np.fft.rfft(frames * window, n=2 * window_len, axis=1)
    acf = np.fft.irfft(np.abs(spec) ** 2, axis=1)[:, :window_len]
    r0 = acf[:, :1]
    norm = np.where(r0 > 0.0, acf / np.where(r0 > 0.0, r0, 1.0), 0.0)
    lags = min(n_lags, window_len)
    out[:, :lags] = np.clip(norm[:, :lags], 0.0, None)
    return out


def correlogram(buf: AudioBuffer, window_len: int, hop: int, n_lags: int) -> np.ndarray:
    """Frame-wise normalized autocorrelation, negative lobes clipped to 0"""
    return correlogram_samples(buf.samples, window_len, hop, n_lags)


def build_stack(buf: AudioBuffer, resolutions: Sequence[Sequence[int]] = DEFAULT_RESOLUTIONS,
                kind: str = "spectrogram") -> RepresentationStack:
    """Stack representations at several resolutions on a common frame grid.

    Layers are centre-aligned on the longest window and truncated to the
    shortest frame count.
    """
    if not resolutions:
        raise BadWindowError("build_stack needs at least one resolution")
    if kind not in ("spectrogram", "correlogram"):
        raise ValueError(f"Unknown representation kind '{kind}'")

    res = [Resolution(*map(int, r)) for r in resolutions]
    longest = max(r.window_len for r in res)
    layers = []
    for r in res:
        offset = (longest - r.window_len) // 2
        segment = buf.samples[offset:]
        if kind == "spectrogram":
            layers.append(spectrogram_samples(segment, r.window_len, r.hop, r.nfft))
        else:
            layers.append(correlogram_samples(segment, r.window_len, r.hop, r.nfft // 2 + 1))

    n = min(layer.shape[0] for layer in layers)
    return RepresentationStack(layers=[layer[:n] for layer in layers], descriptors=res, kind=kind)


# ---------------------------------------------------------------------------
# Pitch
# ---------------------------------------------------------------------------

def normalized_autocorrelation(x: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """NCCF over lags min_lag..max_lag (inclusive), zero where energy vanishes"""
    n = x.shape[0]
    full = correlate(x, x, mode="full", method="auto")[n - 1:]
    energy = np.concatenate(([0.0], np.cumsum(x * x)))
    lags = np.arange(min_lag, max_lag + 1)
    head = energy[n - lags]
    tail = energy[n] - energy[lags]
    denom = np.sqrt(head * tail)
    return np.where(denom > 0.0, full[lags] / np.where(denom > 0.0, denom, 1.0), 0.0)


def estimate_f0(frame: Sequence[float], sample_rate: int, fmin: float = 60.0, fmax: float = 400.0,
                voicing_threshold: float = 0.3, lag_weight: float = LAG_WEIGHT) -> Optional[float]:
    """Normalized-autocorrelation f0 with parabolic peak interpolation.

    Returns None (UNVOICED) when the best peak falls below the threshold.
    Local peaks are ranked by NCCF · (1 − lag_weight · lag / max_lag), so the
    true period wins over its multiples and over a strong half-period peak.
    """
    if not (0 < fmin < fmax < sample_rate / 2.0):
        raise ValueError(f"Need 0 < fmin < fmax < sample_rate/2 (got {fmin}, {fmax}, {sample_rate})")
    x = np.asarray(frame, dtype=np.float64)
    x = x - np.mean(x) if x.size else x
    n = x.shape[0]
    min_lag = max(1, int(np.floor(sample_rate / fmax)))
    max_lag = min(int(np.ceil(sample_rate / fmin)), n - 2)
    if max_lag <= min_lag + 1:
        return UNVOICED

    nccf = normalized_autocorrelation(x, min_lag - 1, max_lag + 1)
    inner = nccf[1:-1]
    best = float(np.max(inner))
    if best < voicing_threshold:
        return UNVOICED

    lags = np.arange(min_lag, max_lag + 1)
    is_peak = (inner >= nccf[:-2]) & (inner >= nccf[2:]) & (inner >= voicing_threshold)
    if not np.any(is_peak):
        is_peak = inner == best
    weighted = np.where(is_peak, inner * (1.0 - lag_weight * lags / max_lag), -np.inf)
    idx = int(np.argmax(weighted))
    y0, y1, y2 = nccf[idx], nccf[idx + 1], nccf[idx + 2]
    curvature = y0 - 2.0 * y1 + y2
    delta = 0.5 * (y0 - y2) / curvature if curvature < 0.0 else 0.0
    lag = min_lag + idx + float(np.clip(delta, -0.5, 0.5))
    return sample_rate / lag


def f0_contour(buf: AudioBuffer, cfg: Optional[F0Config] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Frame centre times in seconds and frame-wise f0 (NaN where unvoiced)"""
    cfg = cfg or F0Config()
    frame_len = int(round(cfg.frame_ms * buf.sample_rate / 1000.0))
    hop = int(round(cfg.hop_ms * buf.sample_rate / 1000.0))
    frames = frame_signal(buf.samples, frame_len, hop)
    f0 = np.full(frames.shape[0], np.nan)
    for i, fr in enumerate(frames):
        est = estimate_f0(fr, buf.sample_rate, cfg.fmin, cfg.fmax, cfg.voicing_threshold)
        if est is not None:
            f0[i] = est
    times = (np.arange(frames.shape[0]) * hop + frame_len / 2.0) / buf.sample_rate
    return times, f0


def _voiced_contour(buf: AudioBuffer, cfg: TremorConfig) -> np.ndarray:
    _, f0 = f0_contour(buf, cfg)
    voiced = np.isfinite(f0)
    if f0.size == 0 or voiced.mean() < cfg.min_voiced_fraction:
        frac = float(voiced.mean()) if f0.size else 0.0
        raise InsufficientVoicingError(f"Voiced fraction {frac:.2f} below {cfg.min_voiced_fraction:.2f}")
    idx = np.arange(f0.size)
    return np.interp(idx, idx[voiced], f0[voiced])


def contour_band_ratio(contour: Sequence[float], hop_s: float, lo: float, hi: float,
                       cfg: Optional[TremorConfig] = None) -> float:
    """Energy of the de-meaned contour in [lo, hi) over the [low_edge, high_edge] reference band.

    A contour whose RMS modulation in the reference band is below
    cfg.min_modulation_hz is steady and scores 0.
    """
    cfg = cfg or TremorConfig()
    c = np.asarray(contour, dtype=np.float64)
    if c.size < 2:
        return 0.0
    c = c - c.mean()
    power = np.abs(np.fft.rfft(c)) ** 2
    freqs = np.fft.rfftfreq(c.size, d=hop_s)
    reference = power[(freqs >= cfg.low_edge_hz) & (freqs <= cfg.high_edge_hz)].sum()
    # one-sided Parseval
    rms = np.sqrt(2.0 * reference) / c.size
    if reference <= 0.0 or rms < cfg.min_modulation_hz:
        return 0.0
    band = power[(freqs >= lo) & (freqs < hi)].sum()
    return float(np.clip(band / reference, 0.0, 1.0))


def tremor_index(buf: AudioBuffer, cfg: Optional[TremorConfig] = None) -> float:
    """Share of f0-contour modulation energy in [0.5, 4) Hz relative to [0.5, 12] Hz"""
    cfg = cfg or TremorConfig()
    return contour_band_ratio(_voiced_contour(buf, cfg), cfg.hop_ms / 1000.0, cfg.low_edge_hz, cfg.tremor_edge_hz, cfg)


def medium_tremor_index(buf: AudioBuffer, cfg: Optional[TremorConfig] = None) -> float:
    """Same ratio for the 4-7 Hz medium tremor band"""
    cfg = cfg or TremorConfig()
    lo, hi = cfg.medium_band_hz
    return contour_band_ratio(_voiced_contour(buf, cfg), cfg.hop_ms / 1000.0, lo, hi, cfg)


# ---------------------------------------------------------------------------
# Cepstra
# ---------------------------------------------------------------------------

def _mel_basis(sample_rate: int, nfft: int, n_mel: int) -> np.ndarray:
    return librosa.filters.mel(sr=sample_rate, n_fft=nfft, n_mels=n_mel, fmin=0.0,
                               fmax=sample_rate / 2.0, htk=True, norm=None)


def cepstral_features(frame: Sequence[float], sample_rate: int, n_mel: int = 26, n_cep: int = 13,
                      log_floor: float = LOG_FLOOR) -> np.ndarray:
    """Log-mel filterbank energies of a Hann-windowed frame followed by DCT-II"""
    if n_cep > n_mel:
        raise ValueError(f"n_cep ({n_cep}) must not exceed n_mel ({n_mel})")
    x = np.asarray(frame, dtype=np.float64)
    nfft = max(256, 1 << int(np.ceil(np.log2(max(x.shape[0], 2)))))
    power = np.abs(np.fft.rfft(x * get_window("hann", x.shape[0]), n=nfft)) ** 2
    energies = _mel_basis(sample_rate, nfft, n_mel) @ power
    logs = np.log(np.maximum(energies, log_floor))
    return dct(logs, type=2, norm="ortho")[:n_cep]
