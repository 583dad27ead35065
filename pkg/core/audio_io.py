"""Audio loading, validation, resampling, pre-emphasis and framing.

Only mono RIFF/WAVE files holding 16-bit integer PCM or 32-bit float PCM are
accepted. Anything else is rejected instead of converted so the decoding path
stays auditable.
"""

import os
from dataclasses import dataclass
from math import gcd

import numpy as np
import soundfile as sf
from scipy.signal import firwin, lfilter, resample_poly

from core.errors import (
    ClippedSamplesError,
    CorruptHeaderError,
    IoError,
    MissingFileError,
    UnsupportedEncodingError,
)

CANONICAL_RATE = 16000
PCM16_SCALE = 32768.0

# Resampler design
RESAMPLE_TAPS_PER_PHASE = 64
RESAMPLE_KAISER_BETA = 8.0
RESAMPLE_CUTOFF_FRACTION = 0.45

_SUBTYPES = {"pcm16": "PCM_16", "float32": "FLOAT"}


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AudioBuffer:
    """Mono signal S with its sample rate in Hz."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = _frozen(self.samples).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrameSet:
    frames: np.ndarray
    hop: int
    frame_len: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def read_wav(path: str) -> AudioBuffer:
    """Read a mono PCM16 or float32 WAV file into an AudioBuffer"""
    if not os.path.isfile(path):
        raise MissingFileError(f"No such file: {path}")

    try:
        info = sf.info(path)
    except Exception as e:
        raise CorruptHeaderError(f"Cannot parse WAV header of {path}: {e}") from e

    if info.format != "WAV":
        raise UnsupportedEncodingError(f"{path}: container {info.format} is not RIFF/WAVE")
    if info.channels != 1:
        raise UnsupportedEncodingError(f"{path}: {info.channels} channels, only mono is accepted")

    if info.subtype == "PCM_16":
        dtype = "int16"
    elif info.subtype == "FLOAT":
        dtype = "float32"
    else:
        raise UnsupportedEncodingError(f"{path}: encoding {info.subtype} is not PCM_16 or FLOAT")

    try:
        data, rate = sf.read(path, dtype=dtype, always_2d=False)
    except Exception as e:
        raise CorruptHeaderError(f"Cannot decode {path}: {e}") from e

    if dtype == "int16":
        samples = data.astype(np.float64) / PCM16_SCALE
    else:
        samples = data.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise CorruptHeaderError(f"{path}: non-finite float samples")
        peak = np.max(np.abs(samples)) if samples.size else 0.0
        if peak > 1.0:
            samples = samples / peak

    return AudioBuffer(samples=samples, sample_rate=int(rate))


def write_wav(buf: AudioBuffer, path: str, encoding: str = "pcm16") -> str:
    """Write an AudioBuffer as a mono WAV file that read_wav accepts"""
    if encoding not in _SUBTYPES:
        raise UnsupportedEncodingError(f"Unknown encoding '{encoding}', expected pcm16 or float32")

    samples = buf.samples
    if samples.size and np.max(np.abs(samples)) > 1.0:
        raise ClippedSamplesError(f"Samples exceed [-1, 1] (peak {np.max(np.abs(samples)):.4f})")

    if encoding == "pcm16":
        data = np.clip(np.round(samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    else:
        data = samples.astype(np.float32)

    try:
        sf.write(path, data, buf.sample_rate, format="WAV", subtype=_SUBTYPES[encoding])
    except Exception as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc"""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf

    g = gcd(buf.sample_rate, target_rate)
    up = target_rate // g
    down = buf.sample_rate // g

    # Filter runs at the upsampled rate; cutoff sits below the lower Nyquist.
    numtaps = RESAMPLE_TAPS_PER_PHASE * max(up, down) + 1
    cutoff = RESAMPLE_CUTOFF_FRACTION * min(buf.sample_rate, target_rate)
    taps = firwin(numtaps, cutoff, window=("kaiser", RESAMPLE_KAISER_BETA), fs=buf.sample_rate * up)

    out = resample_poly(buf.samples, up, down, window=taps)
    return AudioBuffer(samples=out, sample_rate=target_rate)


def preemphasis(buf: AudioBuffer, coeff: float = 0.97) -> AudioBuffer:
    """y[n] = x[n] - coeff * x[n-1], with y[0] = x[0]"""
    if len(buf) == 0 or coeff == 0.0:
        return buf
    return AudioBuffer(samples=lfilter([1.0, -coeff], [1.0], buf.samples), sample_rate=buf.sample_rate)


def frame_signal(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Rows are exact sub-slices x[i*hop : i*hop + frame_len]; the tail is never padded"""
    if frame_len < 1 or hop < 1:
        raise ValueError(f"frame_len and hop must be >= 1 (got {frame_len}, {hop})")
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[0] < frame_len:
        return np.zeros((0, frame_len))
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return np.ascontiguousarray(windows)


def frame(buf: AudioBuffer, frame_len: int, hop: int) -> FrameSet:
    return FrameSet(
        frames=frame_signal(buf.samples, frame_len, hop),
        hop=int(hop),
        frame_len=int(frame_len),
        sample_rate=buf.sample_rate,
    )


def load_canonical(path: str, target_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """read_wav followed by resampling to the pipeline's canonical rate"""
    return resample(read_wav(path), target_rate)
