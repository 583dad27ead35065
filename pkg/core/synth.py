"""Synthetic sustained vowels with a known fold-model source.

The 1-mass model is run in its own time units and read out along a warped
clock so that one model period lasts one target pitch period. The resulting
flow goes through an all-pole vocal tract and a first-difference lip
radiation before peak normalization.
"""

import math
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from core.audio_io import CANONICAL_RATE, AudioBuffer
from core.dsp import GlottalFlowSignal
from core.errors import DegenerateFlowError, UnstableTractError
from core.fold_models import OneMassParams, integrate_one_mass
from core.phase_features import upward_crossings

SYNTH_DT = 0.05
SYNTH_WARMUP = 40.0
PERIOD_CYCLES = 4
PEAK_LEVEL = 0.9


class Formant(NamedTuple):
    frequency: float
    bandwidth: float


AA_FORMANTS = (Formant(730.0, 60.0), Formant(1090.0, 110.0), Formant(2440.0, 140.0))


class Modulation(NamedTuple):
    rate_hz: float
    depth_hz: float


def tract_polynomial(formants: Sequence[Formant], sample_rate: int) -> np.ndarray:
    """Denominator of the cascade of second-order resonators"""
    a = np.array([1.0])
    for f in formants:
        if f.frequency <= 0.0 or f.frequency >= sample_rate / 2.0:
            raise UnstableTractError(f"Formant {f.frequency} Hz is outside (0, {sample_rate / 2.0}) Hz")
        r = math.exp(-math.pi * f.bandwidth / sample_rate)
        if r >= 1.0:
            raise UnstableTractError(f"Pole radius {r} for formant {f.frequency} Hz is not inside the unit circle")
        theta = 2.0 * math.pi * f.frequency / sample_rate
        a = np.convolve(a, [1.0, -2.0 * r * math.cos(theta), r * r])
    return a


def _phase(n_samples: int, sample_rate: int, f0: float, modulation: Optional[Modulation]) -> np.ndarray:
    """Elapsed pitch cycles at each sample"""
    t = np.arange(n_samples) / sample_rate
    phase = f0 * t
    if modulation is not None and modulation.depth_hz != 0.0:
        phase = phase + modulation.depth_hz * (1.0 - np.cos(2.0 * math.pi * modulation.rate_hz * t)) / (
            2.0 * math.pi * modulation.rate_hz)
    return phase


def synth_flow(p: OneMassParams, dur: float, f0_target: float, sample_rate: int = CANONICAL_RATE,
               modulation: Optional[Modulation] = None) -> Tuple[GlottalFlowSignal, float]:
    """True source flow at audio rate plus the measured model period"""
    if dur <= 0.0:
        raise ValueError(f"dur must be positive, got {dur}")
    if f0_target <= 0.0:
        raise ValueError(f"f0_target must be positive, got {f0_target}")
    if modulation is not None and modulation.depth_hz >= f0_target:
        raise ValueError("modulation depth must stay below f0_target")

    n_samples = int(round(dur * sample_rate))
    phase = _phase(n_samples, sample_rate, f0_target, modulation)

    # First pass settles the orbit and measures its period.
    pilot_cycles = 2 * PERIOD_CYCLES + 2
    pilot = integrate_one_mass(p, SYNTH_DT, int(math.ceil((SYNTH_WARMUP + pilot_cycles * 4.0 * math.pi) / SYNTH_DT)))
    sigma = pilot.states[:, 0] + pilot.states[:, 2]
    i_warm = int(math.ceil(SYNTH_WARMUP / SYNTH_DT))
    _, pos = upward_crossings(sigma[i_warm:])
    if pos.shape[0] < PERIOD_CYCLES + 1:
        raise DegenerateFlowError("1-mass model does not oscillate for these parameters")
    start = (i_warm + pos[0]) * SYNTH_DT
    period = (pos[PERIOD_CYCLES] - pos[0]) * SYNTH_DT / PERIOD_CYCLES

    tau = start + period * phase
    n_steps = int(math.ceil(float(tau[-1]) / SYNTH_DT)) + 2
    traj = integrate_one_mass(p, SYNTH_DT, n_steps)
    sigma = traj.states[:, 0] + traj.states[:, 2]
    u = np.maximum(0.0, p.rest_gap + np.interp(tau, traj.times, sigma))
    return GlottalFlowSignal.from_flow(u, sample_rate, normalize=True), period


def synth_vowel(p: OneMassParams, dur: float = 1.0, f0_target: float = 120.0,
                tract: Sequence[Formant] = AA_FORMANTS, snr_db: Optional[float] = None,
                modulation: Optional[Modulation] = None, seed: int = 42,
                sample_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """Sustained vowel from the 1-mass source; deterministic for a fixed seed"""
    a = tract_polynomial(tract, sample_rate)
    flow, _ = synth_flow(p, dur, f0_target, sample_rate, modulation)

    filtered = lfilter([1.0], a, flow.flow)
    speech = np.diff(filtered, prepend=filtered[:1])

    if snr_db is not None:
        rng = np.random.default_rng(seed)
        signal_rms = float(np.sqrt(np.mean(speech * speech)))
        noise_rms = signal_rms / (10.0 ** (snr_db / 20.0))
        speech = speech + rng.normal(0.0, noise_rms, speech.shape[0])

    peak = float(np.max(np.abs(speech)))
    if peak <= 0.0:
        raise DegenerateFlowError("Synthesized signal is silent")
    return AudioBuffer(samples=PEAK_LEVEL * speech / peak, sample_rate=sample_rate)
