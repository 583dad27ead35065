import time

from core.adles import prepare_target
from core.audio_io import AudioBuffer
from core.dsp import estimate_f0, iaif
from core.errors import GlottkitError, UnvoicedTargetError
from graph.state import ExtractionState
from utils.run_log import log_message


def analysis_segment(buf: AudioBuffer, analysis_ms: float) -> AudioBuffer:
    """Centre segment of the recording; the whole recording when it is shorter"""
    n = int(round(analysis_ms * buf.sample_rate / 1000.0))
    if n >= len(buf):
        return buf
    start = (len(buf) - n) // 2
    return AudioBuffer(samples=buf.samples[start:start + n], sample_rate=buf.sample_rate)


def glottal_flow_agent(state: ExtractionState) -> ExtractionState:
    """Inverse-filter the centre segment into a normalized target flow"""
    if state.error:
        return state
    log_message(f"🌊 GLOTTAL FLOW: inverse filtering {state.source}")
    start = time.time()
    cfg = state.config

    segment = analysis_segment(state.audio, cfg.audio.analysis_ms)
    # Voicing is judged on the audio; the integrated flow of noise looks periodic
    f0 = estimate_f0(segment.samples, segment.sample_rate, cfg.dsp.fmin, cfg.dsp.fmax, cfg.dsp.voicing_threshold)
    if f0 is None:
        return state.failed("GlottalFlow", UnvoicedTargetError(
            f"No periodicity in {cfg.dsp.fmin:g}-{cfg.dsp.fmax:g} Hz in the analysis segment"))

    try:
        flow = prepare_target(iaif(segment.samples, segment.sample_rate, cfg.iaif))
    except GlottkitError as e:
        return state.failed("GlottalFlow", e)

    log_message(f"✅ Target flow: {len(flow)} samples, f0 {f0:.1f} Hz")
    return state.with_features("GlottalFlow", (time.time() - start) * 1000, flow=flow, target_f0=f0)
