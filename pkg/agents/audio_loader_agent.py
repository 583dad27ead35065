import time

import numpy as np

from core.audio_io import load_canonical
from core.dsp import f0_contour, medium_tremor_index, tremor_index
from core.errors import GlottkitError, InsufficientVoicingError
from graph.state import ExtractionState
from utils.run_log import log_message


def audio_loader_agent(state: ExtractionState) -> ExtractionState:
    """Load the recording at the canonical rate and measure its f0 contour features"""
    if state.error:
        return state
    log_message(f"🎙️ AUDIO LOADER: {state.source}")
    start = time.time()
    cfg = state.config

    try:
        buf = load_canonical(state.source, cfg.audio.sample_rate)
    except GlottkitError as e:
        return state.failed("AudioLoader", e)

    _, f0 = f0_contour(buf, cfg.dsp)
    voiced = f0[np.isfinite(f0)]
    features = {
        "f0_mean": float(np.mean(voiced)) if voiced.size else None,
        "f0_std": float(np.std(voiced)) if voiced.size else None,
    }
    try:
        features["tremor_index"] = tremor_index(buf, cfg.dsp)
        features["medium_tremor_index"] = medium_tremor_index(buf, cfg.dsp)
    except InsufficientVoicingError as e:
        log_message(f"⚠️ No tremor indices for {state.source}: {e}", "warning")
        features["tremor_index"] = None
        features["medium_tremor_index"] = None

    log_message(f"📊 {buf.duration:.2f}s at {buf.sample_rate} Hz, {voiced.size}/{f0.size} voiced frames")
    return state.with_features("AudioLoader", (time.time() - start) * 1000, features=features, audio=buf)
