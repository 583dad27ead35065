import time

from core.errors import GlottkitError
from core.proxy_classifier import score_recording
from graph.state import ExtractionState
from utils.run_log import log_message


def proxy_score_agent(state: ExtractionState) -> ExtractionState:
    """Summarize auxiliary classifier scores over the recording's frames"""
    if state.error or state.proxy_model is None:
        return state
    log_message("🏷️ PROXY SCORE: scoring frames")
    start = time.time()

    try:
        summary = score_recording(state.proxy_model, state.audio, state.config.proxy)
    except GlottkitError as e:
        return state.failed("ProxyScore", e)

    features = {"proxy_mean": summary.mean, "proxy_std": summary.std, "proxy_frac": summary.fraction_positive}
    return state.with_features("ProxyScore", (time.time() - start) * 1000, features=features)
