import time

import numpy as np

from core.abcde import latent_features
from core.errors import GlottkitError
from graph.state import ExtractionState, latent_feature_names
from utils.run_log import log_message


def latent_agent(state: ExtractionState) -> ExtractionState:
    """Mean latent code of the recording under the trained encoder"""
    if state.error or state.latent_model is None:
        return state
    log_message("🧠 LATENT: encoding representation windows")
    start = time.time()

    try:
        codes = latent_features(state.latent_model, state.audio)
    except GlottkitError as e:
        return state.failed("Latent", e)

    means = np.mean(codes, axis=0)
    features = dict(zip(latent_feature_names(state.latent_model.latent_dim), (float(v) for v in means)))
    log_message(f"✅ {codes.shape[0]} windows encoded")
    return state.with_features("Latent", (time.time() - start) * 1000, features=features)
