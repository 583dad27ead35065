import time

from core.errors import GlottkitError
from core.fold_models import simulate_one_mass
from core.phase_features import extract_phase_features
from graph.state import ExtractionState
from utils.run_log import log_message


def phase_feature_agent(state: ExtractionState) -> ExtractionState:
    """Simulate the fitted model and measure its phase portraits"""
    if state.error:
        return state
    log_message("🌀 PHASE FEATURES: simulating fitted model")
    start = time.time()
    fit_cfg = state.config.fit

    try:
        traj = simulate_one_mass(state.fit.params, fit_cfg.portrait_dt, fit_cfg.portrait_steps)
        features = extract_phase_features(traj, fit_cfg.phase_tail)
    except GlottkitError as e:
        return state.failed("PhaseFeatures", e)

    missing = [k for k, v in features.items() if v is None]
    if missing:
        log_message(f"⚠️ No limit cycle for {', '.join(missing)}", "warning")
    return state.with_features("PhaseFeatures", (time.time() - start) * 1000, features=features, trajectory=traj)
