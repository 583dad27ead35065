import time

from core.adles import estimate_params
from core.errors import GlottkitError
from graph.state import ExtractionState
from utils.cache import cache
from utils.run_log import log_message


def model_fit_agent(state: ExtractionState) -> ExtractionState:
    """Fit (α, β, Δ) of the 1-mass model to the target flow"""
    if state.error:
        return state
    log_message(f"🧮 MODEL FIT: estimating fold parameters for {state.source}")
    start = time.time()
    cfg = state.config

    digest = cache.audio_digest(state.flow.flow, int(round(state.flow.sample_rate)))
    fit = cache.get_fit_result(digest, state.config_hash)
    if fit is not None:
        log_message(f"✅ Cache hit for fit of {state.source}")
    else:
        try:
            fit = estimate_params(
                state.flow,
                init=cfg.fit.init_params(),
                opt=cfg.fit.opt_config(),
                sim=cfg.fit.sim_config(f0=state.target_f0, f0_range=(cfg.dsp.fmin, cfg.dsp.fmax)),
            )
        except GlottkitError as e:
            return state.failed("ModelFit", e)
        cache.set_fit_result(digest, state.config_hash, fit)

    p = fit.params
    status = "converged" if fit.converged else "not converged"
    log_message(f"📈 α={p.alpha:.4f} β={p.beta:.4f} Δ={p.delta:.4f} loss={fit.final_loss:.3e} "
                f"({fit.iterations} iterations, {status})")
    features = {"alpha": p.alpha, "beta": p.beta, "delta": p.delta, "fit_loss": fit.final_loss}
    return state.with_features("ModelFit", (time.time() - start) * 1000, features=features, fit=fit)
