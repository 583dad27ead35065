from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, InstanceOf

from core.abcde import AbcdeModel
from core.adles import FitResult
from core.audio_io import AudioBuffer
from core.dsp import GlottalFlowSignal
from core.fold_models import TrajectorySet
from core.proxy_classifier import LinearClassifier
from utils.config import PipelineConfig
from utils.run_log import log_message

# Always exported, in this order
BASE_FEATURES = [
    "alpha",
    "beta",
    "delta",
    "fit_loss",
    "limit_cycle_area_l",
    "limit_cycle_area_r",
    "asymmetry_index",
    "cycle_variability",
    "tremor_index",
    "medium_tremor_index",
    "f0_mean",
    "f0_std",
]
PROXY_FEATURES = ["proxy_mean", "proxy_std", "proxy_frac"]


def latent_feature_names(dim: int) -> List[str]:
    return [f"latent_mean_{i}" for i in range(dim)]


class FeatureRecord(BaseModel):
    source: str = Field(..., description="Input file the features were measured on")
    features: Dict[str, Optional[float]] = Field(default_factory=dict, description="Feature name → value, None when missing")
    error: Optional[str] = Field(default=None, description="'ErrorClass: message' when the recording failed")
    provenance: Dict[str, str] = Field(default_factory=dict, description="Config hash and module versions")

    @property
    def ok(self) -> bool:
        return self.error is None


class ExtractionState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    source: str = Field(..., description="Path of the recording being processed")
    config: PipelineConfig = Field(default_factory=PipelineConfig)
    config_hash: str = Field(default="", description="Hash of the configuration the run uses")

    audio: Optional[InstanceOf[AudioBuffer]] = Field(default=None, description="Recording at the canonical rate")
    flow: Optional[InstanceOf[GlottalFlowSignal]] = Field(default=None, description="Prepared inverse-filtered target flow")
    target_f0: Optional[float] = Field(default=None, description="f0 of the analysis segment (Hz)")
    fit: Optional[FitResult] = Field(default=None, description="Estimated 1-mass parameters")
    trajectory: Optional[InstanceOf[TrajectorySet]] = Field(default=None, description="Simulation at the fitted parameters")

    proxy_model: Optional[InstanceOf[LinearClassifier]] = Field(default=None, description="Auxiliary classifier for proxy scores")
    latent_model: Optional[InstanceOf[AbcdeModel]] = Field(default=None, description="Trained encoder for latent features")

    features: Dict[str, Optional[float]] = Field(default_factory=dict)
    error: Optional[str] = Field(default=None, description="Set by the first stage that fails; later stages skip")
    error_type: Optional[str] = Field(default=None, description="Class name of the error")
    stage_times_ms: Dict[str, float] = Field(default_factory=dict)

    def failed(self, stage: str, exc: Exception) -> "ExtractionState":
        message = f"{type(exc).__name__}: {exc}"
        log_message(f"❌ {stage} failed for {self.source}: {message}", "error")
        return self.model_copy(update={"error": message, "error_type": type(exc).__name__})

    def with_features(self, stage: str, elapsed_ms: float, **updates) -> "ExtractionState":
        features = dict(self.features)
        features.update(updates.pop("features", {}))
        times = dict(self.stage_times_ms)
        times[stage] = elapsed_ms
        return self.model_copy(update={"features": features, "stage_times_ms": times, **updates})

    def feature_names(self) -> List[str]:
        names = list(BASE_FEATURES)
        if self.proxy_model is not None:
            names += PROXY_FEATURES
        if self.latent_model is not None:
            names += latent_feature_names(self.latent_model.latent_dim)
        return names

    def to_record(self, provenance: Dict[str, str]) -> FeatureRecord:
        if self.error is not None:
            return FeatureRecord(source=self.source, features={n: None for n in self.feature_names()},
                                 error=self.error, provenance=provenance)
        return FeatureRecord(
            source=self.source,
            features={n: self.features.get(n) for n in self.feature_names()},
            provenance=provenance,
        )
