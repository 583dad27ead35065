"""Autoencoder with a discriminative latent constraint, trained by hand-written backprop.

The encoder maps a flattened window of a representation stack to a latent
code z, the decoder reconstructs the window from z, and a logistic head on
z keeps the code predictive of the class label. All three are trained
jointly on

    total = λ_recon · mean ‖D(E(x)) − x‖² + λ_disc · mean CE(head(z), y)

with full-batch gradient descent. Inputs are log-compressed stack windows,
standardized per dimension with constants stored in the model.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import expit

from core.audio_io import AudioBuffer
from core.dsp import DEFAULT_RESOLUTIONS, Resolution, RepresentationStack, build_stack
from core.errors import DimensionMismatchError, IoError, NoFramesError, SingleClassDataError
from core.proxy_classifier import LinearClassifier

MODEL_VERSION = "abcde-v1"
CE_FLOOR = 1e-7
INIT_RANGE = 0.1


class AbcdeConfig(BaseModel):
    hidden_sizes: Tuple[int, ...] = Field(default=(256, 64), description="Encoder hidden widths; decoder mirrors them")
    latent_dim: int = Field(default=16, ge=1, le=1024)
    window: int = Field(default=8, ge=1, le=256, description="Stack frames per input window")
    lambda_recon: float = Field(default=1.0, ge=0.0)
    lambda_disc: float = Field(default=1.0, ge=0.0)
    epochs: int = Field(default=500, ge=0)
    lr: float = Field(default=0.01, gt=0.0)
    seed: int = Field(default=42)
    representation: str = Field(default="spectrogram", pattern="^(spectrogram|correlogram)$")
    resolutions: Tuple[Tuple[int, int, int], ...] = Field(default=tuple(tuple(r) for r in DEFAULT_RESOLUTIONS))


@dataclass
class DenseNet:
    """tanh on hidden layers, identity on the output layer"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatchError("DenseNet needs one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise DimensionMismatchError(f"layer {i}: bias {b.shape} does not match weights {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionMismatchError(f"layer {i}: input {w.shape[0]} != previous output")

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator) -> "DenseNet":
        weights = [rng.uniform(-INIT_RANGE, INIT_RANGE, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(weights=weights, biases=[np.zeros(b) for b in sizes[1:]])

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "DenseNet":
        return cls(weights=[np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   biases=[np.zeros(b) for b in sizes[1:]])

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Output and the input of every layer"""
        if x.shape[-1] != self.sizes[0]:
            raise DimensionMismatchError(f"Input dimension {x.shape[-1]} != {self.sizes[0]}")
        inputs = []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            a = a @ w + b
            if i < last:
                a = np.tanh(a)
        return a, inputs

    def backward(self, inputs: List[np.ndarray], g_out: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
        """Gradient w.r.t. the input and per-layer (weights, biases)"""
        g_w = [None] * len(self.weights)
        g_b = [None] * len(self.weights)
        g = g_out
        for i in range(len(self.weights) - 1, -1, -1):
            g_w[i] = inputs[i].T @ g
            g_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                # inputs[i] is tanh of the previous layer
                g = g * (1.0 - inputs[i] ** 2)
        return g, g_w, g_b

    def to_dict(self) -> Dict:
        return {"sizes": self.sizes,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, data: Dict) -> "DenseNet":
        return cls(weights=[np.asarray(w, dtype=np.float64) for w in data["weights"]],
                   biases=[np.asarray(b, dtype=np.float64) for b in data["biases"]])


@dataclass
class AbcdeModel:
    encoder: DenseNet
    decoder: DenseNet
    head: LinearClassifier
    lambda_recon: float = 1.0
    lambda_disc: float = 1.0
    input_mean: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    window: int = 8
    representation: str = "spectrogram"
    resolutions: Tuple[Tuple[int, int, int], ...] = field(
        default_factory=lambda: tuple(tuple(r) for r in DEFAULT_RESOLUTIONS))

    def __post_init__(self):
        d = self.encoder.sizes[-1]
        if self.decoder.sizes[0] != d or self.head.dim != d:
            raise DimensionMismatchError("encoder output, decoder input and head input must share the latent dim")
        if self.decoder.sizes[-1] != self.encoder.sizes[0]:
            raise DimensionMismatchError("decoder output must match encoder input")

    @property
    def input_dim(self) -> int:
        return self.encoder.sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.encoder.sizes[-1]

    @classmethod
    def initialize(cls, input_dim: int, cfg: Optional[AbcdeConfig] = None) -> "AbcdeModel":
        cfg = cfg or AbcdeConfig()
        enc_sizes = [input_dim, *cfg.hidden_sizes, cfg.latent_dim]
        blank = cls(encoder=DenseNet.zeros(enc_sizes), decoder=DenseNet.zeros(enc_sizes[::-1]),
                    head=LinearClassifier.zeros(cfg.latent_dim),
                    lambda_recon=cfg.lambda_recon, lambda_disc=cfg.lambda_disc,
                    window=cfg.window, representation=cfg.representation, resolutions=cfg.resolutions)
        return blank.reinitialized(cfg.seed)

    def reinitialized(self, seed: int) -> "AbcdeModel":
        """Same architecture with seeded uniform(−INIT_RANGE, INIT_RANGE) weights; standardizations kept"""
        rng = np.random.default_rng(seed)
        encoder = DenseNet.initialize(self.encoder.sizes, rng)
        decoder = DenseNet.initialize(self.decoder.sizes, rng)
        head = LinearClassifier(weights=rng.uniform(-INIT_RANGE, INIT_RANGE, self.latent_dim), bias=0.0,
                                mean=self.head.mean, scale=self.head.scale)
        return replace(self, encoder=encoder, decoder=decoder, head=head)


@dataclass
class Gradients:
    encoder_w: List[np.ndarray]
    encoder_b: List[np.ndarray]
    decoder_w: List[np.ndarray]
    decoder_b: List[np.ndarray]
    head_w: np.ndarray
    head_b: float


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def encode(m: AbcdeModel, stack_vec: np.ndarray) -> np.ndarray:
    """Latent code(s) z for one prepared window vector or a batch of them"""
    x = np.asarray(stack_vec, dtype=np.float64)
    z, _ = m.encoder.forward(x)
    return z


def decode(m: AbcdeModel, z: np.ndarray) -> np.ndarray:
    x_hat, _ = m.decoder.forward(np.asarray(z, dtype=np.float64))
    return x_hat


def _head_inputs(m: AbcdeModel, z: np.ndarray) -> np.ndarray:
    return (z - m.head.mean) / m.head.scale


def head_logits(m: AbcdeModel, z: np.ndarray) -> np.ndarray:
    """Logistic head on the latent code, standardized by the head's mean and scale"""
    return _head_inputs(m, z) @ m.head.weights + m.head.bias


def _cross_entropy(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -(y * np.log(np.maximum(p, CE_FLOOR)) + (1.0 - y) * np.log(np.maximum(1.0 - p, CE_FLOOR)))


def _batch(batch_x, labels) -> Tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise NoFramesError("Empty batch")
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatchError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    return x, y


def composite_loss(m: AbcdeModel, batch_x, labels) -> Tuple[float, float, float]:
    """(total, recon, disc) over a batch of prepared window vectors"""
    x, y = _batch(batch_x, labels)
    z = encode(m, x)
    x_hat = decode(m, z)
    recon = float(np.mean(np.sum((x_hat - x) ** 2, axis=1)))
    disc = float(np.mean(_cross_entropy(expit(head_logits(m, z)), y)))
    return m.lambda_recon * recon + m.lambda_disc * disc, recon, disc


def backprop(m: AbcdeModel, batch_x, labels) -> Tuple[Tuple[float, float, float], Gradients]:
    """composite_loss and its exact gradient with respect to every weight"""
    x, y = _batch(batch_x, labels)
    n = x.shape[0]

    z, enc_inputs = m.encoder.forward(x)
    x_hat, dec_inputs = m.decoder.forward(z)
    p = expit(head_logits(m, z))

    diff = x_hat - x
    recon = float(np.mean(np.sum(diff ** 2, axis=1)))
    disc = float(np.mean(_cross_entropy(p, y)))
    total = m.lambda_recon * recon + m.lambda_disc * disc

    g_xhat = m.lambda_recon * 2.0 * diff / n
    # The floor makes the loss flat where it is active.
    g_logit = np.where(y > 0.5, np.where(p > CE_FLOOR, p - 1.0, 0.0),
                       np.where(1.0 - p > CE_FLOOR, p, 0.0))
    g_logit = m.lambda_disc * g_logit / n

    g_z_dec, dec_w, dec_b = m.decoder.backward(dec_inputs, g_xhat)
    g_z = g_z_dec + np.outer(g_logit, m.head.weights / m.head.scale)
    _, enc_w, enc_b = m.encoder.backward(enc_inputs, g_z)

    grads = Gradients(encoder_w=enc_w, encoder_b=enc_b, decoder_w=dec_w, decoder_b=dec_b,
                      head_w=_head_inputs(m, z).T @ g_logit, head_b=float(np.sum(g_logit)))
    return (total, recon, disc), grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _stepped(m: AbcdeModel, g: Gradients, lr: float) -> AbcdeModel:
    encoder = DenseNet(weights=[w - lr * gw for w, gw in zip(m.encoder.weights, g.encoder_w)],
                       biases=[b - lr * gb for b, gb in zip(m.encoder.biases, g.encoder_b)])
    decoder = DenseNet(weights=[w - lr * gw for w, gw in zip(m.decoder.weights, g.decoder_w)],
                       biases=[b - lr * gb for b, gb in zip(m.decoder.biases, g.decoder_b)])
    head = LinearClassifier(weights=m.head.weights - lr * g.head_w, bias=m.head.bias - lr * g.head_b,
                            mean=m.head.mean, scale=m.head.scale)
    return AbcdeModel(encoder=encoder, decoder=decoder, head=head,
                      lambda_recon=m.lambda_recon, lambda_disc=m.lambda_disc,
                      input_mean=m.input_mean, input_scale=m.input_scale, window=m.window,
                      representation=m.representation, resolutions=m.resolutions)


def train(m: AbcdeModel, dataset_x, labels, epochs: int = 500, lr: float = 0.01,
          seed: Optional[int] = None) -> Tuple[AbcdeModel, List[float]]:
    """Full-batch gradient descent; a step that raises the loss is undone and lr halved.

    With a seed the weights are first redrawn by m.reinitialized(seed), so the
    result depends only on (architecture, standardization, data, seed, lr).
    The history holds the total loss after every epoch, so it never
    increases.
    """
    x, y = _batch(dataset_x, labels)
    if x.shape[1] != m.input_dim:
        raise DimensionMismatchError(f"Dataset dimension {x.shape[1]} != model input {m.input_dim}")
    if m.lambda_disc > 0.0 and np.unique(y).shape[0] < 2:
        raise SingleClassDataError("Discriminative head needs both classes")
    if seed is not None:
        m = m.reinitialized(seed)

    (loss, _, _), grads = backprop(m, x, y)
    history: List[float] = []
    for _ in range(epochs):
        trial = _stepped(m, grads, lr)
        (trial_loss, _, _), trial_grads = backprop(trial, x, y)
        if np.isfinite(trial_loss) and trial_loss <= loss:
            m, loss, grads = trial, trial_loss, trial_grads
        else:
            lr *= 0.5
        history.append(loss)
    return m, history


def head_accuracy(m: AbcdeModel, batch_x, labels) -> float:
    x, y = _batch(batch_x, labels)
    predicted = (expit(head_logits(m, encode(m, x))) > 0.5).astype(float)
    return float(np.mean(predicted == y))


# ---------------------------------------------------------------------------
# Audio to windows
# ---------------------------------------------------------------------------

def stack_windows(stack: RepresentationStack, window: int) -> np.ndarray:
    """Non-overlapping windows of `window` frames, all layers concatenated, log1p-compressed"""
    if stack.n_frames < window:
        raise NoFramesError(f"Stack has {stack.n_frames} frames, fewer than one {window}-frame window")
    frames = np.log1p(np.hstack(stack.layers))
    n_windows = stack.n_frames // window
    return frames[:n_windows * window].reshape(n_windows, window * frames.shape[1])


def audio_windows(buf: AudioBuffer, window: int, resolutions=DEFAULT_RESOLUTIONS,
                  representation: str = "spectrogram") -> np.ndarray:
    return stack_windows(build_stack(buf, resolutions, representation), window)


def fit_standardization(m: AbcdeModel, raw_windows: np.ndarray) -> AbcdeModel:
    mean = raw_windows.mean(axis=0)
    scale = raw_windows.std(axis=0)
    m.input_mean = mean
    m.input_scale = np.where(scale > 0.0, scale, 1.0)
    return m


def prepare_inputs(m: AbcdeModel, raw_windows: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(raw_windows, dtype=np.float64))
    if x.shape[1] != m.input_dim:
        raise DimensionMismatchError(f"Window dimension {x.shape[1]} != model input {m.input_dim}")
    if m.input_mean is None:
        return x
    return (x - m.input_mean) / m.input_scale


def latent_features(m: AbcdeModel, buf: AudioBuffer) -> np.ndarray:
    """One latent code per stack window of the recording, shape (n_windows, d)"""
    raw = audio_windows(buf, m.window, [Resolution(*r) for r in m.resolutions], m.representation)
    return encode(m, prepare_inputs(m, raw))


def train_from_audio(buffers: Sequence[AudioBuffer], labels: Sequence[int],
                     cfg: Optional[AbcdeConfig] = None) -> Tuple[AbcdeModel, List[float]]:
    """Window every recording, fit standardization, initialize and train"""
    cfg = cfg or AbcdeConfig()
    resolutions = [Resolution(*r) for r in cfg.resolutions]
    blocks, window_labels = [], []
    for buf, label in zip(buffers, labels):
        w = audio_windows(buf, cfg.window, resolutions, cfg.representation)
        blocks.append(w)
        window_labels.extend([label] * w.shape[0])
    if not blocks:
        raise NoFramesError("No recordings to train on")
    raw = np.vstack(blocks)
    m = fit_standardization(AbcdeModel.initialize(raw.shape[1], cfg), raw)
    return train(m, prepare_inputs(m, raw), window_labels, cfg.epochs, cfg.lr)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_dict(m: AbcdeModel) -> Dict:
    return {
        "version": MODEL_VERSION,
        "encoder": m.encoder.to_dict(),
        "decoder": m.decoder.to_dict(),
        "head": m.head.to_dict(),
        "lambda_recon": m.lambda_recon,
        "lambda_disc": m.lambda_disc,
        "input_mean": None if m.input_mean is None else m.input_mean.tolist(),
        "input_scale": None if m.input_scale is None else m.input_scale.tolist(),
        "window": m.window,
        "representation": m.representation,
        "resolutions": [list(r) for r in m.resolutions],
    }


def model_from_dict(data: Dict) -> AbcdeModel:
    if data.get("version") != MODEL_VERSION:
        raise ValueError(f"Unsupported model version {data.get('version')!r}, expected {MODEL_VERSION}")

    def arr(key):
        return None if data.get(key) is None else np.asarray(data[key], dtype=np.float64)

    return AbcdeModel(
        encoder=DenseNet.from_dict(data["encoder"]),
        decoder=DenseNet.from_dict(data["decoder"]),
        head=LinearClassifier.from_dict(data["head"]),
        lambda_recon=float(data["lambda_recon"]),
        lambda_disc=float(data["lambda_disc"]),
        input_mean=arr("input_mean"),
        input_scale=arr("input_scale"),
        window=int(data["window"]),
        representation=data["representation"],
        resolutions=tuple(tuple(int(v) for v in r) for r in data["resolutions"]),
    )


def save_model(m: AbcdeModel, path: str) -> str:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(model_to_dict(m), f)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def load_model(path: str) -> AbcdeModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e
    return model_from_dict(data)
