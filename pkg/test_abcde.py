import numpy as np
import pytest

from core.abcde import (
    AbcdeConfig,
    AbcdeModel,
    DenseNet,
    audio_windows,
    backprop,
    composite_loss,
    decode,
    encode,
    head_accuracy,
    head_logits,
    latent_features,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    stack_windows,
    train,
    train_from_audio,
)
from core.audio_io import AudioBuffer
from core.dsp import Resolution, build_stack
from core.errors import DimensionMismatchError, IoError, NoFramesError, SingleClassDataError
from core.fold_models import OneMassParams
from core.proxy_classifier import LinearClassifier
from core.synth import synth_vowel

SMALL = AbcdeConfig(hidden_sizes=(5,), latent_dim=2, seed=11)
AUDIO_CFG = AbcdeConfig(hidden_sizes=(8,), latent_dim=3, window=4, epochs=20, lr=0.01,
                        resolutions=((128, 80, 256),))


def clusters(n: int = 40, dim: int = 6, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(-1.0, 0.3, (n // 2, dim)), rng.normal(1.0, 0.3, (n // 2, dim))])
    y = np.r_[np.zeros(n // 2), np.ones(n // 2)]
    return x, y


def copy_model(m: AbcdeModel) -> AbcdeModel:
    return model_from_dict(model_to_dict(m))


def numeric_grad(m: AbcdeModel, x, y, getter, index, eps=1e-6) -> float:
    plus, minus = copy_model(m), copy_model(m)
    getter(plus)[index] += eps
    getter(minus)[index] -= eps
    return (composite_loss(plus, x, y)[0] - composite_loss(minus, x, y)[0]) / (2.0 * eps)


@pytest.fixture(scope="module")
def audio():
    vowel = synth_vowel(OneMassParams(), dur=0.5)
    noise = AudioBuffer(samples=0.3 * np.random.default_rng(2).uniform(-1.0, 1.0, 8000), sample_rate=16000)
    return vowel, noise


def test_shapes():
    m = AbcdeModel.initialize(6, SMALL)
    x, _ = clusters()
    z = encode(m, x)
    assert z.shape == (40, 2)
    assert decode(m, z).shape == (40, 6)
    assert encode(m, x[0]).shape == (2,)
    assert m.encoder.sizes == [6, 5, 2]
    assert m.decoder.sizes == [2, 5, 6]


def test_initialization_is_seeded():
    a, b = AbcdeModel.initialize(6, SMALL), AbcdeModel.initialize(6, SMALL)
    for wa, wb in zip(a.encoder.weights + a.decoder.weights, b.encoder.weights + b.decoder.weights):
        np.testing.assert_array_equal(wa, wb)
    other = AbcdeModel.initialize(6, SMALL.model_copy(update={"seed": 12}))
    assert not np.array_equal(a.encoder.weights[0], other.encoder.weights[0])


def test_loss_parts():
    m = AbcdeModel.initialize(6, SMALL)
    x, y = clusters()
    total, recon, disc = composite_loss(m, x, y)
    assert total == pytest.approx(recon + disc)
    assert disc == pytest.approx(np.log(2.0), abs=0.05)
    m.lambda_disc = 0.0
    assert composite_loss(m, x, y)[0] == pytest.approx(recon)


def test_backprop_matches_finite_differences():
    m = AbcdeModel.initialize(6, SMALL)
    x, y = clusters(n=10)
    _, g = backprop(m, x, y)
    checks = [
        (lambda mm: mm.encoder.weights[0], (2, 3), g.encoder_w[0]),
        (lambda mm: mm.encoder.weights[1], (4, 1), g.encoder_w[1]),
        (lambda mm: mm.encoder.biases[0], (1,), g.encoder_b[0]),
        (lambda mm: mm.decoder.weights[0], (1, 2), g.decoder_w[0]),
        (lambda mm: mm.decoder.biases[1], (5,), g.decoder_b[1]),
        (lambda mm: mm.head.weights, (0,), g.head_w),
    ]
    for getter, index, analytic in checks:
        expected = numeric_grad(m, x, y, getter, index)
        assert analytic[index] == pytest.approx(expected, rel=1e-5, abs=1e-8)


def test_history_never_increases():
    m = AbcdeModel.initialize(6, SMALL)
    x, y = clusters()
    start = composite_loss(m, x, y)[0]
    trained, history = train(m, x, y, epochs=50, lr=0.5)
    assert len(history) == 50
    assert all(b <= a for a, b in zip(history[:-1], history[1:]))
    assert history[-1] < start
    assert composite_loss(trained, x, y)[0] == pytest.approx(history[-1])


def test_discriminative_head_separates_clusters():
    cfg = SMALL.model_copy(update={"lambda_recon": 0.0})
    x, y = clusters()
    m, _ = train(AbcdeModel.initialize(6, cfg), x, y, epochs=200, lr=0.5)
    assert head_accuracy(m, x, y) >= 0.9
    z = encode(m, x)
    assert np.linalg.norm(z[y == 1].mean(axis=0) - z[y == 0].mean(axis=0)) > 0.1


def test_training_preconditions():
    m = AbcdeModel.initialize(6, SMALL)
    x, _ = clusters()
    with pytest.raises(SingleClassDataError):
        train(m, x, np.ones(40), epochs=1)
    with pytest.raises(DimensionMismatchError):
        train(m, x[:, :4], np.r_[np.zeros(20), np.ones(20)], epochs=1)
    with pytest.raises(DimensionMismatchError):
        composite_loss(m, x, np.ones(3))
    unsupervised = AbcdeModel.initialize(6, SMALL.model_copy(update={"lambda_disc": 0.0}))
    _, history = train(unsupervised, x, np.ones(40), epochs=3)
    assert len(history) == 3


def test_structure_checks():
    with pytest.raises(DimensionMismatchError):
        DenseNet(weights=[np.zeros((3, 2))], biases=[np.zeros(3)])
    with pytest.raises(DimensionMismatchError):
        DenseNet(weights=[np.zeros((3, 2)), np.zeros((4, 1))], biases=[np.zeros(2), np.zeros(1)])
    m = AbcdeModel.initialize(6, SMALL)
    with pytest.raises(DimensionMismatchError):
        AbcdeModel(encoder=m.encoder, decoder=DenseNet.zeros([3, 6]), head=m.head)


def test_stack_windows_layout(audio):
    vowel, _ = audio
    stack = build_stack(vowel, [Resolution(128, 80, 256)])
    windows = stack_windows(stack, 4)
    assert windows.shape == (stack.n_frames // 4, 4 * 129)
    np.testing.assert_allclose(windows[0, :129], np.log1p(stack.layers[0][0]))
    with pytest.raises(NoFramesError):
        stack_windows(stack, stack.n_frames + 1)


def test_train_from_audio_and_reload(audio, tmp_path):
    vowel, noise = audio
    m, history = train_from_audio([vowel, noise], [1, 0], AUDIO_CFG)
    assert m.input_dim == 4 * 129
    assert len(history) == AUDIO_CFG.epochs
    assert all(b <= a for a, b in zip(history[:-1], history[1:]))

    codes = latent_features(m, vowel)
    assert codes.shape == (audio_windows(vowel, 4, [Resolution(128, 80, 256)]).shape[0], 3)

    loaded = load_model(save_model(m, str(tmp_path / "abcde.json")))
    np.testing.assert_allclose(latent_features(loaded, vowel), codes, rtol=1e-12, atol=1e-12)


def test_unknown_model_version():
    data = model_to_dict(AbcdeModel.initialize(6, SMALL))
    data["version"] = "abcde-v0"
    with pytest.raises(ValueError):
        model_from_dict(data)


def test_head_standardization_enters_logits_and_gradients():
    m = AbcdeModel.initialize(6, SMALL)
    m.head = LinearClassifier(weights=np.array([0.7, -0.4]), bias=0.2,
                              mean=np.array([0.1, -0.2]), scale=np.array([2.0, 0.5]))
    x, y = clusters(n=10)
    z = encode(m, x)
    np.testing.assert_allclose(head_logits(m, z), ((z - m.head.mean) / m.head.scale) @ m.head.weights + 0.2)

    _, g = backprop(m, x, y)
    checks = [
        (lambda mm: mm.head.weights, (1,), g.head_w),
        (lambda mm: mm.encoder.weights[1], (3, 0), g.encoder_w[1]),
        (lambda mm: mm.encoder.biases[1], (1,), g.encoder_b[1]),
    ]
    for getter, index, analytic in checks:
        assert analytic[index] == pytest.approx(numeric_grad(m, x, y, getter, index), rel=1e-5, abs=1e-8)


def test_train_seed_redraws_weights_reproducibly():
    x, y = clusters()
    a = AbcdeModel.initialize(6, SMALL)
    b = AbcdeModel.initialize(6, SMALL.model_copy(update={"seed": 99}))
    ta, ha = train(a, x, y, epochs=10, lr=0.5, seed=3)
    tb, hb = train(b, x, y, epochs=10, lr=0.5, seed=3)
    assert ha == hb
    for wa, wb in zip(ta.encoder.weights + ta.decoder.weights, tb.encoder.weights + tb.decoder.weights):
        np.testing.assert_array_equal(wa, wb)

    _, other = train(a, x, y, epochs=10, lr=0.5, seed=4)
    assert other != ha


def test_load_model_wraps_io_failures(tmp_path):
    with pytest.raises(IoError):
        load_model(str(tmp_path / "missing.json"))
    with pytest.raises(IoError):
        load_model(str(tmp_path))
