import json
import os

import numpy as np
import pandas as pd
import pytest

from core.audio_io import AudioBuffer, read_wav, write_wav
from main import main

SR = 16000
FAST = ["--quiet", "--set", "fit.max_iter=15", "--set", "fit.portrait_steps=4000"]
TINY_ABCDE = ["--set", "abcde.epochs=5", "--set", "abcde.hidden_sizes=[8]", "--set", "abcde.latent_dim=2",
              "--set", "abcde.resolutions=[[128, 80, 256]]"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    paths = {}
    for name, delta in (("sym", "0.0"), ("asym", "0.4")):
        paths[name] = str(root / f"{name}.wav")
        assert main(["synth", "--out", paths[name], "--delta", delta, "--dur", "0.5", "--quiet"]) == 0

    noise = AudioBuffer(samples=0.5 * np.random.default_rng(1).uniform(-1.0, 1.0, SR // 2), sample_rate=SR)
    paths["noise"] = write_wav(noise, str(root / "noise.wav"))

    vowel = read_wav(paths["sym"])
    mixed = AudioBuffer(samples=np.concatenate([vowel.samples, noise.samples]), sample_rate=SR)
    paths["mixed"] = write_wav(mixed, str(root / "mixed.wav"))
    with open(root / "mixed.lab", "w") as f:
        f.write("0.0 0.5 1\n0.5 1.0 0\n")

    paths["corrupt"] = str(root / "corrupt.wav")
    with open(paths["corrupt"], "wb") as f:
        f.write(b"definitely not RIFF")
    return paths


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert "glottkit" in capsys.readouterr().out


def test_synth_writes_readable_audio(tmp_path):
    out = str(tmp_path / "v.wav")
    assert main(["synth", "--out", out, "--dur", "0.25", "--encoding", "float32", "--tremor-rate", "3",
                 "--tremor-depth", "5", "--snr", "30", "--quiet"]) == 0
    buf = read_wav(out)
    assert buf.sample_rate == SR
    assert len(buf) == SR // 4


def test_synth_rejects_bad_parameters(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "v.wav"), "--beta", "0", "--quiet"]) == 1


def test_unknown_config_key(tmp_path, corpus):
    assert main(["extract", corpus["sym"], "--out", str(tmp_path / "f.csv"), "--set", "fit.nope=1"]) == 1


def test_extract_keeps_order_and_marks_failures(tmp_path, corpus):
    out = str(tmp_path / "features.csv")
    inputs = [corpus["sym"], corpus["corrupt"], corpus["asym"]]
    assert main(["extract", *inputs, "--out", out, *FAST]) == 0

    df = pd.read_csv(out, keep_default_na=True)
    assert df["source"].tolist() == inputs
    assert list(df.columns[:4]) == ["source", "alpha", "beta", "delta"]
    assert df.columns[-1] == "error"
    assert df["error"].fillna("").tolist()[0] == ""
    assert df.loc[1, "error"].startswith("CorruptHeaderError")
    assert df.loc[1, ["alpha", "beta", "delta"]].isna().all()
    assert np.isfinite(df.loc[[0, 2], "alpha"]).all()

    with open(f"{out}.provenance.json") as f:
        prov = json.load(f)
    assert len(prov["config_hash"]) == 32
    assert prov["config"]["fit.max_iter"] == 15


def test_extract_is_deterministic(tmp_path, corpus):
    inputs = [corpus["sym"], corpus["asym"]]
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["extract", *inputs, "--out", a, *FAST]) == 0
    assert main(["extract", *inputs, "--out", b, "--jobs", "2", *FAST]) == 0
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()


def test_extract_json_format(tmp_path, corpus):
    out = str(tmp_path / "features.json")
    assert main(["extract", corpus["sym"], "--out", out, "--format", "json", *FAST]) == 0
    with open(out) as f:
        rows = json.load(f)
    assert rows[0]["source"] == corpus["sym"]
    assert rows[0]["error"] is None
    assert "alpha" in rows[0]["features"]


def test_extract_with_nothing_usable(tmp_path, corpus):
    assert main(["extract", corpus["corrupt"], "--out", str(tmp_path / "f.csv"), *FAST]) == 2


def test_estimate_outputs(tmp_path, corpus):
    out_dir = str(tmp_path / "est")
    assert main(["estimate", corpus["sym"], "--out-dir", out_dir, *FAST]) == 0
    with open(os.path.join(out_dir, "params.json")) as f:
        params = json.load(f)
    for key in ("alpha", "beta", "delta", "loss", "converged", "iterations", "loss_curve", "f0", "config_hash"):
        assert key in params
    assert 0.0 <= params["alpha"] <= 2.0
    assert params["f0"] == pytest.approx(120.0, abs=3.0)
    with open(os.path.join(out_dir, "portrait.svg")) as f:
        svg = f.read()
    assert svg.count("<polyline") == 2
    assert "left fold" in svg


def test_estimate_recovers_synthesized_folds(tmp_path, corpus):
    out_dir = str(tmp_path / "est")
    assert main(["estimate", corpus["asym"], "--out-dir", out_dir, *FAST, "--set", "fit.max_iter=150"]) == 0
    with open(os.path.join(out_dir, "params.json")) as f:
        params = json.load(f)
    # corpus["asym"] is synthesized at α=0.6, β=0.32, Δ=0.4; inverse filtering leaves 2α − β well pinned
    assert 2.0 * params["alpha"] - params["beta"] == pytest.approx(0.88, rel=0.15)
    assert params["delta"] > 0.1
    assert params["loss_curve"][-1] <= params["loss_curve"][0]


def test_estimate_unvoiced(tmp_path, corpus):
    assert main(["estimate", corpus["noise"], "--out-dir", str(tmp_path / "est"), *FAST]) == 3


def test_estimate_unreadable(tmp_path, corpus):
    assert main(["estimate", corpus["corrupt"], "--out-dir", str(tmp_path / "est"), *FAST]) == 2


def test_proxy_train_score_and_extract(tmp_path, corpus):
    model = str(tmp_path / "proxy.json")
    table = str(tmp_path / "frames.csv")
    assert main(["proxy-train", corpus["mixed"], "--out", model, "--table-out", table, "--quiet"]) == 0
    assert os.path.exists(table)

    scores = str(tmp_path / "scores.csv")
    assert main(["proxy-score", corpus["sym"], corpus["noise"], "--model", model, "--out", scores, "--quiet"]) == 0
    df = pd.read_csv(scores)
    assert df.loc[0, "proxy_mean"] > 0.5 > df.loc[1, "proxy_mean"]

    retrained = str(tmp_path / "proxy2.json")
    assert main(["proxy-train", "--table", table, "--out", retrained, "--quiet"]) == 0

    out = str(tmp_path / "features.csv")
    assert main(["extract", corpus["sym"], "--out", out, "--set", f"proxy.model_path={model}", *FAST]) == 0
    assert {"proxy_mean", "proxy_std", "proxy_frac"} <= set(pd.read_csv(out).columns)


def test_proxy_needs_labels(tmp_path, corpus):
    assert main(["proxy-train", corpus["sym"], "--out", str(tmp_path / "p.json"), "--quiet"]) == 2
    assert main(["proxy-train", "--out", str(tmp_path / "p.json"), "--quiet"]) == 1
    assert main(["proxy-score", corpus["sym"], "--out", str(tmp_path / "s.csv"), "--quiet"]) == 1


def test_abcde_train_and_encode(tmp_path, corpus):
    model = str(tmp_path / "abcde.json")
    assert main(["abcde-train", corpus["sym"], corpus["noise"], "--labels", "1", "0", "--out", model,
                 "--quiet", *TINY_ABCDE]) == 0
    with open(f"{model}.history.json") as f:
        assert len(json.load(f)["loss_history"]) == 5

    codes = str(tmp_path / "codes.csv")
    assert main(["abcde-encode", corpus["sym"], corpus["corrupt"], "--model", model, "--out", codes, "--quiet"]) == 0
    df = pd.read_csv(codes)
    assert list(df.columns) == ["source", "latent_mean_0", "latent_mean_1", "error"]
    assert np.isfinite(df.loc[0, "latent_mean_0"])
    assert df.loc[1, "error"].startswith("CorruptHeaderError")

    assert main(["abcde-train", corpus["sym"], "--labels", "1", "0", "--out", model, "--quiet"]) == 1


def write_cohort(path, separation: float, n: int = 30, seed: int = 0):
    rng = np.random.default_rng(seed)
    labels = np.r_[np.zeros(n, dtype=int), np.ones(n, dtype=int)]
    df = pd.DataFrame({
        "source": [f"rec{i}.wav" for i in range(2 * n)],
        "alpha": rng.normal(0.0, 1.0, 2 * n) + separation * labels,
        "beta": rng.normal(0.0, 1.0, 2 * n),
        "label": labels,
        "error": "",
    })
    df.loc[2 * n] = ["broken.wav", np.nan, np.nan, 1, "CorruptHeaderError: bad"]
    df.to_csv(path, index=False)
    return str(path)


@pytest.fixture(scope="module")
def cohort_table(tmp_path_factory):
    """Feature table extracted from synthesized symmetric (0) and asymmetric (1) folds"""
    root = tmp_path_factory.mktemp("cohort")
    rng = np.random.default_rng(5)
    paths, labels = [], []
    for label, delta in ((0, 0.0), (1, 0.4)):
        for i in range(20):
            path = str(root / f"c{label}_{i}.wav")
            assert main(["synth", "--out", path, "--delta", str(delta), "--alpha", f"{rng.uniform(0.55, 0.65):.4f}",
                         "--beta", f"{rng.uniform(0.28, 0.36):.4f}", "--dur", "0.3", "--quiet"]) == 0
            paths.append(path)
            labels.append(label)

    features = str(root / "features.csv")
    assert main(["extract", *paths, "--out", features, "--jobs", "4", *FAST]) == 0
    df = pd.read_csv(features)
    assert df["source"].tolist() == paths
    df["label"] = labels
    table = str(root / "cohort.csv")
    df.to_csv(table, index=False)
    return table


def test_eval_separates_extracted_cohort(tmp_path, cohort_table):
    out = str(tmp_path / "report.json")
    assert main(["eval", cohort_table, "--folds", "5", "--out", out, "--quiet"]) == 0
    with open(out) as f:
        report = json.load(f)
    assert report["n_samples"] == 40
    assert len(report["fold_accuracies"]) == 5
    assert "delta" in report["features"]
    assert report["auc"]["delta"] >= 0.9
    assert report["accuracy_mean"] >= 0.75


def test_eval_permuted_cohort_sits_near_chance(tmp_path, cohort_table):
    out = str(tmp_path / "report.json")
    assert main(["eval", cohort_table, "--folds", "5", "--permute", "--out", out, "--quiet"]) == 0
    with open(out) as f:
        report = json.load(f)
    assert report["permuted"] is True
    assert 0.2 <= report["accuracy_mean"] <= 0.8


def test_eval_is_seeded(tmp_path):
    table = write_cohort(tmp_path / "cohort.csv", separation=1.0)
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    assert main(["eval", table, "--out", a, "--quiet"]) == 0
    assert main(["eval", table, "--out", b, "--quiet"]) == 0
    with open(a) as fa, open(b) as fb:
        assert json.load(fa)["fold_accuracies"] == json.load(fb)["fold_accuracies"]


def test_eval_configuration_errors(tmp_path):
    table = write_cohort(tmp_path / "cohort.csv", separation=1.0)
    out = str(tmp_path / "report.json")
    assert main(["eval", table, "--folds", "1", "--out", out, "--quiet"]) == 1
    assert main(["eval", table, "--folds", "31", "--out", out, "--quiet"]) == 1
    assert main(["eval", table, "--label", "group", "--out", out, "--quiet"]) == 1
