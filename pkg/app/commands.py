"""Subcommand implementations. Each `cmd_*` returns the process exit code.

Exit codes: 0 success, 1 bad configuration, 2 nothing succeeded (or the
single input failed), 3 the input to `estimate` is unvoiced.
"""

import json
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy
from scipy.stats import rankdata

from core.abcde import latent_features, load_model, save_model, train_from_audio
from core.abcde import AbcdeModel
from core.audio_io import load_canonical, write_wav
from core.errors import ConfigError, GlottkitError, IoError, LabelFileError, SingleClassDataError
from core.fold_models import OneMassParams
from core.phase_features import phase_portrait, render_svg
from core.proxy_classifier import (
    LabeledFrameTable,
    LinearClassifier,
    accuracy,
    frames_from_sidecar,
    load_classifier,
    read_sidecar,
    read_table,
    save_classifier,
    score_recording,
    train_logistic,
    write_table,
)
from core.synth import Modulation, synth_vowel
from graph.extraction_graph import build_extraction_graph, run_extraction
from graph.state import ExtractionState, FeatureRecord, latent_feature_names
from utils.config import PipelineConfig, config_hash
from utils.performance_monitor import BatchProcessor, PerformanceMonitor
from utils.run_log import log_message

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED = 2
EXIT_UNVOICED = 3

NON_FEATURE_COLUMNS = ("source", "error")


def versions() -> Dict[str, str]:
    return {"glottkit": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def provenance(cfg: PipelineConfig, chash: str) -> Dict[str, str]:
    return {"config_hash": chash, **{f"{k}_version": v for k, v in versions().items()}}


def _announce(cfg: PipelineConfig) -> str:
    chash = config_hash(cfg)
    log_message(f"🔑 Config hash: {chash}")
    return chash


def _write_json(data, path: str) -> str:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def _write_rows(rows: List[Dict], columns: List[str], path: str, fmt: str = "csv") -> str:
    """Rows in input order; missing values are empty cells in CSV and null in JSON"""
    if fmt == "json":
        return _write_json(rows, path)
    df = pd.DataFrame(rows, columns=columns)
    try:
        df.to_csv(path, index=False, na_rep="", lineterminator="\n")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def _ensure_dir(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise IoError(f"Cannot create {path}: {e}") from e


def load_models(cfg: PipelineConfig) -> Tuple[Optional[LinearClassifier], Optional[AbcdeModel]]:
    """Trained models named in the configuration; a model that cannot be loaded is a ConfigError"""
    proxy_model = latent_model = None
    if cfg.proxy.model_path:
        try:
            proxy_model = load_classifier(cfg.proxy.model_path)
        except GlottkitError as e:
            raise ConfigError(f"proxy.model_path: {e}") from e
    if cfg.abcde.model_path:
        try:
            latent_model = load_model(cfg.abcde.model_path)
        except (ValueError, KeyError, GlottkitError) as e:
            raise ConfigError(f"abcde.model_path: cannot load {cfg.abcde.model_path}: {e}") from e
    return proxy_model, latent_model


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------

def extract_records(inputs: Sequence[str], cfg: PipelineConfig) -> Tuple[List[FeatureRecord], List[str]]:
    """Run the extraction graph on every input; records come back in input order"""
    chash = config_hash(cfg)
    proxy_model, latent_model = load_models(cfg)
    prov = provenance(cfg, chash)
    names = ExtractionState(source="", proxy_model=proxy_model, latent_model=latent_model).feature_names()
    graph = build_extraction_graph()

    def process(path: str) -> FeatureRecord:
        state = ExtractionState(source=path, config=cfg, config_hash=chash,
                                proxy_model=proxy_model, latent_model=latent_model)
        return run_extraction(graph, state).to_record(prov)

    def on_error(path: str, e: Exception) -> FeatureRecord:
        return FeatureRecord(source=path, features={n: None for n in names},
                             error=f"{type(e).__name__}: {e}", provenance=prov)

    monitor = PerformanceMonitor()
    with monitor.monitor("extract"):
        records = BatchProcessor(cfg.run.jobs).run(list(inputs), process, monitor, on_error)
    return records, names


def cmd_extract(inputs: Sequence[str], cfg: PipelineConfig, out: str) -> int:
    chash = _announce(cfg)
    log_message(f"🔍 Extracting features from {len(inputs)} recordings ({cfg.run.jobs} jobs)")
    records, names = extract_records(inputs, cfg)

    if cfg.run.format == "json":
        rows = [r.model_dump() for r in records]
    else:
        rows = [{"source": r.source, **r.features, "error": r.error or ""} for r in records]
    _write_rows(rows, ["source", *names, "error"], out, cfg.run.format)
    _write_json({"config_hash": chash, "versions": versions(), "config": cfg.to_flat()},
                f"{out}.provenance.json")

    n_ok = sum(r.ok for r in records)
    log_message(f"📊 {n_ok}/{len(records)} recordings succeeded, written to {out}")
    if n_ok == 0:
        log_message("❌ No recording produced features", "error")
        return EXIT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def cmd_estimate(input_path: str, cfg: PipelineConfig, out_dir: str) -> int:
    chash = _announce(cfg)
    graph = build_extraction_graph()
    state = run_extraction(graph, ExtractionState(source=input_path, config=cfg, config_hash=chash))

    if state.error:
        log_message(f"❌ Estimation failed: {state.error}", "error")
        return EXIT_UNVOICED if state.error_type == "UnvoicedTargetError" else EXIT_FAILED

    fit = state.fit
    f0, samples_per_cycle = fit.time_normalization
    result = {
        "source": input_path,
        "alpha": fit.params.alpha,
        "beta": fit.params.beta,
        "delta": fit.params.delta,
        "loss": fit.final_loss,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "grad_norm_final": fit.grad_norm_final,
        "loss_curve": fit.loss_curve,
        "f0": f0,
        "samples_per_cycle": samples_per_cycle,
        "model_period": fit.model_period,
        "features": state.features,
        "config_hash": chash,
    }
    _ensure_dir(out_dir)
    params_path = _write_json(result, os.path.join(out_dir, "params.json"))

    tail = state.trajectory.n_steps // 2
    portraits = [phase_portrait(state.trajectory, fold)[tail:] for fold in ("left", "right")]
    svg_path = render_svg(portraits, os.path.join(out_dir, "portrait.svg"), labels=["left fold", "right fold"])

    log_message(f"✅ Wrote {params_path} and {svg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(out: str, cfg: PipelineConfig, alpha: float, beta: float, delta: float,
              f0: float = 120.0, dur: float = 1.0, snr_db: Optional[float] = None,
              tremor_rate: Optional[float] = None, tremor_depth: float = 0.0,
              encoding: str = "pcm16") -> int:
    _announce(cfg)
    try:
        params = OneMassParams(alpha=alpha, beta=beta, delta=delta)
    except ValueError as e:
        raise ConfigError(f"Invalid model parameters: {e}") from e
    modulation = Modulation(tremor_rate, tremor_depth) if tremor_rate else None

    log_message(f"🎛️ Synthesizing {dur:g}s vowel: α={alpha:g} β={beta:g} Δ={delta:g} f0={f0:g} Hz")
    try:
        buf = synth_vowel(params, dur=dur, f0_target=f0, snr_db=snr_db, modulation=modulation,
                          seed=cfg.run.seed, sample_rate=cfg.audio.sample_rate)
        write_wav(buf, out, encoding)
    except GlottkitError as e:
        log_message(f"❌ Synthesis failed: {type(e).__name__}: {e}", "error")
        return EXIT_FAILED
    log_message(f"✅ Wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# proxy classifier
# ---------------------------------------------------------------------------

def sidecar_path(wav_path: str) -> str:
    return os.path.splitext(wav_path)[0] + ".lab"


def labeled_frames(inputs: Sequence[str], label_files: Optional[Sequence[str]],
                   cfg: PipelineConfig) -> LabeledFrameTable:
    if label_files and len(label_files) != len(inputs):
        raise ConfigError(f"{len(label_files)} label files for {len(inputs)} recordings")
    tables = []
    for i, path in enumerate(inputs):
        labels = read_sidecar(label_files[i] if label_files else sidecar_path(path))
        buf = load_canonical(path, cfg.audio.sample_rate)
        tables.append(frames_from_sidecar(buf, labels, path, cfg.proxy))
    return LabeledFrameTable.concat(tables)


def cmd_proxy_train(inputs: Sequence[str], cfg: PipelineConfig, out: str,
                    label_files: Optional[Sequence[str]] = None, table_path: Optional[str] = None,
                    table_out: Optional[str] = None) -> int:
    _announce(cfg)
    try:
        table = read_table(table_path) if table_path else labeled_frames(inputs, label_files, cfg)
        if table_out:
            write_table(table, table_out)
        log_message(f"🏷️ Training proxy classifier on {len(table)} frames of dimension {table.dim}")
        model = train_logistic(table, cfg.proxy)
        save_classifier(model, out)
    except ConfigError:
        raise
    except GlottkitError as e:
        log_message(f"❌ Proxy training failed: {type(e).__name__}: {e}", "error")
        return EXIT_FAILED

    log_message(f"✅ Training accuracy {accuracy(model, table):.3f}, model written to {out}")
    return EXIT_OK


def cmd_proxy_score(inputs: Sequence[str], cfg: PipelineConfig, out: str, model_path: Optional[str] = None) -> int:
    _announce(cfg)
    path = model_path or cfg.proxy.model_path
    if not path:
        raise ConfigError("No proxy model given (use --model or proxy.model_path)")
    try:
        model = load_classifier(path)
    except GlottkitError as e:
        raise ConfigError(f"Cannot use proxy model: {e}") from e

    rows = []
    for source in inputs:
        row = {"source": source}
        try:
            summary = score_recording(model, load_canonical(source, cfg.audio.sample_rate), cfg.proxy)
            row.update(proxy_mean=summary.mean, proxy_std=summary.std, proxy_frac=summary.fraction_positive, error="")
        except GlottkitError as e:
            log_message(f"❌ {source}: {type(e).__name__}: {e}", "error")
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)

    _write_rows(rows, ["source", "proxy_mean", "proxy_std", "proxy_frac", "error"], out, cfg.run.format)
    n_ok = sum(not r["error"] for r in rows)
    log_message(f"📊 Scored {n_ok}/{len(rows)} recordings into {out}")
    return EXIT_OK if n_ok else EXIT_FAILED


# ---------------------------------------------------------------------------
# ABCDE
# ---------------------------------------------------------------------------

def cmd_abcde_train(inputs: Sequence[str], labels: Sequence[int], cfg: PipelineConfig, out: str) -> int:
    _announce(cfg)
    if len(labels) != len(inputs):
        raise ConfigError(f"{len(labels)} labels for {len(inputs)} recordings")
    if any(v not in (0, 1) for v in labels):
        raise ConfigError("Recording labels must be 0 or 1")

    core_cfg = cfg.abcde.to_core(cfg.run.seed)
    monitor = PerformanceMonitor()
    try:
        with monitor.monitor("abcde-train"):
            buffers = [load_canonical(p, cfg.audio.sample_rate) for p in inputs]
            log_message(f"🧠 Training ABCDE on {len(buffers)} recordings for {core_cfg.epochs} epochs")
            model, history = train_from_audio(buffers, labels, core_cfg)
        save_model(model, out)
        _write_json({"loss_history": history}, f"{out}.history.json")
    except GlottkitError as e:
        log_message(f"❌ ABCDE training failed: {type(e).__name__}: {e}", "error")
        return EXIT_FAILED

    if history:
        log_message(f"📉 Loss {history[0]:.4f} → {history[-1]:.4f}")
    log_message(f"✅ Model written to {out}")
    return EXIT_OK


def cmd_abcde_encode(inputs: Sequence[str], cfg: PipelineConfig, out: str, model_path: Optional[str] = None) -> int:
    _announce(cfg)
    path = model_path or cfg.abcde.model_path
    if not path:
        raise ConfigError("No ABCDE model given (use --model or abcde.model_path)")
    try:
        model = load_model(path)
    except (ValueError, KeyError, GlottkitError) as e:
        raise ConfigError(f"Cannot load ABCDE model {path}: {e}") from e

    names = latent_feature_names(model.latent_dim)
    rows = []
    for source in inputs:
        row = {"source": source}
        try:
            codes = latent_features(model, load_canonical(source, cfg.audio.sample_rate))
            row.update(zip(names, (float(v) for v in codes.mean(axis=0))))
            row["error"] = ""
        except GlottkitError as e:
            log_message(f"❌ {source}: {type(e).__name__}: {e}", "error")
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)

    _write_rows(rows, ["source", *names, "error"], out, cfg.run.format)
    n_ok = sum(not r["error"] for r in rows)
    log_message(f"📊 Encoded {n_ok}/{len(rows)} recordings into {out}")
    return EXIT_OK if n_ok else EXIT_FAILED


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per row: each class shuffled with the seed, then dealt round-robin"""
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.shape[0], dtype=int)
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        assignment[members] = np.arange(members.shape[0]) % folds
    return assignment


def univariate_auc(x: np.ndarray, y: np.ndarray) -> float:
    """Mann-Whitney AUC of one feature; ties count one half"""
    ranks = rankdata(x)
    n_pos = int(np.sum(y == 1))
    n_neg = y.shape[0] - n_pos
    return float((np.sum(ranks[y == 1]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def load_eval_table(path: str, label_column: str) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    try:
        df = pd.read_csv(path, keep_default_na=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise LabelFileError(f"Cannot read feature table {path}: {e}") from e
    if label_column not in df.columns:
        raise ConfigError(f"{path} has no label column '{label_column}'")

    if "error" in df.columns:
        failed = df["error"].fillna("").astype(str).str.len() > 0
        if failed.any():
            log_message(f"⚠️ Skipping {int(failed.sum())} rows with extraction errors", "warning")
        df = df[~failed]

    candidates = [c for c in df.columns
                  if c != label_column and c not in NON_FEATURE_COLUMNS and pd.api.types.is_numeric_dtype(df[c])]
    columns = [c for c in candidates if not df[c].isna().any()]
    dropped = sorted(set(candidates) - set(columns))
    if dropped:
        log_message(f"⚠️ Dropping features with missing values: {', '.join(dropped)}", "warning")
    if not columns:
        raise LabelFileError(f"{path} has no complete numeric feature column")

    labels = df[label_column].to_numpy()
    if not np.all(np.isin(labels, (0, 1))):
        raise LabelFileError(f"Column '{label_column}' must hold 0/1 labels")
    return df[columns].to_numpy(dtype=np.float64), labels.astype(int), columns


def evaluate(features: np.ndarray, labels: np.ndarray, columns: List[str], folds: int,
             cfg: PipelineConfig, permute: bool = False) -> Dict:
    """k-fold cross-validated logistic regression plus per-feature AUC"""
    n = labels.shape[0]
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise ConfigError(f"folds ({folds}) exceeds the number of rows ({n})")
    counts = np.bincount(labels, minlength=2)
    if np.count_nonzero(counts) < 2:
        raise SingleClassDataError("Evaluation table holds a single class")
    if counts.min() < folds:
        raise ConfigError(f"Smallest class has {counts.min()} rows, fewer than {folds} folds")

    seed = cfg.run.seed
    if permute:
        labels = np.random.default_rng([seed, 1]).permutation(labels)
        log_message(f"🔀 Labels permuted with seed {seed}")

    assignment = stratified_folds(labels, folds, seed)
    fold_acc = []
    for k in range(folds):
        train, test = assignment != k, assignment == k
        table = LabeledFrameTable.from_arrays(features[train], labels[train], source="train")
        model = train_logistic(table, cfg.proxy)
        fold_acc.append(accuracy(model, LabeledFrameTable.from_arrays(features[test], labels[test], source="test")))

    auc = {c: univariate_auc(features[:, j], labels) for j, c in enumerate(columns)}
    return {
        "n_samples": int(n),
        "n_features": len(columns),
        "features": columns,
        "folds": folds,
        "seed": seed,
        "permuted": permute,
        "fold_accuracies": fold_acc,
        "accuracy_mean": float(np.mean(fold_acc)),
        "accuracy_std": float(np.std(fold_acc)),
        "auc": auc,
    }


def cmd_eval(table_path: str, label_column: str, folds: int, cfg: PipelineConfig, out: str,
             permute: bool = False) -> int:
    chash = _announce(cfg)
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    try:
        features, labels, columns = load_eval_table(table_path, label_column)
        report = evaluate(features, labels, columns, folds, cfg, permute)
    except ConfigError:
        raise
    except GlottkitError as e:
        log_message(f"❌ Evaluation failed: {type(e).__name__}: {e}", "error")
        return EXIT_FAILED

    report["config_hash"] = chash
    report["table"] = table_path
    _write_json(report, out)
    log_message(f"📈 {folds}-fold accuracy {report['accuracy_mean']:.3f} ± {report['accuracy_std']:.3f} "
                f"on {report['n_samples']} rows, report written to {out}")
    return EXIT_OK
