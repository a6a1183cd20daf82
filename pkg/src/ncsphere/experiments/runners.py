"""Run orchestration: UFM runs, encoder runs, sweeps, metric reports and ETF files."""
from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..classify import accuracy, fixed_prototypes, train_ce_probe, train_normalized_probe
from ..encoder import make_blobs, train_encoder
from ..geometry import EmbeddingBatch, simplex_etf
from ..metrics import convergence_iteration, nc_report, nc_threshold_query
from ..numerics import RandomSource
from ..optim import ufm_optimize
from . import io
from .config import ExperimentConfig, config_to_dict

AGGREGATE_COLUMNS = ("tau", "batch", "seed", "final_acc", "final_erank_inter", "iters_to_95", "status")


def _iters_to_95(trace, metric="erank_inter", num_classes=None):
    first = trace.records[0].report
    query = nc_threshold_query(metric, num_classes, getattr(first, metric))
    return convergence_iteration(trace, query)


def _summary(trace, num_classes) -> dict:
    final = trace.final
    it95 = _iters_to_95(trace, "erank_inter", num_classes)
    return {
        "final_iteration": final.iteration,
        "final_loss": final.loss,
        "report": final.report.as_dict(),
        "iters_to_95_erank_inter": "never" if it95 is None else it95,
    }


def run_ufm(cfg: ExperimentConfig, out_dir=None) -> dict:
    """UFM descent with trace, manifest, final embeddings/weights and a summary."""
    out = cfg.resolve_output_dir(out_dir)
    state, trace = ufm_optimize(cfg.ufm)
    io.write_trace(out / "trace.csv", trace)
    io.write_embeddings(out / "embeddings.csv", state.features, state.labels)
    if state.prototypes is not None:
        io.write_weights(out / "weights.csv", state.prototypes, state.bias)
    summary = _summary(trace, cfg.ufm.num_classes)
    io.write_json(out / "summary.json", summary)
    io.write_manifest(out / "manifest.json", config_to_dict(cfg), cfg.ufm.seed,
                      {"run": trace.manifest})
    summary["output_dir"] = str(out)
    return summary


def _dataset(cfg: ExperimentConfig):
    ds = cfg.dataset
    train = make_blobs(ds.num_classes, ds.per_class, ds.input_dim, ds.separation, ds.noise_sigma, ds.seed)
    held = train.resample(ds.holdout_per_class, ds.seed + 1)
    return train, held


def compare_classifiers(model, train, held, probe_cfg) -> list:
    """Fixed prototypes vs normalized probe vs CE probe on frozen embeddings.

    Each row records train and held-out accuracy and the cost in training
    passes over the N training embeddings (0 for fixed prototypes).
    """
    K = train.num_classes
    unit_train = EmbeddingBatch(model.embed(train.inputs), train.labels, K)
    unit_held = EmbeddingBatch(model.embed(held.inputs), held.labels, K)
    raw_train = EmbeddingBatch(model.embed(train.inputs, normalize=False), train.labels, K)
    raw_held = EmbeddingBatch(model.embed(held.inputs, normalize=False), held.labels, K)
    fp = fixed_prototypes(unit_train)
    nlp = train_normalized_probe(unit_train, probe_cfg)
    lp = train_ce_probe(raw_train, probe_cfg)
    return [
        {"strategy": "fixed_prototypes", "train_acc": accuracy(fp, unit_train),
         "test_acc": accuracy(fp, unit_held), "training_passes": 0, "classifier": fp},
        {"strategy": "normalized_probe", "train_acc": accuracy(nlp, unit_train),
         "test_acc": accuracy(nlp, unit_held), "training_passes": probe_cfg.steps, "classifier": nlp},
        {"strategy": "ce_probe", "train_acc": accuracy(lp, raw_train),
         "test_acc": accuracy(lp, raw_held), "training_passes": probe_cfg.epochs, "classifier": lp},
    ]


def run_encoder(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Encoder training with trace, manifest, classifier file and the FP/NLP/LP comparison."""
    out = cfg.resolve_output_dir(out_dir)
    train, held = _dataset(cfg)
    spec = cfg.model.spec(cfg.dataset.input_dim)
    model, trace = train_encoder(train, spec, cfg.encoder)
    io.write_trace(out / "trace.csv", trace)
    io.write_embeddings(out / "embeddings.csv", model.embed(train.inputs), train.labels)
    if model.prototypes is not None:
        io.write_weights(out / "classifier.csv", model.prototypes, model.bias)
    rows = compare_classifiers(model, train, held, cfg.probe)
    for row in rows:
        clf = row["classifier"]
        io.write_weights(out / f"classifier_{row['strategy']}.csv", clf.weights, clf.bias)
    table = [{k: v for k, v in row.items() if k != "classifier"} for row in rows]
    with open(out / "comparison.csv", "w") as fh:
        fh.write("strategy,train_acc,test_acc,training_passes\n")
        for row in table:
            fh.write(f"{row['strategy']},{io._fmt(row['train_acc'])},{io._fmt(row['test_acc'])},"
                     f"{row['training_passes']}\n")
    summary = _summary(trace, cfg.dataset.num_classes)
    summary["comparison"] = table
    summary["heldout_acc"] = table[0]["test_acc"]
    io.write_json(out / "summary.json", summary)
    io.write_manifest(out / "manifest.json", config_to_dict(cfg), cfg.encoder.seed,
                      {"run": trace.manifest})
    summary["output_dir"] = str(out)
    return summary


def _cell_name(tau, batch, seed) -> str:
    return f"tau={tau:g}_batch={batch}_seed={seed}"


def _cell_config(cfg: ExperimentConfig, tau, batch, seed) -> ExperimentConfig:
    if cfg.sweep.kind == "ufm":
        ufm = dataclasses.replace(cfg.ufm, tau=tau, per_class=batch // cfg.ufm.num_classes, seed=seed)
        return dataclasses.replace(cfg, mode="ufm", ufm=ufm)
    enc = dataclasses.replace(cfg.encoder, tau=tau, batch_size=batch, seed=seed)
    return dataclasses.replace(cfg, mode="encoder", encoder=enc)


def _run_cell(args):
    cfg, tau, batch, seed, cell_dir = args
    cell = _cell_config(cfg, tau, batch, seed)
    try:
        summary = run_ufm(cell, cell_dir) if cfg.sweep.kind == "ufm" else run_encoder(cell, cell_dir)
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        return {"status": f"failed: {type(exc).__name__}: {exc}"}
    return summary


def _aggregate_row(tau, batch, seed, summary) -> dict:
    if "report" not in summary:
        return {"tau": tau, "batch": batch, "seed": seed, "final_acc": "", "final_erank_inter": "",
                "iters_to_95": "", "status": summary.get("status", "failed")}
    return {
        "tau": tau, "batch": batch, "seed": seed,
        "final_acc": summary.get("heldout_acc", summary["report"]["train_accuracy"]),
        "final_erank_inter": summary["report"]["erank_inter"],
        "iters_to_95": summary["iters_to_95_erank_inter"],
        "status": "ok",
    }


def run_sweep(cfg: ExperimentConfig, out_dir=None) -> list:
    """One run per (tau, batch, seed) cell plus ``aggregate.csv``.

    ``final_acc`` is train accuracy for UFM cells and held-out accuracy of
    the fixed-prototype classifier for encoder cells.

    Cells whose ``summary.json`` already exists are not rerun, so an
    interrupted sweep resumes where it stopped. Failed cells are recorded
    with their error and retried on the next invocation.
    """
    out = cfg.resolve_output_dir(out_dir)
    sw = cfg.sweep
    cells = [(float(t), int(b), int(s)) for t in sw.taus for b in sw.batches for s in sw.seeds]
    results, todo = {}, []
    for cell in cells:
        cell_dir = out / "cells" / _cell_name(*cell)
        done = cell_dir / "summary.json"
        if done.is_file():
            results[cell] = json.loads(done.read_text())
            results[cell]["resumed"] = True
        else:
            todo.append((cfg, *cell, cell_dir))
    if sw.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=sw.workers) as pool:
            outcomes = list(pool.map(_run_cell, todo))
    else:
        outcomes = [_run_cell(job) for job in todo]
    for job, summary in zip(todo, outcomes):
        cell = job[1:4]
        results[cell] = summary
        if "report" not in summary:
            cell_dir = job[4]
            io.write_json(cell_dir / "failure.json", summary)
    rows = [_aggregate_row(*cell, results[cell]) for cell in cells]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "aggregate.csv", "w") as fh:
        fh.write(",".join(AGGREGATE_COLUMNS) + "\n")
        for row in rows:
            cells_txt = []
            for col in AGGREGATE_COLUMNS:
                v = row[col]
                if col == "tau":
                    cells_txt.append(repr(v))
                else:
                    cells_txt.append(io._fmt(v) if isinstance(v, float) else str(v))
            fh.write(",".join(cells_txt) + "\n")
    io.write_manifest(out / "manifest.json", config_to_dict(cfg), None,
                      {"cells": len(cells), "ran": len(todo)})
    return rows


def compute_metrics(embeddings_path, weights_path=None) -> dict:
    """NC report for an embeddings file, optionally against a weights file."""
    feats, labels = io.read_embeddings(embeddings_path)
    W = None
    if weights_path is not None:
        W, _ = io.read_weights(weights_path)
        K = W.shape[0]
        if W.shape[1] != feats.shape[1]:
            raise io.FormatError(f"{weights_path}: weight dimension {W.shape[1]} != embedding dimension {feats.shape[1]}")
        if labels.max() >= K:
            raise io.FormatError(f"{embeddings_path}: label {labels.max()} has no row in {weights_path}")
    else:
        K = int(labels.max()) + 1
    batch = EmbeddingBatch(feats, labels, K)
    if W is None:
        W = fixed_prototypes(batch).weights
        source = "class means (FP)"
    else:
        source = f"weights file {weights_path}"
    report = nc_report(batch, W).as_dict()
    report["prototypes"] = source
    report["num_samples"] = int(batch.size)
    report["num_classes"] = int(K)
    report["dim"] = int(batch.dim)
    return report


def emit_etf(K: int, d: int, seed: int, path) -> Path:
    """Write the K vertices of a random simplex ETF as an embeddings file (labels 0..K-1)."""
    frame = simplex_etf(K, d, RandomSource(seed))
    return io.write_embeddings(path, frame.directions, np.arange(K))
