"""Stage functions shared by the CLI subcommands and the full pipeline run.

Every stage reads its inputs from, and writes its artifacts to, one output
directory. ``run_pipeline`` chains them and records a manifest with stage
timings, seeds and SHA-256 hashes of every artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import attnlayer, discovery, embed, manifold, propbench, rotary, synthgen
from .config import PipelineConfig
from .graph import CausalGraph
from .numerics import read_csv, write_csv

log = logging.getLogger(__name__)

STAGES = ("synth", "discover", "embed", "encode", "attend", "validate")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_synth(cfg: PipelineConfig, out: Path) -> tuple[synthgen.WeightedDag, np.ndarray]:
    s = cfg.synth
    dag, X = synthgen.make_replica(s.M, s.m_attach, s.N, cfg.seed, s.hidden, s.weight_lo, s.weight_hi)
    write_csv(out / "dag_true.csv", dag.adjacency)
    write_csv(out / "data.csv", X)
    write_json(out / "meta.json", {"seed": cfg.seed, **dataclasses.asdict(s)})
    return dag, X


def run_discover(cfg: PipelineConfig, X: np.ndarray, out: Path, truth=None) -> CausalGraph:
    result = discovery.augmented_lagrangian_fit(X, cfg.discovery, seed=cfg.seed)
    A = result.model.adjacency
    write_csv(out / "A_raw.csv", A)
    metrics = result.metadata()
    try:
        graph = discovery.threshold_graph(A, cfg.discovery.tau)
    except Exception:
        write_json(out / "discovery_metrics.json", metrics)
        raise
    write_csv(out / "A_thresholded.csv", graph.adjacency)
    metrics["edges"] = len(graph.edges)
    if truth is not None:
        metrics["shd"] = discovery.shd(graph, truth)
    write_json(out / "discovery_metrics.json", metrics)
    return graph


def run_embed(cfg: PipelineConfig, graph: CausalGraph, out: Path) -> embed.HyperboloidEmbedding:
    emb = embed.fit_embeddings(graph, cfg.embedding)
    write_csv(out / "embedding_hyperboloid.csv", emb.points)
    write_csv(out / "embedding_poincare.csv", emb.poincare())
    write_csv(out / "pagerank.csv", emb.pagerank)
    write_json(out / "embed_metrics.json", {
        "final_loss": emb.loss_history[-1] if emb.loss_history else None,
        "loss_curve": emb.loss_history,
        "specificity": manifold.specificity(emb.points).tolist(),
    })
    return emb


def run_encode(cfg: PipelineConfig, poincare: np.ndarray, out: Path) -> np.ndarray:
    angles = rotary.angles_from_poincare(poincare, cfg.angle_scale)
    write_csv(out / "rotary_angles.csv", angles)
    return angles


def run_attend(cfg: PipelineConfig, X: np.ndarray, angles: np.ndarray, out: Path) -> np.ndarray:
    a = cfg.attention
    if angles.shape != (X.shape[1], a.D // 2):
        raise ValueError(f"angles {angles.shape} do not match {X.shape[1]} features of width {a.D}")
    book = attnlayer.Codebook.from_data(X, a.B, a.D, seed=(cfg.seed, 3))
    W_q, W_k, W_v = attnlayer.init_projections(a.D, seed=(cfg.seed, 4))
    pooled = np.empty((X.shape[0], a.D))
    attn_sum = np.zeros((X.shape[1], X.shape[1]))
    for i, row in enumerate(X):
        outputs, attn = attnlayer.attention_layer(attnlayer.contextual_embed(book, row), angles,
                                                  W_q, W_k, W_v, scaled=a.scaled)
        pooled[i] = attnlayer.aggregate(outputs, a.aggregation)
        attn_sum += attn
    # the attention matrix artifact is the mean over observations
    write_csv(out / "attention_matrix.csv", attn_sum / X.shape[0])
    write_csv(out / "observation_embeddings.csv", pooled)
    return pooled


def run_validate(cfg: PipelineConfig, out: Path) -> dict[str, bool]:
    b = cfg.bench
    n = b.grid_size
    reports = [
        propbench.attenuation_surface(cfg.seed, np.linspace(*b.distance_range, n),
                                      np.linspace(*b.norm_range, n), b.D),
        propbench.generality_limit_sweep(cfg.seed, np.linspace(0.0, 2 * b.distance_range[1], b.limit_points), b.D),
        propbench.collinear_monotonicity_check(cfg.seed, 1.0, b.collinear_trials, b.D),
        propbench.robustness_report(cfg.seed, b.robustness_sigmas, range(1, b.robustness_max_N + 1),
                                    b.robustness_T, b.robustness_eps, D=b.D),
        propbench.unbiasedness_check(b.unbiasedness_sigma, b.unbiasedness_sigma, b.unbiasedness_trials,
                                     cfg.seed, b.D),
        propbench.accuracy_surface(seed=cfg.seed),
        propbench.distinguishability_check(b.distinguish_trials, b.distinguish_delta_std,
                                           propbench.NoiseModel.isotropic(b.D // 2, b.distinguish_noise_std),
                                           cfg.seed, b.D, resamples=b.bootstrap_resamples),
    ]
    anti = propbench.collinear_monotonicity_check(cfg.seed, -1.0, b.collinear_trials, b.D)
    anti.name = "collinear_monotonicity_negative"
    reports.insert(3, anti)
    for r in reports:
        r.write(out)
    return {r.name: r.passed for r in reports}


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(cfg: PipelineConfig, out=None, skip=(), data_path=None) -> dict:
    """Run every stage not in ``skip``; returns the manifest.

    On a stage error the manifest written so far is kept and ``StageError``
    names the failing stage.
    """
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    skip = set(skip)
    unknown = skip - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stage(s): {', '.join(sorted(unknown))}")
    if "synth" in skip and data_path is None:
        raise ValueError("skipping synth requires a data file")
    manifest = {"seed": cfg.seed, "stages": {}, "files": {}}
    state: dict = {"truth": None}

    def stage(name, fn):
        if name in skip:
            manifest["stages"][name] = {"skipped": True}
            return None
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            manifest["stages"][name] = {"failed": str(exc)}
            _finish(manifest, out)
            raise StageError(name, exc) from exc
        manifest["stages"][name] = {"seconds": round(time.perf_counter() - start, 3)}
        log.info("stage %s done in %.1fs", name, manifest["stages"][name]["seconds"])
        return result

    synth = stage("synth", lambda: run_synth(cfg, out))
    if synth is not None:
        state["truth"], X = synth
    else:
        X = read_csv(data_path)
    graph = stage("discover", lambda: run_discover(cfg, X, out, state["truth"]))
    if graph is None:
        graph = CausalGraph.from_adjacency(read_csv(out / "A_thresholded.csv"))
    emb = stage("embed", lambda: run_embed(cfg, graph, out))
    poincare = emb.poincare() if emb is not None else read_csv(out / "embedding_poincare.csv")
    angles = stage("encode", lambda: run_encode(cfg, poincare, out))
    if angles is None:
        angles = read_csv(out / "rotary_angles.csv")
    stage("attend", lambda: run_attend(cfg, X, angles, out))
    verdicts = stage("validate", lambda: run_validate(cfg, out))
    if verdicts is not None:
        manifest["verdicts"] = verdicts
    _finish(manifest, out)
    return manifest


def _finish(manifest: dict, out: Path) -> None:
    manifest["files"] = {p.name: sha256(p) for p in sorted(out.iterdir())
                         if p.is_file() and p.name != "manifest.json"}
    write_json(out / "manifest.json", manifest)
