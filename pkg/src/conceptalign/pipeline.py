"""Pipeline orchestration: embed, cluster, validate, align, report.

Every expensive stage is cached under the run directory by a content hash
of its inputs and parameters, and results are always read back from the
cached artifact (not the in-memory object), so a rerun with the same
configuration reproduces every report byte for byte.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import align as al
from . import analysis, baselines, synth, validity
from .cluster import discover_concepts
from .data import (
    RunManifest,
    content_hash,
    load_clustering,
    load_embedding,
    load_feature_matrix,
    save_clustering,
    save_embedding,
    save_feature_matrix,
    subsample,
    write_json,
)
from .embed import distance_fidelity_rmse, neighbor_embed
from .errors import StageFailure, ValidationError

RMSE_SAMPLE_CAP = 2000


@dataclass
class PipelineConfig:
    """Inputs, stage parameters and seeds of one pipeline run."""

    inputs: list
    output: str
    embed_dim: int = 50
    n_neighbors: int = 30
    min_dist: float = 0.01
    epochs: int = 200
    min_cluster_size: int = 50
    min_samples: int = 20
    seeds: tuple = (0, 1)
    subsample_fraction: float = 0.2
    dbcv_weighted: bool = False
    id_space: str = "original"
    run_sanity: bool = True

    def validate(self):
        if not self.inputs:
            raise ValidationError("pipeline needs at least one input")
        for p in self.inputs:
            if not (Path(p) / "manifest.json").is_file():
                raise ValidationError(f"missing input: {p}")
        if len(self.seeds) < 2:
            raise ValidationError("need two seeds (main run + robustness run)")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValidationError("subsample fraction must lie in (0, 1]")

    def params(self):
        doc = asdict(self)
        doc["seeds"] = list(self.seeds)
        return doc

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.seeds = tuple(cfg.seeds)
        return cfg


def _stage(name, fn):
    try:
        return fn()
    except ValidationError:
        raise
    except Exception as exc:
        raise StageFailure(f"stage '{name}' failed: {exc}") from exc


def _cached(out_dir, stage, key, build, save, load):
    """Build-or-reuse a stage artifact; always return the on-disk version."""
    cache = Path(out_dir) / "cache" / f"{stage}-{key[:16]}"
    marker = cache / "stage.json"
    if not marker.is_file():
        obj = build()
        save(obj, cache)
        write_json(marker, {"stage": stage, "key": key})
    return load(cache)


def _embed_one(fm, cfg, seed, out_dir, input_hash):
    dim = min(cfg.embed_dim, fm.f, 50)
    params = {
        "dim": dim,
        "n_neighbors": min(cfg.n_neighbors, fm.n - 1),
        "min_dist": cfg.min_dist,
        "epochs": cfg.epochs,
        "seed": seed,
    }
    key = content_hash(repr(sorted(params.items())).encode(), input_hash.encode())
    return _cached(
        out_dir, "embed", key,
        lambda: neighbor_embed(fm, **params),
        lambda e, d: save_embedding(e, d),
        load_embedding,
    ), key


def _cluster_one(embedding, cfg, seed, out_dir, embed_key):
    params = {
        "min_cluster_size": cfg.min_cluster_size,
        "min_samples": cfg.min_samples,
        "seed": seed,
    }
    key = content_hash(repr(sorted(params.items())).encode(), embed_key.encode())

    def build():
        return discover_concepts(embedding, **params).clustering

    return _cached(
        out_dir, "cluster", key,
        build,
        lambda c, d: save_clustering(c, d, params=params),
        load_clustering,
    ), key


def _location_labels(meta):
    ok = (meta.grid_rows >= 0) & (meta.grid_cols >= 0)
    if not ok.all():
        return None
    width = int(meta.grid_cols.max()) + 1
    return meta.grid_rows.astype(np.int64) * width + meta.grid_cols.astype(np.int64)


def _label_alignment(clustering, labels, sample):
    if labels is None or (np.asarray(labels) < 0).any():
        return None
    return al.cba(clustering, al.crisp_to_membership(labels), sample=sample)


def run_pipeline(cfg):
    """Execute the full pipeline and return the run report dictionary."""
    cfg.validate()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)

    matrices = [_stage("load", lambda p=p: load_feature_matrix(p)) for p in cfg.inputs]
    n = matrices[0].n
    if any(m.n != n for m in matrices):
        raise ValidationError("all inputs must cover the same points (equal n)")
    input_hashes = [content_hash(Path(p) / "data.bin") for p in cfg.inputs]

    sample = subsample(n, cfg.subsample_fraction, cfg.seeds[0], stage="cba-sample")
    rmse_sample = sample[:RMSE_SAMPLE_CAP]

    reps = []
    clusterings = []
    for i, (fm, ih) in enumerate(zip(matrices, input_hashes)):
        emb, ekey = _stage(f"embed[{i}]", lambda: _embed_one(fm, cfg, cfg.seeds[0], out, ih))
        clu, ckey = _stage(f"cluster[{i}]", lambda: _cluster_one(emb, cfg, cfg.seeds[0], out, ekey))
        if clu.concept_count == 0 or clu.noise_rate >= 1.0:
            raise StageFailure(f"stage 'cluster[{i}]' failed: clustering is all noise")

        rmse = _stage(f"validate[{i}]",
                      lambda: distance_fidelity_rmse(fm, emb, rmse_sample))
        rep = _stage(f"validate[{i}]",
                     lambda: validity.validity_report(
                         emb, fm if cfg.id_space == "original" else emb,
                         clu.hard_labels, weighted=cfg.dbcv_weighted,
                         id_space=cfg.id_space))

        emb2, ekey2 = _stage(f"embed-alt[{i}]", lambda: _embed_one(fm, cfg, cfg.seeds[1], out, ih))
        clu2, _ = _stage(f"cluster-alt[{i}]", lambda: _cluster_one(emb2, cfg, cfg.seeds[1], out, ekey2))
        robust = _stage(f"robustness[{i}]", lambda: al.robustness(clu, clu2, sample=sample))

        class_al = _stage(f"labels[{i}]",
                          lambda: _label_alignment(clu, fm.meta.class_labels
                                                   if (fm.meta.class_labels >= 0).all() else None,
                                                   sample))
        loc_al = _stage(f"labels[{i}]",
                        lambda: _label_alignment(clu, _location_labels(fm.meta), sample))

        rep_dir = out / f"rep{i:02d}"
        rep_dir.mkdir(exist_ok=True)
        doc = rep.to_json()
        doc.update({
            "rmse": rmse,
            "robustness_cba": robust,
            "noise_rate": clu.noise_rate,
            "concept_count": clu.concept_count,
            "class_label_alignment": class_al,
            "token_location_alignment": loc_al,
            "input": str(cfg.inputs[i]),
            "model": fm.source.model,
            "layer_index": fm.source.layer_index,
            "token_kind": fm.source.token_kind,
            "embed_cache": ekey[:16],
            "cluster_cache": ckey[:16],
        })
        write_json(rep_dir / "validity.json", doc)
        clusterings.append(clu)
        reps.append(doc)

    pairs = []
    cba_matrix = np.eye(len(matrices))
    for i in range(len(matrices)):
        for j in range(i + 1, len(matrices)):
            def build_pair(i=i, j=j):
                d = al.cross_clustering_distance(clusterings[i], clusterings[j], sample=sample)
                pm = al.concept_pair_matrix(clusterings[i], clusterings[j], sample=sample,
                                            d_cross=d)
                matches = analysis.hungarian_match(pm)
                report = al.AlignmentReport(
                    cba=1.0 - d, d_cross=d, concept_pair_matrix=pm,
                    matches=[(a, b, float(pm[a, b])) for a, b in matches],
                    sample_size=int(sample.size), seed=cfg.seeds[0])
                return report

            report = _stage(f"align[{i},{j}]", build_pair)
            cba_matrix[i, j] = cba_matrix[j, i] = report.cba
            pair_path = out / f"alignment-{i:02d}-{j:02d}.json"
            write_json(pair_path, report.to_json())
            pairs.append({"i": i, "j": j, "cba": report.cba, "path": pair_path.name})

    heatmaps = _write_heatmaps(out, matrices, cba_matrix)
    sanity = _sanity_tables(out, cfg, matrices, clusterings, sample) if cfg.run_sanity else {}

    manifest = RunManifest(params=cfg.params(),
                           input_hashes={str(p): h for p, h in zip(cfg.inputs, input_hashes)})
    run_doc = {
        "schema_version": 1,
        "kind": "run",
        "sample": {"fraction": cfg.subsample_fraction, "seed": cfg.seeds[0],
                   "size": int(sample.size), "rmse_sample_size": int(rmse_sample.size)},
        "representations": reps,
        "pairs": pairs,
        "heatmaps": heatmaps,
        "sanity": sanity,
        "manifest": manifest.to_json(),
    }
    write_json(out / "run.json", run_doc)
    return run_doc


def _write_heatmaps(out, matrices, cba_matrix):
    groups = {}
    for idx, m in enumerate(matrices):
        groups.setdefault(m.source.model, []).append(idx)
    written = {}
    for model, idxs in groups.items():
        if len(idxs) < 2:
            continue
        name = f"heatmap-{model}.csv".replace("/", "_")
        with open(out / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            layers = [matrices[i].source.layer_index for i in idxs]
            writer.writerow(["layer"] + [str(l) for l in layers])
            for i, l in zip(idxs, layers):
                writer.writerow([str(l)] + [repr(float(cba_matrix[i, j])) for j in idxs])
        written[model] = name
    return written


def _sanity_tables(out, cfg, matrices, clusterings, sample):
    groups = {}
    for idx, m in enumerate(matrices):
        groups.setdefault(m.source.model, []).append(idx)
    table = {}
    for model, idxs in groups.items():
        if len(idxs) < 3:
            continue
        idxs = sorted(idxs, key=lambda i: matrices[i].source.layer_index)
        nlmcd = [clusterings[i] for i in idxs]
        pca = [_stage(f"sanity-pca[{i}]",
                      lambda i=i: baselines.pca_concepts(matrices[i], None))
               for i in idxs]
        kmeans = [_stage(f"sanity-kmeans[{i}]",
                         lambda i=i, k=clusterings[i].concept_count:
                         baselines.kmeans_concepts(matrices[i], k, seed=cfg.seeds[0]))
                  for i in idxs]
        table[model] = {}
        for method, parts in (("nlmcd", nlmcd), ("pca", pca), ("kmeans", kmeans)):
            result = _stage(f"sanity[{model}/{method}]",
                            lambda parts=parts, method=method:
                            baselines.sanity_check(parts, sample=sample, method=method))
            table[model][method] = result.neighbor_ratio
    if table:
        write_json(out / "sanity.json", {"schema_version": 1, "kind": "sanity", "table": table})
    return table


def generate_synthetic_inputs(spec, out_dir, seed=0):
    """Materialize a generator spec as feature-matrix directories."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, fm in enumerate(synth.generate_synthetic(spec, seed=seed)):
        d = out / (f"layer{fm.source.layer_index:02d}" if spec.get("kind") == "chain"
                   else f"matrix{i:02d}")
        save_feature_matrix(fm, d)
        written.append(str(d))
    return written
