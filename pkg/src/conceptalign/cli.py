"""Command-line pipeline: embed, cluster, validate, align, atlas, cfg, sanity.

Parameters can come from a JSON config file, from flags, or both; flags win.
Exit codes: 0 success, 2 validation error, 3 stage failure. The only
environment variable honored is the worker count for blocked pair loops.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import align as al
from . import analysis, baselines
from .cluster import discover_concepts
from .data import (
    load_clustering,
    load_embedding,
    load_feature_matrix,
    read_json,
    save_clustering,
    save_embedding,
    subsample,
    write_json,
)
from .embed import distance_fidelity_rmse, neighbor_embed
from .errors import StageFailure, ValidationError
from .pipeline import PipelineConfig, generate_synthetic_inputs, run_pipeline
from .validity import validity_report


def _cmd_synth(args):
    spec = read_json(args.spec)
    written = generate_synthetic_inputs(spec, args.out, seed=args.seed)
    for path in written:
        print(path)


def _cmd_embed(args):
    fm = load_feature_matrix(args.input)
    emb = neighbor_embed(
        fm,
        min(args.dim, fm.f, 50),
        n_neighbors=args.n_neighbors,
        min_dist=args.min_dist,
        epochs=args.epochs,
        seed=args.seed,
    )
    save_embedding(emb, args.out)
    print(args.out)


def _cmd_cluster(args):
    emb = load_embedding(args.embedding)
    disc = discover_concepts(
        emb,
        min_cluster_size=args.min_cluster_size,
        min_samples=args.min_samples,
        seed=args.seed,
    )
    save_clustering(disc.clustering, args.out, params=disc.params)
    print(f"{args.out}: {disc.clustering.concept_count} concepts, "
          f"noise rate {disc.clustering.noise_rate:.3f}")


def _cmd_validate(args):
    fm = load_feature_matrix(args.features)
    emb = load_embedding(args.embedding)
    clu = load_clustering(args.clustering)
    sample = subsample(fm.n, args.fraction, args.seed, stage="rmse-sample")
    rep = validity_report(emb, fm if args.id_space == "original" else emb,
                          clu.hard_labels, weighted=args.weighted,
                          id_space=args.id_space)
    doc = rep.to_json()
    doc["rmse"] = distance_fidelity_rmse(fm, emb, sample)
    doc["noise_rate"] = clu.noise_rate
    doc["concept_count"] = clu.concept_count
    write_json(args.out, doc)
    print(args.out)


def _cmd_align(args):
    p = load_clustering(args.p)
    q = load_clustering(args.q)
    sample = subsample(p.n, args.fraction, args.seed, stage="cba-sample")
    d = al.cross_clustering_distance(p, q, sample=sample)
    pm = al.concept_pair_matrix(p, q, sample=sample, d_cross=d)
    matches = analysis.hungarian_match(pm)
    report = al.AlignmentReport(
        cba=1.0 - d, d_cross=d, concept_pair_matrix=pm,
        matches=[(a, b, float(pm[a, b])) for a, b in matches],
        sample_size=int(sample.size), seed=args.seed)
    write_json(args.out, report.to_json())
    print(f"{args.out}: CBA {report.cba:.6f}")


def _load_category_map(path):
    table = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("class", "label"):
                continue
            if len(row) < 2:
                raise ValidationError(f"category map row needs two columns: {row}")
            table[row[0].strip()] = row[1].strip()
    return table


def _cmd_atlas(args):
    clu = load_clustering(args.clustering)
    sample = subsample(clu.n, args.fraction, args.seed, stage="atlas-sample")
    pm = al.concept_pair_matrix(clu, clu, sample=sample, check_upper_bound=False)
    categories = None
    if args.categories and args.features:
        fm = load_feature_matrix(args.features)
        table = _load_category_map(args.categories)
        point_cats = [table.get(str(int(lbl)), "unknown") for lbl in fm.meta.class_labels]
        categories = analysis.concept_categories(clu.hard_labels, point_cats)
    members = [np.flatnonzero(clu.hard_labels == c) for c in range(clu.concept_count)]
    atlas = analysis.concept_atlas(pm, categories=categories, member_indices=members,
                                   seed=args.seed)
    with open(args.out, "w", newline="") as fh:
        csv.writer(fh).writerows(atlas.to_csv_rows())
    print(args.out)


def _cmd_cfg(args):
    clusterings = [load_clustering(p) for p in args.clusterings]
    assigns = [analysis.assign_tokens(c, args.assignment_threshold) for c in clusterings]
    transitions = [
        analysis.transition_matrix(assigns[i], assigns[i + 1],
                                   clusterings[i].concept_count,
                                   clusterings[i + 1].concept_count)
        for i in range(len(assigns) - 1)
    ]
    layer, concept = (int(v) for v in args.target.split(","))
    graph = analysis.build_cfg((layer, concept), transitions,
                               contribution_threshold=args.contribution_threshold,
                               assignment_threshold=args.assignment_threshold)
    write_json(args.out, graph.to_json())
    print(f"{args.out}: {len(graph.nodes)} nodes, {len(graph.edges)} edges")


def _cmd_sanity(args):
    clusterings = [load_clustering(p) for p in args.clusterings]
    sample = None
    if args.fraction < 1.0:
        sample = subsample(clusterings[0].n, args.fraction, args.seed, stage="cba-sample")
    result = baselines.sanity_check(clusterings, sample=sample, method=args.method)
    write_json(args.out, result.to_json())
    print(f"{args.out}: neighbor ratio {result.neighbor_ratio:.3f}")


def _cmd_pipeline(args):
    doc = read_json(args.config) if args.config else {}
    if args.inputs:
        doc["inputs"] = args.inputs
    for flag in ("output", "embed_dim", "n_neighbors", "min_dist", "epochs",
                 "min_cluster_size", "min_samples", "subsample_fraction"):
        value = getattr(args, flag)
        if value is not None:
            doc[flag] = value
    if args.seeds:
        doc["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.no_sanity:
        doc["run_sanity"] = False
    cfg = PipelineConfig.from_dict(doc)
    run = run_pipeline(cfg)
    print(json.dumps({"output": cfg.output,
                      "representations": len(run["representations"]),
                      "pairs": len(run["pairs"])}))


def build_parser():
    parser = argparse.ArgumentParser(prog="conceptalign",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic feature matrices")
    p.add_argument("--spec", required=True, help="generator spec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("embed", help="neighbor-embed a feature matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--n-neighbors", type=int, default=30)
    p.add_argument("--min-dist", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("cluster", help="density-cluster an embedding")
    p.add_argument("--embedding", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-cluster-size", type=int, default=50)
    p.add_argument("--min-samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("validate", help="clustering quality diagnostics")
    p.add_argument("--features", required=True)
    p.add_argument("--embedding", required=True)
    p.add_argument("--clustering", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--id-space", choices=("original", "embedded"), default="original")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("align", help="CBA between two clusterings")
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("atlas", help="2-D atlas of one clustering's concepts")
    p.add_argument("--clustering", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="needed with --categories for majority votes")
    p.add_argument("--categories", help="two-column CSV: class label, category")
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_atlas)

    p = sub.add_parser("cfg", help="concept formation graph for a target concept")
    p.add_argument("--clusterings", nargs="+", required=True,
                   help="clustering dirs in layer order")
    p.add_argument("--target", required=True, help="layer,concept (1-based layer)")
    p.add_argument("--assignment-threshold", type=float, default=0.5)
    p.add_argument("--contribution-threshold", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cfg)

    p = sub.add_parser("sanity", help="neighboring-layer alignment check")
    p.add_argument("--clusterings", nargs="+", required=True,
                   help="clustering dirs in layer order")
    p.add_argument("--method", default="nlmcd")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sanity)

    p = sub.add_parser("pipeline", help="full run over a set of representations")
    p.add_argument("--config", help="pipeline config JSON; flags override it")
    p.add_argument("--inputs", nargs="*", help="feature-matrix dirs")
    p.add_argument("--output")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--n-neighbors", dest="n_neighbors", type=int)
    p.add_argument("--min-dist", dest="min_dist", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--min-cluster-size", dest="min_cluster_size", type=int)
    p.add_argument("--min-samples", dest="min_samples", type=int)
    p.add_argument("--subsample-fraction", dest="subsample_fraction", type=float)
    p.add_argument("--seeds", help="comma-separated, e.g. 0,1")
    p.add_argument("--no-sanity", action="store_true")
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
