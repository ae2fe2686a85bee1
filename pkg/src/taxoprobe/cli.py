"""Command-line front end: every pipeline stage as a reproducible subcommand.

Each command checks its input files up front (exit 2 when one is missing),
runs, and on success writes a JSON run manifest beside its primary output
recording argv, the effective configuration and its hash, input and output
file hashes, the seed, the tool version and timestamps. A command that
produces no files prints the manifest to stdout instead. Partial outputs are
removed when a command fails.

Heavy imports happen inside the handlers so the thread cap (--threads,
default 1, env TAXOPROBE_THREADS as fallback) is exported before the numeric
libraries initialize their pools; single-threaded math keeps outputs
bit-reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone

from . import __version__
from .ioutil import atomic_write_text, sha256_bytes, sha256_file

THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)
SPLIT_CHOICES = ("train", "valid", "test", "all")
# mirrors analysis.FACTOR_NAMES (kept inline so parser construction stays
# import-light); test_cli cross-checks the two
FACTOR_CHOICES = (
    "depth_percent",
    "n_subclasses",
    "frequency",
    "n_senses",
    "sense_rank",
    "n_siblings",
    "n_synonyms",
    "pair-distance",
    "all",
)
PROBE_INT_FLAGS = ("proj_dim", "hidden_dim", "batch_size", "max_epochs", "patience")
PROBE_FLOAT_FLAGS = ("dropout", "l2_lambda", "positive_weight", "learning_rate")


class UsageError(Exception):
    """Bad invocation or bad config input: reported on stderr, exit status 2."""


# ---------------------------------------------------------------------------
# config files: flat `key = value` lines, a TOML-compatible subset


def _config_value(path: str, lineno: int, raw: str):
    if len(raw) >= 2 and raw[0] == '"' and raw[-1] == '"':
        return raw[1:-1]
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    raise UsageError(f"{path}:{lineno}: bad config value {raw!r}")


def read_config_file(path: str) -> dict:
    """Parse `key = value` pairs; # starts a comment, blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"{path}:{lineno}: expected key = value")
            out[key.strip()] = _config_value(path, lineno, value.strip())
    return out


def effective_probe_config(args):
    """Defaults, overridden by the config file, overridden by explicit flags."""
    from .probe import ProbeConfig

    merged: dict = {}
    if getattr(args, "config", None):
        file_cfg = read_config_file(args.config)
        known = set(ProbeConfig.__dataclass_fields__)
        for key in file_cfg:
            if key not in known:
                raise UsageError(f"unknown config key {key!r} in {args.config}")
        merged.update(file_cfg)
    for name in PROBE_INT_FLAGS + PROBE_FLOAT_FLAGS:
        value = getattr(args, name)
        if value is not None:
            merged[name] = value
    for name in PROBE_INT_FLAGS + ("input_dim",):
        value = merged.get(name)
        if isinstance(value, float):
            if not value.is_integer():
                raise UsageError(f"config value for {name} must be an integer, got {value}")
            merged[name] = int(value)
    for name in PROBE_FLOAT_FLAGS:
        if name in merged:
            merged[name] = float(merged[name])
    return ProbeConfig(**merged)


# ---------------------------------------------------------------------------
# small shared helpers


def _tax_files(directory: str) -> list:
    return [os.path.join(directory, "synsets.tsv"), os.path.join(directory, "edges.tsv")]


def _load_tax(directory: str):
    from .taxonomy import load_taxonomy

    synsets, edges = _tax_files(directory)
    return load_taxonomy(synsets, edges)


def _read_node_list(path: str) -> list:
    with open(path, encoding="utf-8") as fh:
        nodes = [line.strip() for line in fh if line.strip()]
    if not nodes:
        raise UsageError(f"no node ids in {path}")
    return nodes


def _write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _layer_arg(raw: str):
    return None if raw == "all" else int(raw)


def _split_examples(args):
    from .sampler import read_examples

    examples = read_examples(args.examples)
    if args.split != "all":
        examples = [e for e in examples if e.split == args.split]
    if not examples:
        raise UsageError(f"no examples left for split {args.split!r}")
    return examples


def _predictions(model, store, examples, layer):
    """Probe outputs aligned with the example list, same key scheme as eval."""
    from .embeddings import matrix_for_keys
    from .probe import forward

    x = matrix_for_keys(store, [f"{e.x}#{e.x_sentence}" for e in examples], layer)
    y = matrix_for_keys(store, [f"{e.y}#{e.y_sentence}" for e in examples], layer)
    return forward(model, x, y)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# command handlers: _io_* declares files, _run_* does the work and returns
# the effective parameter dict recorded in the manifest


def _io_import(args):
    return {
        "inputs": [args.synsets, args.edges],
        "outputs": _tax_files(args.out) + [os.path.join(args.out, "summary.json")],
        "manifest": os.path.join(args.out, "run.manifest.json"),
        "dirs": [args.out],
    }


def _run_import(args):
    from .taxonomy import load_taxonomy

    graph = load_taxonomy(args.synsets, args.edges, args.virtual_root)
    rows = []
    for sid in graph.nodes():
        syn = graph.synsets[sid]
        rows.append(f"{sid}\t{','.join(syn.lemmas)}\t{syn.gloss}")
    syn_path, edge_path = _tax_files(args.out)
    atomic_write_text(syn_path, "".join(r + "\n" for r in rows))
    atomic_write_text(edge_path, "".join(f"{c}\t{p}\n" for c, p in graph.edges))
    summary = {
        "n_synsets": len(graph.synsets),
        "n_edges": len(graph.edges),
        "root": graph.root,
        "virtual_root": graph.virtual_root,
    }
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(
        f"imported {summary['n_synsets']} synsets, {summary['n_edges']} edges, "
        f"root {graph.root} -> {args.out}"
    )
    return {"virtual_root": args.virtual_root}


def _io_sample(args):
    return {
        "inputs": _tax_files(args.taxonomy) + [args.glosses],
        "outputs": [args.out],
        "manifest": f"{args.out}.manifest.json",
    }


def _run_sample(args):
    from .sampler import generate_examples, make_splits, read_glosses, write_examples

    graph = _load_tax(args.taxonomy)
    occurrences = read_glosses(args.glosses)
    splits = make_splits(graph, args.seed)
    examples, _ = generate_examples(
        graph, splits, occurrences, args.seed, rounds=args.rounds, max_triplets=args.max_triplets
    )
    write_examples(args.out, examples)
    counts = [sum(1 for e in examples if e.split == s) for s in ("train", "valid", "test")]
    print(
        f"wrote {len(examples)} examples "
        f"(train/valid/test = {counts[0]}/{counts[1]}/{counts[2]}) -> {args.out}"
    )
    return {"rounds": args.rounds, "max_triplets": args.max_triplets}


def _io_emb(args):
    inputs = [args.keys] if args.mode == "random" else _tax_files(args.taxonomy)
    return {"inputs": inputs, "outputs": [args.out], "manifest": f"{args.out}.manifest.json"}


def _run_emb(args):
    from .embeddings import generate_planted, generate_random, write_store

    if args.mode == "random":
        with open(args.keys, encoding="utf-8") as fh:
            keys = [line.strip() for line in fh if line.strip()]
        store = generate_random(keys, args.dim, args.seed)
        params = {"mode": "random", "dim": args.dim}
    else:
        graph = _load_tax(args.taxonomy)
        store = generate_planted(
            graph,
            dim=args.dim,
            noise=args.sigma,
            layers=args.layers,
            seed=args.seed,
            occurrences=args.occurrences,
            noise_growth=args.noise_growth,
        )
        params = {
            "mode": "planted",
            "dim": args.dim,
            "sigma": args.sigma,
            "layers": args.layers,
            "occurrences": args.occurrences,
            "noise_growth": args.noise_growth,
        }
    write_store(store, args.out)
    print(
        f"wrote {len(store.keys)} records x {store.layer_count} layers "
        f"x dim {store.dim_per_layer} -> {args.out}"
    )
    return params


def _io_train(args):
    inputs = [args.emb, args.examples]
    if args.config:
        inputs.append(args.config)
    return {"inputs": inputs, "outputs": [args.out], "manifest": f"{args.out}.manifest.json"}


def _run_train(args):
    from .embeddings import read_store
    from .probe import save_model, train_probe
    from .sampler import read_examples

    cfg = effective_probe_config(args)
    store = read_store(args.emb)
    examples = read_examples(args.examples)
    result = train_probe(cfg, store, examples, args.seed, layer=args.layer)
    save_model(result.model, args.out)
    history = result.history
    print(
        f"trained {history.n_epochs} epochs, best epoch {history.best_epoch}, "
        f"val f1 {history.epoch_val_f1[history.best_epoch]:.4f} -> {args.out}"
    )
    return {**asdict(cfg), "layer": args.layer}


def _io_eval(args):
    return {
        "inputs": [args.model, args.emb, args.examples],
        "outputs": [args.json],
        "manifest": f"{args.json}.manifest.json",
    }


def _run_eval(args):
    from .embeddings import read_store
    from .probe import evaluate, load_model

    model = load_model(args.model)
    store = read_store(args.emb)
    examples = _split_examples(args)
    report = evaluate(model, store, examples, layer=args.layer, seed=args.seed)
    _write_json(args.json, {**report.to_dict(), "split": args.split, "layer": args.layer})
    print(
        f"split {args.split}: f1 {report.f1:.4f} acc {report.accuracy:.4f} "
        f"n {report.n_examples} -> {args.json}"
    )
    return {"split": args.split, "layer": args.layer, "seed": args.seed}


def _io_score(args):
    return {
        "inputs": [args.model, args.emb, args.nodes],
        "outputs": [args.out],
        "manifest": f"{args.out}.manifest.json",
    }


def _run_score(args):
    from .embeddings import read_store
    from .probe import load_model
    from .reconstruction import score_all_pairs, write_scores

    nodes = _read_node_list(args.nodes)
    scores = score_all_pairs(load_model(args.model), read_store(args.emb), nodes, layer=args.layer)
    write_scores(scores, args.out)
    print(f"scored {len(nodes)} nodes -> {args.out}")
    return {"layer": args.layer, "n_nodes": len(nodes)}


def _io_reconstruct(args):
    outputs = [args.out_tree] + ([args.out_dot] if args.out_dot else [])
    return {
        "inputs": [args.scores],
        "outputs": outputs,
        "manifest": f"{args.out_tree}.manifest.json",
    }


def _run_reconstruct(args):
    from .reconstruction import (
        mcm_distance,
        read_scores,
        render_dot,
        solve_msa,
        tim_distance,
        write_tree,
    )

    scores = read_scores(args.scores)
    to_distance = tim_distance if args.metric == "tim" else mcm_distance
    solution = solve_msa(to_distance(scores, args.threshold), scores)
    write_tree(solution, args.out_tree)
    if args.out_dot:
        atomic_write_text(args.out_dot, render_dot(solution))
    print(
        f"root {solution.root}, {len(solution.edges)} edges, "
        f"cost {solution.objective_cost:.4f} -> {args.out_tree}"
    )
    return {"metric": args.metric, "threshold": args.threshold}


def _io_eval_ted(args):
    inputs = [args.pred] + _tax_files(args.truth)
    if args.nodes:
        inputs.append(args.nodes)
    return {"inputs": inputs, "outputs": [args.json], "manifest": f"{args.json}.manifest.json"}


def _run_eval_ted(args):
    from .evaluation import canonicalize, evaluate_reconstruction
    from .reconstruction import ArborescenceSolution, read_tree

    graph = _load_tax(args.truth)
    edges = read_tree(args.pred)
    nodes = _read_node_list(args.nodes) if args.nodes else graph.nodes()
    root = canonicalize(edges, nodes=nodes).root
    report = evaluate_reconstruction(ArborescenceSolution(root, edges, 0.0, 0.0), graph, nodes)
    payload = report.as_dict()
    _write_json(args.json, payload)
    print(
        f"ted {payload['ted']}, correct parents {report.correct_parent_rate:.4f}, "
        f"ancestor p/r {report.ancestor_precision:.4f}/{report.ancestor_recall:.4f} "
        f"-> {args.json}"
    )
    return {"n_nodes": len(nodes)}


def _io_report_factors(args):
    inputs = [args.model, args.emb, args.examples] + _tax_files(args.taxonomy)
    if args.frequencies:
        inputs.append(args.frequencies)
    outputs = [args.json] + ([args.csv] if args.csv else [])
    return {"inputs": inputs, "outputs": outputs, "manifest": f"{args.json}.manifest.json"}


def _curves_csv(curves: dict) -> str:
    lines = ["factor,bin_lo,bin_hi,count,included,mean,ci_lo,ci_hi"]
    for name, curve in curves.items():
        for included, stats in ((1, curve["bins"]), (0, curve["excluded"])):
            for s in stats:
                cells = [name, s["lo"], s["hi"], s["count"], included, s["mean"], s["ci_lo"], s["ci_hi"]]
                lines.append(",".join("" if c is None else str(c) for c in cells))
    return "".join(line + "\n" for line in lines)


def _run_report_factors(args):
    from .analysis import (
        FACTOR_NAMES,
        bin_by_factor,
        compute_factors,
        concept_f1,
        pair_distance_curve,
        read_frequencies,
    )
    from .embeddings import read_store
    from .probe import load_model

    graph = _load_tax(args.taxonomy)
    model = load_model(args.model)
    store = read_store(args.emb)
    examples = _split_examples(args)
    predictions = _predictions(model, store, examples, args.layer)

    payload: dict = {"factors": {}, "n_examples": len(examples), "split": args.split}
    if args.factor != "pair-distance":
        frequencies = read_frequencies(args.frequencies) if args.frequencies else None
        factors = compute_factors(graph, frequencies)
        f1_map = concept_f1(predictions, examples)
        wanted = FACTOR_NAMES if args.factor == "all" else (args.factor,)
        for name in wanted:
            curve = bin_by_factor(
                f1_map, factors, name, bins=args.bins, min_count=args.min_count, seed=args.seed
            )
            payload["factors"][name] = curve.as_dict()
    if args.factor in ("all", "pair-distance"):
        curve = pair_distance_curve(
            predictions, examples, graph, min_count=args.min_count, seed=args.seed
        )
        payload["pair_distance"] = curve.as_dict()

    _write_json(args.json, payload)
    if args.csv:
        curves = dict(payload["factors"])
        if "pair_distance" in payload:
            curves["pair_distance"] = payload["pair_distance"]
        atomic_write_text(args.csv, _curves_csv(curves))
    n_curves = len(payload["factors"]) + ("pair_distance" in payload)
    print(f"wrote {n_curves} curves over {len(examples)} examples -> {args.json}")
    return {
        "factor": args.factor,
        "split": args.split,
        "layer": args.layer,
        "bins": args.bins,
        "min_count": args.min_count,
        "seed": args.seed,
    }


def _io_report_categories(args):
    return {
        "inputs": [args.model, args.emb, args.examples] + _tax_files(args.taxonomy),
        "outputs": [args.json],
        "manifest": f"{args.json}.manifest.json",
    }


def _run_report_categories(args):
    from .analysis import category_f1, concept_f1
    from .embeddings import read_store
    from .probe import load_model

    graph = _load_tax(args.taxonomy)
    model = load_model(args.model)
    store = read_store(args.emb)
    examples = _split_examples(args)
    roots = [r.strip() for r in args.roots.split(",") if r.strip()]
    if not roots:
        raise UsageError("--roots needs at least one synset id")
    f1_map = concept_f1(_predictions(model, store, examples, args.layer), examples)
    stats = category_f1(f1_map, graph, roots)
    _write_json(args.json, {"categories": [s.as_dict() for s in stats], "split": args.split})
    print(f"wrote {len(stats)} categories -> {args.json}")
    return {"roots": roots, "split": args.split, "layer": args.layer}


def _io_report_layers(args):
    inputs = [args.emb, args.examples]
    if args.config:
        inputs.append(args.config)
    return {"inputs": inputs, "outputs": [args.json], "manifest": f"{args.json}.manifest.json"}


def _run_report_layers(args):
    from .embeddings import read_store
    from .probe import layer_sweep
    from .sampler import read_examples

    cfg = effective_probe_config(args)
    store = read_store(args.emb)
    examples = read_examples(args.examples)
    results = layer_sweep(cfg, store, examples, args.seed)
    entries = [{"layer": k, **report.to_dict()} for k, report in results]
    _write_json(args.json, {"layers": entries})
    for entry in entries:
        print(f"layer {entry['layer']}: f1 {entry['f1']:.4f} (n {entry['n_examples']})")
    print(f"wrote {len(entries)} layers -> {args.json}")
    return {**asdict(cfg), "n_layers": len(entries)}


E2E_FILES = (
    "examples.tsv",
    "store.bin",
    "stage1.prb",
    "refit.prb",
    "scores.bin",
    "tree.tsv",
    "tree.dot",
    "report.json",
)


def _io_e2e(args):
    if not args.out:
        return {"inputs": [], "outputs": [], "manifest": None}
    return {
        "inputs": [],
        "outputs": [os.path.join(args.out, name) for name in E2E_FILES],
        "manifest": os.path.join(args.out, "run.manifest.json"),
        "dirs": [args.out],
    }


def _run_e2e(args):
    from .pipeline import run_synthetic_pipeline

    result = run_synthetic_pipeline(args.nodes, args.sigma, args.seed)
    print(
        f"stage1 probe validation f1: {result.probe_val_f1:.4f} "
        f"(best epoch {result.probe.meta['best_epoch']})"
    )
    print(f"reconstruction root: {result.solution.root}")
    print(f"tree edit distance: {result.ted}")
    print(f"correct parent rate: {result.report.correct_parent_rate:.4f}")

    if args.out:
        from .embeddings import write_store
        from .probe import save_model
        from .reconstruction import render_dot, write_scores, write_tree
        from .sampler import write_examples

        out = args.out
        write_examples(os.path.join(out, "examples.tsv"), result.examples)
        write_store(result.store, os.path.join(out, "store.bin"))
        save_model(result.probe, os.path.join(out, "stage1.prb"))
        save_model(result.refit, os.path.join(out, "refit.prb"))
        write_scores(result.scores, os.path.join(out, "scores.bin"))
        write_tree(result.solution, os.path.join(out, "tree.tsv"))
        atomic_write_text(os.path.join(out, "tree.dot"), render_dot(result.solution))
        _write_json(
            os.path.join(out, "report.json"),
            {
                "n_nodes": result.n_nodes,
                "sigma": result.sigma,
                "seed": result.seed,
                "stage1_val_f1": result.probe_val_f1,
                **result.report.as_dict(),
            },
        )
    return {"nodes": args.nodes, "sigma": args.sigma}


# ---------------------------------------------------------------------------
# parser


def _add_probe_flags(parser) -> None:
    parser.add_argument("--config", default=None, help="flat key = value config file; flags win")
    for name in PROBE_INT_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int, default=None)
    for name in PROBE_FLOAT_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads (default 1 for reproducible output; env TAXOPROBE_THREADS)",
    )

    parser = argparse.ArgumentParser(
        prog="taxoprobe",
        description="Probe concept embeddings for hypernymy and rebuild the taxonomy.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("import", parents=[common], help="validate and normalize a taxonomy")
    p.add_argument("--synsets", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--virtual-root", default=None, help="fresh id unifying a multi-rooted input")
    p.add_argument("--out", required=True, help="directory for the normalized copy")
    p.set_defaults(io=_io_import, run=_run_import)

    p = sub.add_parser("sample", parents=[common], help="split synsets and sample examples")
    p.add_argument("--taxonomy", required=True, help="directory written by import")
    p.add_argument("--glosses", required=True, help="glosses.jsonl with annotated occurrences")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--max-triplets", type=int, default=None)
    p.add_argument("--out", required=True, help="examples.tsv path")
    p.set_defaults(io=_io_sample, run=_run_sample)

    p = sub.add_parser("emb", help="generate an embedding store")
    emb_sub = p.add_subparsers(dest="mode", required=True, metavar="random|planted")
    p_random = emb_sub.add_parser("random", parents=[common], help="seeded gaussian vectors")
    p_random.add_argument("--keys", required=True, help="one record key per line")
    p_random.add_argument("--dim", type=int, required=True)
    p_random.add_argument("--seed", type=int, required=True)
    p_random.add_argument("--out", required=True)
    p_random.set_defaults(io=_io_emb, run=_run_emb)
    p_planted = emb_sub.add_parser(
        "planted", parents=[common], help="ancestry-encoding vectors for a taxonomy"
    )
    p_planted.add_argument("--taxonomy", required=True)
    p_planted.add_argument("--dim", type=int, required=True)
    p_planted.add_argument("--sigma", type=float, default=0.1, help="per-occurrence noise scale")
    p_planted.add_argument("--layers", type=int, default=1)
    p_planted.add_argument("--occurrences", type=int, default=3)
    p_planted.add_argument("--noise-growth", type=float, default=4.0)
    p_planted.add_argument("--seed", type=int, required=True)
    p_planted.add_argument("--out", required=True)
    p_planted.set_defaults(io=_io_emb, run=_run_emb)

    p = sub.add_parser("train", parents=[common], help="fit a hypernymy probe")
    p.add_argument("--emb", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--layer", type=_layer_arg, default=None, help="all (default) or a layer index")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="model file path")
    _add_probe_flags(p)
    p.set_defaults(io=_io_train, run=_run_train)

    p = sub.add_parser("eval", parents=[common], help="score a probe on labeled examples")
    p.add_argument("--model", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--split", choices=SPLIT_CHOICES, default="test")
    p.add_argument("--layer", type=_layer_arg, default=None)
    p.add_argument("--seed", type=int, default=0, help="bootstrap resampling seed")
    p.add_argument("--json", required=True, help="report output path")
    p.set_defaults(io=_io_eval, run=_run_eval)

    p = sub.add_parser("score", parents=[common], help="probe every ordered node pair")
    p.add_argument("--model", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--nodes", required=True, help="one node id per line")
    p.add_argument("--layer", type=_layer_arg, default=None)
    p.add_argument("--out", required=True, help="score matrix path")
    p.set_defaults(io=_io_score, run=_run_score)

    p = sub.add_parser("reconstruct", parents=[common], help="solve the arborescence")
    p.add_argument("--scores", required=True)
    p.add_argument("--metric", choices=("mcm", "tim"), required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-tree", required=True)
    p.add_argument("--out-dot", default=None)
    p.set_defaults(io=_io_reconstruct, run=_run_reconstruct)

    p = sub.add_parser("eval-ted", parents=[common], help="compare a tree against the taxonomy")
    p.add_argument("--pred", required=True, help="predicted tree TSV")
    p.add_argument("--truth", required=True, help="taxonomy directory")
    p.add_argument("--nodes", default=None, help="restrict to these node ids (one per line)")
    p.add_argument("--json", required=True)
    p.set_defaults(io=_io_eval_ted, run=_run_eval_ted)

    p = sub.add_parser("report-factors", parents=[common], help="per-concept F1 factor curves")
    p.add_argument("--model", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--frequencies", default=None, help="lemma frequency TSV")
    p.add_argument("--factor", choices=FACTOR_CHOICES, default="all")
    p.add_argument("--split", choices=SPLIT_CHOICES, default="test")
    p.add_argument("--layer", type=_layer_arg, default=None)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--min-count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0, help="bootstrap resampling seed")
    p.add_argument("--json", required=True)
    p.add_argument("--csv", default=None, help="optional flat table for external plotting")
    p.set_defaults(io=_io_report_factors, run=_run_report_factors)

    p = sub.add_parser("report-categories", parents=[common], help="per-category F1 summary")
    p.add_argument("--model", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--roots", required=True, help="comma-separated category root ids")
    p.add_argument("--split", choices=SPLIT_CHOICES, default="test")
    p.add_argument("--layer", type=_layer_arg, default=None)
    p.add_argument("--json", required=True)
    p.set_defaults(io=_io_report_categories, run=_run_report_categories)

    p = sub.add_parser("report-layers", parents=[common], help="train and score one probe per layer")
    p.add_argument("--emb", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--json", required=True)
    _add_probe_flags(p)
    p.set_defaults(io=_io_report_layers, run=_run_report_layers)

    p = sub.add_parser(
        "e2e-synthetic", parents=[common], help="full pipeline on a generated taxonomy"
    )
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="optional directory for all artifacts")
    p.set_defaults(io=_io_e2e, run=_run_e2e)

    return parser


# ---------------------------------------------------------------------------
# driver


def _resolve_threads(args) -> int:
    value = args.threads
    if value is None:
        env = os.environ.get("TAXOPROBE_THREADS")
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"TAXOPROBE_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError("thread count must be >= 1")
    return value


def _cleanup(io: dict, pre_files: set, pre_dirs: set) -> None:
    for path in io["outputs"]:
        if path not in pre_files and os.path.isfile(path):
            try:
                os.remove(path)
            except OSError:
                pass
    for directory in io.get("dirs", ()):
        if directory not in pre_dirs and os.path.isdir(directory):
            try:
                os.rmdir(directory)
            except OSError:
                pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _resolve_threads(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for var in THREAD_ENV_VARS:
        os.environ[var] = str(threads)

    io = args.io(args)
    missing = [p for p in io["inputs"] if not os.path.exists(p)]
    if missing:
        for path in missing:
            print(f"error: missing input: {path}", file=sys.stderr)
        return 2

    pre_files = {p for p in io["outputs"] if os.path.exists(p)}
    pre_dirs = {d for d in io.get("dirs", ()) if os.path.isdir(d)}
    started = _now()
    try:
        config = args.run(args)
    except UsageError as exc:
        _cleanup(io, pre_files, pre_dirs)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        _cleanup(io, pre_files, pre_dirs)
        code = getattr(exc, "code", None)
        message = getattr(exc, "message", None) or str(exc)
        prefix = f"{code}: " if code else ""
        print(f"error: {prefix}{message}", file=sys.stderr)
        return 1
    except OSError as exc:
        _cleanup(io, pre_files, pre_dirs)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        _cleanup(io, pre_files, pre_dirs)
        raise

    manifest = {
        "command": args.command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "version": __version__,
        "threads": threads,
        "seed": getattr(args, "seed", None),
        "config": config,
        "config_sha256": sha256_bytes(
            json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
        ),
        "inputs": {p: sha256_file(p) for p in io["inputs"]},
        "outputs": {p: sha256_file(p) for p in io["outputs"]},
        "started": started,
        "finished": _now(),
    }
    if io["manifest"]:
        _write_json(io["manifest"], manifest)
    else:
        print("manifest: " + json.dumps(manifest, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
