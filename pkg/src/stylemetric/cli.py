"""Command-line entry point.

One executable with subcommands, sharing seed/thread/manifest plumbing:
data preparation (synth, sample, split), fitting (train, train-personalized),
measurement (eval), and style-space applications (embed, cluster, navigate,
recommend, build-outfit, score-outfit, makeover-delta).

Exit codes: 0 success, 1 usage error, 2 data or validation error. Every
command that writes files also writes a run_manifest.json next to them with
input digests, the resolved configuration, and wall time, so a run can be
reproduced exactly.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace

from .catalog import (DataError, load_edges, load_features, load_model,
                      save_edges, save_features, save_model, save_triples)
from .evaluation import EVAL_TSV_HEADER, evaluate
from .recommend import (build_outfit, makeover_delta, outfit_coherence,
                        rank_candidates)
from .sampling import (LabeledPairSet, build_user_dataset, graph_to_pairs,
                       load_pairs, sample_negatives, save_pairs, split)
from .stylespace import (embed_all, kmeans, navigate, representatives,
                         save_clustering, save_embedding, save_path)
from .synthetic import MODES, SynthConfig, generate
from .training import (TrainConfig, TrainingError, train, train_personalized)

RELATION_CLASS_CHOICES = ("also_viewed", "buy_after_viewing", "also_bought",
                          "bought_together")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(raw):
    value = int(raw)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return value


def _nonneg_int(raw):
    value = int(raw)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} is negative")
    return value


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, subcommand, args, inputs, outputs, wall_time):
    config = {}
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        config[key] = value
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [os.path.basename(str(p)) for p in outputs],
        "seed": getattr(args, "seed", None),
        "wall_time": wall_time,
    }
    path = os.path.join(out_dir, "run_manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _read_id_list(path):
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                items.append(line)
    return items


def _train_config_from_args(args) -> TrainConfig:
    if getattr(args, "config", None):
        config = TrainConfig.from_file(args.config)
    else:
        config = TrainConfig()
    overrides = {}
    for flag, field in (("kind", "kind"), ("rank", "rank"),
                        ("max_iter", "max_iterations"), ("tolerance", "tolerance"),
                        ("optimizer", "optimizer"), ("initial_step", "initial_step"),
                        ("step_decay", "step_decay"), ("init_scale", "init_scale"),
                        ("feature_norm", "feature_norm"), ("c0", "c0"),
                        ("l2_penalty", "l2_penalty")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    overrides["seed"] = args.seed
    overrides["threads"] = args.threads
    overrides["deterministic"] = args.deterministic
    config = replace(config, **overrides)
    config.validate()
    return config


def _write_train_outputs(out_dir, model, report, log_lines):
    model_path = os.path.join(out_dir, "model.bin")
    save_model(model, model_path)
    report_path = os.path.join(out_dir, "train_report.json")
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump({
            "trace": report.trace,
            "train_accuracy": report.train_accuracy,
            "iterations": report.iterations,
            "termination": report.termination,
        }, f, indent=2, sort_keys=True)
        f.write("\n")
    log_path = os.path.join(out_dir, "train_log.tsv")
    with open(log_path, "w", encoding="utf-8") as f:
        f.writelines(log_lines)
    return [model_path, report_path, log_path]


class _LineBuffer:
    def __init__(self):
        self.lines = []

    def write(self, text):
        self.lines.append(text)


# ---------------------------------------------------------------------------
# subcommand handlers; each returns (input paths, output paths)


def _cmd_synth(args):
    out = _ensure_out(args)
    config = SynthConfig(args.n, args.f, args.k, args.edges, args.noise,
                         args.mode, args.seed, args.c_star)
    try:
        result = generate(config)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    features_path = os.path.join(out, "features.tsv")
    edges_path = os.path.join(out, "edges.tsv")
    model_path = os.path.join(out, "ground_truth.model")
    info_path = os.path.join(out, "synth_info.json")
    save_features(result.features, features_path)
    save_edges(result.graph, edges_path)
    save_model(result.ground_truth_model(), model_path)
    outputs = [features_path, edges_path, model_path, info_path]
    if result.triples is not None:
        triples_path = os.path.join(out, "triples.tsv")
        save_triples(result.triples, triples_path)
        outputs.append(triples_path)
    with open(info_path, "w", encoding="utf-8") as f:
        json.dump(result.info, f, indent=2, sort_keys=True)
        f.write("\n")
    return [], outputs


def _cmd_sample(args):
    out = _ensure_out(args)
    features = load_features(args.features)
    class_filter = args.classes.split(",") if args.classes else None
    graph = load_edges(args.edges, class_filter, features)
    if args.triples:
        from .catalog import load_triples
        triples = load_triples(args.triples, features)
        pairs = build_user_dataset(triples, features, args.seed)
        inputs = [args.features, args.edges, args.triples]
    else:
        pos = graph_to_pairs(graph, features)
        neg = sample_negatives(pos, features.n_items, args.seed)
        pairs = LabeledPairSet(features.item_ids, pos, neg, "all")
        inputs = [args.features, args.edges]
    pairs_path = os.path.join(out, "pairs.tsv")
    save_pairs(pairs, pairs_path)
    return inputs, [pairs_path]


def _cmd_split(args):
    out = _ensure_out(args)
    features = load_features(args.features)
    pairs = load_pairs(args.pairs, features)
    parts = split(pairs.pos_pairs, pairs.neg_pairs, args.seed,
                  item_ids=pairs.item_ids, user_ids=pairs.user_ids,
                  pos_users=pairs.pos_users, neg_users=pairs.neg_users)
    outputs = []
    for tag in ("train", "validation", "test"):
        path = os.path.join(out, f"{tag}.pairs")
        save_pairs(parts[tag], path)
        outputs.append(path)
    return [args.features, args.pairs], outputs


def _cmd_train(args):
    out = _ensure_out(args)
    features = load_features(args.features)
    pairs = load_pairs(args.pairs, features)
    config = _train_config_from_args(args)
    log = _LineBuffer()
    model, report = train(config, features, pairs, progress=log)
    outputs = _write_train_outputs(out, model, report, log.lines)
    print(f"final log-likelihood {report.trace[-1]:.6f}, "
          f"train accuracy {report.train_accuracy:.4f}, "
          f"{report.iterations} iterations ({report.termination})")
    inputs = [args.features, args.pairs]
    if args.config:
        inputs.append(args.config)
    return inputs, outputs


def _cmd_train_personalized(args):
    out = _ensure_out(args)
    features = load_features(args.features)
    pairs = load_pairs(args.pairs, features)
    warm = load_model(args.warm_start)
    config = _train_config_from_args(args)
    log = _LineBuffer()
    model, report = train_personalized(config, features, pairs, warm,
                                       freeze_user_weights=args.freeze_user_weights,
                                       progress=log)
    outputs = _write_train_outputs(out, model, report, log.lines)
    print(f"final log-likelihood {report.trace[-1]:.6f}, "
          f"train accuracy {report.train_accuracy:.4f}, "
          f"{report.iterations} iterations ({report.termination})")
    inputs = [args.features, args.pairs, args.warm_start]
    if args.config:
        inputs.append(args.config)
    return inputs, outputs


def _cmd_eval(args):
    features = load_features(args.features)
    pairs = load_pairs(args.pairs, features)
    model = load_model(args.model)
    report = evaluate(model, features, pairs)
    if args.format == "tsv":
        print(report.tsv_line())
    else:
        print(report.text_block(), end="")
    inputs = [args.features, args.pairs, args.model]
    outputs = []
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "eval_report.tsv" if args.format == "tsv"
                            else "eval_report.txt")
        with open(path, "w", encoding="utf-8") as f:
            if args.format == "tsv":
                f.write(EVAL_TSV_HEADER + "\n" + report.tsv_line() + "\n")
            else:
                f.write(report.text_block())
        outputs.append(path)
    return inputs, outputs


def _cmd_embed(args):
    out = _ensure_out(args)
    features = load_features(args.features)
    model = load_model(args.model)
    emb = embed_all(model, features)
    path = os.path.join(out, "embedding.tsv")
    save_embedding(emb, path)
    return [args.features, args.model], [path]


def _cmd_cluster(args):
    out = _ensure_out(args)
    features = load_features(args.features)
    model = load_model(args.model)
    emb = embed_all(model, features)
    clustering = kmeans(emb, args.k, args.seed, args.max_iter, args.seeding)
    path = os.path.join(out, "clustering.tsv")
    save_clustering(clustering, emb, path)
    outputs = [path]
    if args.representatives:
        reps = representatives(clustering, emb, args.representatives)
        rep_path = os.path.join(out, "representatives.tsv")
        with open(rep_path, "w", encoding="utf-8") as f:
            for cluster in sorted(reps):
                for position, item in enumerate(reps[cluster]):
                    f.write(f"{cluster}\t{position}\t{item}\n")
        outputs.append(rep_path)
    print(f"k={clustering.k} objective {clustering.objective:.6f} "
          f"({len(clustering.objective_trace)} iterations)")
    return [args.features, args.model], outputs


def _cmd_navigate(args):
    out = _ensure_out(args)
    features = load_features(args.features)
    model = load_model(args.model)
    emb = embed_all(model, features)
    items, cost, hops = navigate(emb, args.source, args.target, args.knn_k)
    path = os.path.join(out, "path.tsv")
    save_path(items, cost, hops, path)
    print(" -> ".join(items))
    print(f"total cost {cost:.6f} over {len(hops)} hops")
    return [args.features, args.model], [path]


def _cmd_recommend(args):
    features = load_features(args.features)
    model = load_model(args.model)
    candidates = _read_id_list(args.category_file)
    ranked = rank_candidates(model, features, args.query, candidates)[: args.top]
    lines = [f"{item}\t{dist!r}\t{prob!r}" for item, dist, prob in ranked]
    print("\n".join(lines))
    inputs = [args.features, args.model, args.category_file]
    outputs = []
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "recommendations.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        outputs.append(path)
    return inputs, outputs


def _cmd_build_outfit(args):
    features = load_features(args.features)
    model = load_model(args.model)
    category_files = args.category_files.split(",")
    categories = [_read_id_list(p) for p in category_files]
    picks = build_outfit(model, features, args.query, categories)
    lines = []
    for path, pick in zip(category_files, picks):
        item, dist, prob = rank_candidates(model, features, args.query, [pick])[0]
        lines.append(f"{os.path.basename(path)}\t{item}\t{dist!r}\t{prob!r}")
    print("\n".join(lines))
    inputs = [args.features, args.model] + category_files
    outputs = []
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "outfit.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        outputs.append(path)
    return inputs, outputs


def _cmd_score_outfit(args):
    features = load_features(args.features)
    model = load_model(args.model)
    items = args.items.split(",")
    score = outfit_coherence(model, features, items, args.normalize)
    line = f"{','.join(score.items)}\t{score.pair_count}\t{score.mean_pair_loglik!r}"
    print(line)
    inputs = [args.features, args.model]
    outputs = []
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "outfit_score.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write(line + "\n")
        outputs.append(path)
    return inputs, outputs


def _cmd_makeover_delta(args):
    features = load_features(args.features)
    model = load_model(args.model)
    before = args.before.split(",")
    after = args.after.split(",")
    delta = makeover_delta(model, features, before, after, args.normalize)
    print(repr(delta))
    inputs = [args.features, args.model]
    outputs = []
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "makeover_delta.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write(repr(delta) + "\n")
        outputs.append(path)
    return inputs, outputs


# ---------------------------------------------------------------------------
# parser assembly


def _add_common(parser, out_required=True):
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for every random choice this command makes")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: STYLEMETRIC_THREADS or 1)")
    parser.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                        default=True,
                        help="ordered reductions; disable for speed on large runs")
    if out_required:
        parser.add_argument("--out", required=True, help="output directory")
    else:
        parser.add_argument("--out", default=None, help="optional output directory")


def _add_train_flags(parser):
    parser.add_argument("--config", default=None,
                        help="key=value training config file; flags override it")
    parser.add_argument("--rank", type=_positive_int, default=None)
    parser.add_argument("--max-iter", dest="max_iter", type=_nonneg_int, default=None)
    parser.add_argument("--tolerance", type=float, default=None)
    parser.add_argument("--optimizer", choices=("quasi_newton", "gradient_ascent"),
                        default=None)
    parser.add_argument("--initial-step", dest="initial_step", type=float, default=None)
    parser.add_argument("--step-decay", dest="step_decay", type=float, default=None)
    parser.add_argument("--init-scale", dest="init_scale", type=float, default=None)
    parser.add_argument("--feature-norm", dest="feature_norm",
                        choices=("none", "l2_unit"), default=None)
    parser.add_argument("--c0", type=float, default=None)
    parser.add_argument("--l2-penalty", dest="l2_penalty", type=float, default=None)


def _build_parser() -> _Parser:
    parser = _Parser(prog="stylemetric",
                     description="Learned style metrics over item feature vectors.")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a planted-metric dataset")
    p.add_argument("--n", type=_positive_int, required=True, help="item count")
    p.add_argument("--f", type=_positive_int, required=True, help="feature count")
    p.add_argument("--k", type=_positive_int, required=True, help="planted rank")
    p.add_argument("--edges", type=_positive_int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--mode", choices=MODES, default="axis_aligned")
    p.add_argument("--c-star", dest="c_star", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("sample", help="balance edges with sampled negatives")
    p.add_argument("--features", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--classes", default=None,
                   help="comma-separated relation classes to keep")
    p.add_argument("--triples", default=None,
                   help="user triple file: build the per-user dataset instead")
    _add_common(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("split", help="80/10/10 train/validation/test split")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="fit a metric by maximum likelihood")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--kind", choices=("low_rank", "weighted_nn"), default=None)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-personalized",
                       help="fit per-user weights from a global warm start")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--warm-start", dest="warm_start", required=True)
    p.add_argument("--freeze-user-weights", dest="freeze_user_weights",
                   action="store_true")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_train_personalized)

    p = sub.add_parser("eval", help="link-prediction accuracy report")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--format", choices=("tsv", "text"), default="text")
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("embed", help="write style vectors for all items")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("cluster", help="k-means over style vectors")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--max-iter", dest="max_iter", type=_positive_int, default=100)
    p.add_argument("--seeding", choices=("weighted", "random"), default="weighted")
    p.add_argument("--representatives", type=_positive_int, default=None,
                   help="also write the m nearest items per centroid")
    _add_common(p)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("navigate", help="min-cost path between two items")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--knn-k", dest="knn_k", type=_positive_int, default=10)
    _add_common(p)
    p.set_defaults(func=_cmd_navigate)

    p = sub.add_parser("recommend", help="rank candidates against a query item")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--category-file", dest="category_file", required=True,
                   help="file of candidate item ids, one per line")
    p.add_argument("--top", type=_positive_int, default=10)
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_recommend)

    p = sub.add_parser("build-outfit", help="pick one item per category")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--category-files", dest="category_files", required=True,
                   help="comma-separated candidate files, one per slot")
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_build_outfit)

    p = sub.add_parser("score-outfit", help="mean pairwise log-likelihood")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--items", required=True, help="comma-separated item ids")
    p.add_argument("--normalize", choices=("pairs", "components"), default="pairs")
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_score_outfit)

    p = sub.add_parser("makeover-delta", help="coherence change between outfits")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--before", required=True, help="comma-separated item ids")
    p.add_argument("--after", required=True, help="comma-separated item ids")
    p.add_argument("--normalize", choices=("pairs", "components"), default="pairs")
    _add_common(p, out_required=False)
    p.set_defaults(func=_cmd_makeover_delta)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        inputs, outputs = args.func(args)
    except (DataError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if getattr(args, "out", None):
        _write_manifest(args.out, args.subcommand, args, inputs, outputs,
                        time.perf_counter() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
