"""Command-line pipeline: build graphs, train, evaluate, generate, detect, sweep.

One binary with subcommands; every command takes an optional JSON config file
plus flag overrides (flags win), echoes its resolved configuration and seed
into its report for provenance, and writes outputs atomically. Exit codes:
0 success, 1 usage/configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import anomaly as anomaly_mod
from . import datagen, ingest, linkpred, plots, scoring, training
from .errors import ConfigError, SceneKGError
from .graph import load_graph, save_graph
from .io import atomic_write_text, read_annotations, read_external_triples, write_annotations, write_json
from .models import ModelKind, load_checkpoint, save_checkpoint
from .schema import OBJECT

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="root random seed")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument(
        "--no-figures", action="store_true", help="skip rendering report figures"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    _require_input(path, "config")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return section


def _resolve(args, section: dict, key: str, default=None):
    """Flag value if given, else config-section value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    return section.get(key, default)


def _resolve_seed(args, section: dict, config: dict) -> int:
    if args.seed is not None:
        return int(args.seed)
    if "seed" in section:
        return int(section["seed"])
    return int(config.get("seed", 0))


def _resolve_out(args, section: dict) -> Path:
    out = args.out or section.get("out")
    if out is None:
        raise ConfigError("an output directory is required (--out)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_input(path: Path | str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required input: {what}")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what} path does not exist: {path}")
    return path


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _json_safe(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _report_base(command: str, resolved: dict, seed: int) -> dict:
    return {"command": command, "config": _json_safe(resolved), "seed": seed}


# -- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "synth")
    seed = _resolve_seed(args, section, config)
    out = _resolve_out(args, section)
    spec = datagen.SyntheticWorldSpec(
        n_scene_types=int(_resolve(args, section, "scene_types", 5)),
        objects_per_scene_cluster=int(_resolve(args, section, "objects_per_cluster", 20)),
        overlap_fraction=float(_resolve(args, section, "overlap", 0.1)),
        annotations_per_scene=int(_resolve(args, section, "annotations_per_scene", 40)),
        objects_per_annotation=int(_resolve(args, section, "objects_per_annotation", 8)),
        seed=seed,
    )
    annotations, affinity = datagen.generate_synthetic_world(spec)
    write_annotations(out / "corpus.jsonl", annotations)
    write_json(out / "affinity.json", affinity)
    write_json(out / "synth_report.json", _report_base("synth", spec.to_dict(), seed))
    print(f"wrote {len(annotations)} annotations over {spec.n_scene_types} scene types to {out}")
    return 0


# -- build-graph ------------------------------------------------------------------


def cmd_build_graph(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "build_graph")
    seed = _resolve_seed(args, section, config)
    out = _resolve_out(args, section)
    ann_path = _require_input(_resolve(args, section, "annotations"), "annotations")
    annotations, rejects = read_annotations(ann_path)
    if not annotations:
        raise ConfigError(f"annotation file {ann_path} holds no valid annotations")

    whitelist_path = _resolve(args, section, "class_whitelist")
    whitelist = None
    if whitelist_path is not None:
        whitelist_path = _require_input(whitelist_path, "class whitelist")
        whitelist = {
            line.strip() for line in Path(whitelist_path).read_text().splitlines() if line.strip()
        }

    graph, stats = ingest.ingest_annotations(annotations)
    merge_report = None
    external_path = _resolve(args, section, "external")
    if external_path is not None:
        external_path = _require_input(external_path, "external triples")
        merge = ingest.merge_external_triples(graph, read_external_triples(external_path))
        merge_report = {
            "added": merge.added,
            "duplicates": merge.duplicates,
            "rejected": merge.rejected,
        }

    scene_co = _resolve(args, section, "scene_co_threshold")
    object_co = _resolve(args, section, "object_co_threshold")
    if scene_co is not None or object_co is not None:
        graph = ingest.apply_frequency_filter(
            graph,
            annotations,
            scene_co_threshold=float(scene_co or 0.0),
            object_co_threshold=float(object_co or 0.0),
        )
    if whitelist is not None:
        graph = ingest.apply_class_whitelist(graph, whitelist)

    save_graph(graph, out / "graph.tsv")
    final_stats = ingest.graph_stats(graph, n_annotations=len(annotations))
    resolved = {
        "annotations": str(ann_path),
        "external": str(external_path) if external_path else None,
        "scene_co_threshold": scene_co,
        "object_co_threshold": object_co,
        "class_whitelist": str(whitelist_path) if whitelist_path else None,
    }
    report = _report_base("build-graph", resolved, seed)
    report.update(
        {
            "stats": final_stats.to_dict(),
            "rejected_records": len(rejects),
            "merge": merge_report,
        }
    )
    write_json(out / "graph_stats.json", report)
    print(ingest.format_link_table([("graph", final_stats)]))
    if rejects:
        print(f"rejected {len(rejects)} malformed annotation record(s)", file=sys.stderr)
    return 0


# -- train ---------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "train")
    seed = _resolve_seed(args, section, config)
    out = _resolve_out(args, section)
    graph_path = _require_input(_resolve(args, section, "graph"), "graph")
    graph = load_graph(graph_path)
    try:
        kind = ModelKind(str(_resolve(args, section, "model", "transe")).lower())
        schedule = training.LRSchedule(
            str(_resolve(args, section, "lr_schedule", "none")).lower()
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    train_config = training.TrainConfig(
        kind=kind,
        d_e=int(_resolve(args, section, "d_e", 32)),
        d_r=int(_resolve(args, section, "d_r", 32)),
        learning_rate=float(_resolve(args, section, "learning_rate", 0.1)),
        lr_schedule=schedule,
        epochs=int(_resolve(args, section, "epochs", 300)),
        batch_size=int(_resolve(args, section, "batch_size", 512)),
        margin=float(_resolve(args, section, "margin", 1.0)),
        negatives_per_positive=int(_resolve(args, section, "negatives_per_positive", 1)),
        seed=seed,
    )
    train_config.validate()
    result = training.train(graph, train_config)
    save_checkpoint(result.model, out / "checkpoint.bin")
    training.write_training_log(result.history, out / "training_log.csv")
    report = _report_base("train", train_config.to_dict(), seed)
    report["final_loss"] = result.history[-1].loss if result.history else None
    report["graph"] = str(graph_path)
    write_json(out / "training_report.json", report)
    if not args.no_figures and result.history:
        plots.save_loss_curve(result.history, out / "loss_curve.png")
    final = f"{result.history[-1].loss:.6f}" if result.history else "n/a"
    print(f"trained {kind.value} for {train_config.epochs} epochs; final loss {final}")
    return 0


# -- eval-links -------------------------------------------------------------------


def cmd_eval_links(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "eval_links")
    seed = _resolve_seed(args, section, config)
    out = _resolve_out(args, section)
    graph_path = _require_input(_resolve(args, section, "graph"), "graph")
    ckpt_path = _require_input(_resolve(args, section, "checkpoint"), "checkpoint")
    test_path = _require_input(_resolve(args, section, "test_annotations"), "test annotations")
    graph = load_graph(graph_path)
    model = load_checkpoint(ckpt_path)
    test_annotations, _ = read_annotations(test_path)
    test_triples, skipped = ingest.triples_from_annotations(graph, test_annotations)
    test_triples = sorted(test_triples)
    if not test_triples:
        raise ConfigError("no test annotation produced triples over the graph vocabulary")
    k_values = _parse_ints(_resolve(args, section, "ks", "1,3,10"))
    known = set(graph.triples) | set(test_triples)
    raw = linkpred.evaluate(model, graph, known, test_triples, k_values, filtered=False)
    filtered = linkpred.evaluate(model, graph, known, test_triples, k_values, filtered=True)
    resolved = {
        "graph": str(graph_path),
        "checkpoint": str(ckpt_path),
        "test_annotations": str(test_path),
        "ks": k_values,
    }
    report = _report_base("eval-links", resolved, seed)
    report.update(
        {
            "raw": raw.to_dict(),
            "filtered": filtered.to_dict(),
            "skipped_test_triples": skipped,
        }
    )
    write_json(out / "link_metrics.json", report)
    print(
        f"filtered: hits={filtered.hits} mean_rank={filtered.mean_rank:.2f} "
        f"mrr={filtered.mrr:.4f} over {filtered.n_test} triples"
    )
    return 0


# -- gen-anomalies -----------------------------------------------------------------


def cmd_gen_anomalies(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "gen_anomalies")
    seed = _resolve_seed(args, section, config)
    out = _resolve_out(args, section)
    ann_path = _require_input(_resolve(args, section, "annotations"), "annotations")
    annotations, _ = read_annotations(ann_path)
    if not annotations:
        raise ConfigError(f"annotation file {ann_path} holds no valid annotations")
    ratios = _parse_floats(_resolve(args, section, "ratios", "0.8,0.1,0.1"))
    if len(ratios) != 3:
        raise ConfigError("ratios must list exactly three values")
    min_objects = int(_resolve(args, section, "min_objects", 5))
    split = datagen.split_annotations(annotations, tuple(ratios), seed=seed)
    write_annotations(out / "train.jsonl", split.train)
    write_annotations(out / "validation.jsonl", split.validation)
    write_annotations(out / "test.jsonl", split.test)

    graph_path = _resolve(args, section, "graph")
    if graph_path is not None:
        graph = load_graph(_require_input(graph_path, "graph"))
        vocabulary = {graph.entity(i).label for i in graph.entities_of_type(OBJECT)}
    else:
        vocabulary = {o for ann in split.train for o in ann.objects}

    counts: dict[str, dict] = {}
    for eval_name, eval_split in (("validation", split.validation), ("test", split.test)):
        if not eval_split:
            log.warning("%s split is empty; skipping its anomaly datasets", eval_name)
            continue
        for flavor, generator in (
            ("out", datagen.generate_out_of_scene),
            ("unique_out", datagen.generate_unique_out_of_scene),
        ):
            raw = list(generator(split.train, eval_split))
            kept, restriction = datagen.restrict_to_vocabulary(raw, vocabulary, min_objects)
            anomaly_mod.write_datapoints(out / f"{flavor}_{eval_name}.jsonl", kept)
            counts[f"{flavor}_{eval_name}"] = {
                "generated": len(raw),
                **restriction.to_dict(),
            }

    resolved = {
        "annotations": str(ann_path),
        "ratios": ratios,
        "min_objects": min_objects,
        "graph": str(graph_path) if graph_path else None,
    }
    report = _report_base("gen-anomalies", resolved, seed)
    report.update(
        {
            "split_sizes": {
                "train": len(split.train),
                "validation": len(split.validation),
                "test": len(split.test),
            },
            "datasets": counts,
        }
    )
    write_json(out / "gen_report.json", report)
    for name, info in sorted(counts.items()):
        print(f"{name}: kept {info['kept']} of {info['generated']} datapoints")
    return 0


# -- detect ------------------------------------------------------------------------


def _load_table(args, section, graph_path, ckpt_path) -> scoring.ScoreTable:
    table_path = _resolve(args, section, "score_table")
    budget_mb = _resolve(args, section, "memory_budget_mb")
    budget = int(float(budget_mb) * 1024 * 1024) if budget_mb is not None else None
    if table_path is not None and Path(table_path).exists():
        return scoring.ScoreTable.load(table_path)
    graph = load_graph(_require_input(graph_path, "graph"))
    model = load_checkpoint(_require_input(ckpt_path, "checkpoint"))
    table = scoring.build_score_table(model, graph, memory_budget_bytes=budget)
    if table_path is not None and table.dense:
        table.save(table_path)
    return table


def cmd_detect(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "detect")
    seed = _resolve_seed(args, section, config)
    out = _resolve_out(args, section)
    dataset_path = _require_input(_resolve(args, section, "dataset"), "anomaly dataset")
    datapoints, rejects = anomaly_mod.read_datapoints(dataset_path)
    if not datapoints:
        raise ConfigError(f"dataset {dataset_path} holds no valid datapoints")
    inference = anomaly_mod.InferenceConfig(
        alpha=float(_resolve(args, section, "alpha", 1.0)),
        m=int(_resolve(args, section, "m", 3)),
    )
    inference.validate()
    k_values = _parse_ints(_resolve(args, section, "ks", "1,3"))
    table = _load_table(
        args, section, _resolve(args, section, "graph"), _resolve(args, section, "checkpoint")
    )
    rankings = []
    for dp in datapoints:
        if not table.has_object(dp.anomaly_label):
            continue
        try:
            rankings.append(anomaly_mod.detect(table, dp, inference))
        except SceneKGError:
            continue
    anomaly_mod.write_rankings(out / "rankings.jsonl", rankings)
    report_data = anomaly_mod.evaluate_topk(table, datapoints, inference, k_values)
    resolved = {
        "dataset": str(dataset_path),
        "alpha": inference.alpha,
        "m": inference.m,
        "ks": k_values,
        "graph": _resolve(args, section, "graph"),
        "checkpoint": _resolve(args, section, "checkpoint"),
        "score_table": _resolve(args, section, "score_table"),
    }
    report = _report_base("detect", resolved, seed)
    report["results"] = report_data.to_dict()
    report["rejected_records"] = len(rejects)
    write_json(out / "evaluation.json", report)
    miss_lines = ["k,label,misses\n"]
    for k in sorted(report_data.miss_counts):
        for label, count in sorted(report_data.miss_counts[k].items()):
            miss_lines.append(f"{k},{label},{count}\n")
    atomic_write_text(out / "miss_counts.csv", "".join(miss_lines))
    if not args.no_figures:
        plots.save_miss_counts(report_data, max(k_values), out / "miss_counts.png")
    for k in sorted(report_data.top_k_accuracy):
        print(
            f"top-{k}: anomaly accuracy {report_data.top_k_accuracy[k]:.3f}, "
            f"scene accuracy {report_data.scene_top_k_accuracy[k]:.3f}"
        )
    return 0


# -- sweep ----------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "sweep")
    seed = _resolve_seed(args, section, config)
    out = _resolve_out(args, section)
    dataset_path = _require_input(_resolve(args, section, "dataset"), "anomaly dataset")
    datapoints, _ = anomaly_mod.read_datapoints(dataset_path)
    if not datapoints:
        raise ConfigError(f"dataset {dataset_path} holds no valid datapoints")
    alphas = _parse_floats(_resolve(args, section, "alphas", "0,0.25,0.5,0.75,1"))
    ms = _parse_ints(_resolve(args, section, "ms", "1,3,5"))
    k_values = _parse_ints(_resolve(args, section, "ks", "1,3"))
    table = _load_table(
        args, section, _resolve(args, section, "graph"), _resolve(args, section, "checkpoint")
    )
    cells = anomaly_mod.sweep(table, datapoints, alphas, ms, k_values)
    anomaly_mod.write_sweep_csv(cells, out / "sweep.csv")
    resolved = {
        "dataset": str(dataset_path),
        "alphas": alphas,
        "ms": ms,
        "ks": k_values,
        "graph": _resolve(args, section, "graph"),
        "checkpoint": _resolve(args, section, "checkpoint"),
    }
    report = _report_base("sweep", resolved, seed)
    report["n_cells"] = len(cells)
    write_json(out / "sweep_report.json", report)
    if not args.no_figures:
        plots.save_sweep_tradeoff(cells, out / "tradeoff.png")
    print(f"swept {len(cells)} (alpha, m, k) cells -> {out / 'sweep.csv'}")
    return 0


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenekg", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic annotation corpus")
    _add_common(p)
    p.add_argument("--scene-types", dest="scene_types", type=int)
    p.add_argument("--objects-per-cluster", dest="objects_per_cluster", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--annotations-per-scene", dest="annotations_per_scene", type=int)
    p.add_argument("--objects-per-annotation", dest="objects_per_annotation", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", help="ingest annotations into a knowledge graph")
    _add_common(p)
    p.add_argument("--annotations", type=Path)
    p.add_argument("--external", type=Path, help="external triples TSV to merge")
    p.add_argument("--scene-co-threshold", dest="scene_co_threshold", type=float)
    p.add_argument("--object-co-threshold", dest="object_co_threshold", type=float)
    p.add_argument("--class-whitelist", dest="class_whitelist", type=Path)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a link-prediction embedding model")
    _add_common(p)
    p.add_argument("--graph", type=Path)
    p.add_argument("--model", choices=[k.value for k in ModelKind])
    p.add_argument("--d-e", dest="d_e", type=int)
    p.add_argument("--d-r", dest="d_r", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument(
        "--lr-schedule", dest="lr_schedule", choices=[s.value for s in training.LRSchedule]
    )
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--negatives-per-positive", dest="negatives_per_positive", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-links", help="link-prediction ranking metrics")
    _add_common(p)
    p.add_argument("--graph", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--test-annotations", dest="test_annotations", type=Path)
    p.add_argument("--ks", type=str)
    p.set_defaults(func=cmd_eval_links)

    p = sub.add_parser("gen-anomalies", help="split a corpus and build anomaly benchmarks")
    _add_common(p)
    p.add_argument("--annotations", type=Path)
    p.add_argument("--ratios", type=str)
    p.add_argument("--min-objects", dest="min_objects", type=int)
    p.add_argument("--graph", type=Path, help="restrict vocabulary to this graph's objects")
    p.set_defaults(func=cmd_gen_anomalies)

    p = sub.add_parser("detect", help="rank anomaly candidates and report accuracy")
    _add_common(p)
    p.add_argument("--graph", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--score-table", dest="score_table", type=Path)
    p.add_argument("--memory-budget-mb", dest="memory_budget_mb", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--ks", type=str)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="accuracy over an (alpha, m) grid")
    _add_common(p)
    p.add_argument("--graph", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--score-table", dest="score_table", type=Path)
    p.add_argument("--memory-budget-mb", dest="memory_budget_mb", type=float)
    p.add_argument("--alphas", type=str)
    p.add_argument("--ms", type=str)
    p.add_argument("--ks", type=str)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SceneKGError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
