"""Command-line entry point.

Subcommands: preprocess, train, predict, evaluate, stats, tiger-convert,
annotate-step.  Configuration comes from a flat key-value file plus flag
overrides (flags > file > defaults); every output artifact embeds the
effective configuration.  Exit codes: 0 success, 1 usage, 2 data error,
3 training failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import annotation, dataset, reporting, training
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import DECODING_MODES, RunConfig, parse_config_file
from .corpus import (
    LevelSchema,
    apply_tiger_two_level,
    corpus_stats,
    format_stats_report,
    load_column_corpus,
    segment_corpus,
    write_column_corpus,
)
from .errors import (
    CascadeError,
    CheckpointError,
    ConfigError,
    DataError,
    SchemaError,
    TagError,
    TrainingError,
)
from .tags import derive_tiger_levels

log = logging.getLogger("seqcascade")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> Parser:
    parser = Parser(prog="seqcascade", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
        return p

    p = common(sub.add_parser("preprocess", help="segment a raw corpus into unit-id datasets"))
    p.add_argument("--tiger-two-level", action="store_true",
                   help="derive a coarse level from the rich label column")
    p.add_argument("--decoding", choices=DECODING_MODES)
    p.add_argument("--out")

    p = common(sub.add_parser("train", help="train a cascade on a preprocessed dataset"))
    p.add_argument("--data-dir")
    p.add_argument("--out")
    p.add_argument("--mono-task", metavar="LEVEL",
                   help="train a single-task model on one level")
    p.add_argument("--decoding", choices=DECODING_MODES,
                   help="assert the dataset was preprocessed with this mode")
    p.add_argument("--layers", type=int, help="set encoder and decoder depth together")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)

    p = common(sub.add_parser("predict", help="annotate raw text with a trained model"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="column corpus (source column only needed)")
    p.add_argument("--out", required=True, help="output column file")

    p = common(sub.add_parser("evaluate", help="score a checkpoint on a dataset split"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--out")

    p = common(sub.add_parser("stats", help="corpus statistics report"))
    p.add_argument("--out")

    p = common(sub.add_parser("tiger-convert",
                              help="rewrite token+label columns as token, core tag, full label"))
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", type=int, default=1)
    p.add_argument("--out", required=True)

    p = common(sub.add_parser("annotate-step", help="advance the annotation loop by one step"))
    p.add_argument("--loop-dir", required=True)
    p.add_argument("--corrected", help="ingest this corrected block before training")

    return parser


def load_run_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    for flag, key in (
        ("out", "out"), ("data_dir", "data_dir"), ("decoding", "decoding"),
        ("mono_task", "mono_task"), ("seed", "seed"), ("epochs", "max_epochs"),
    ):
        value = getattr(args, flag, None)
        if value is not None and value != "":
            overrides[key] = str(value)
    if getattr(args, "tiger_two_level", False):
        overrides["tiger_two_level"] = "true"
    if getattr(args, "layers", None) is not None:
        overrides["encoder_layers"] = str(args.layers)
        overrides["decoder_layers"] = str(args.layers)
    return RunConfig(file_values, overrides)


def _schemas_from_config(cfg: RunConfig) -> list[LevelSchema]:
    kinds = cfg.level_kinds()
    if cfg["decoding"] != "char":
        # whole-token decoding predicts whole labels on every level
        kinds = {name: "token-label" for name in kinds}
    return [LevelSchema(name=name, kind=kinds[name]) for name in cfg["tasks"]]


def _fixed_labels(cfg: RunConfig) -> dict[str, set[str]]:
    out = {}
    for task in cfg["tasks"]:
        raw = cfg.task_key(task, "labels")
        if raw:
            out[task] = {x.strip() for x in raw.split(",") if x.strip()}
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    cfg = load_run_config(args)
    if not cfg["tasks"]:
        raise ConfigError("preprocess needs a task list (tasks = ...)")
    schemas = _schemas_from_config(cfg)
    level_columns = cfg.level_columns()
    genre = cfg["genre_column"] if cfg["genre_column"] >= 0 else None
    splits = {}
    for split in ("train", "dev", "test"):
        path = cfg[split]
        if path:
            splits[split] = load_column_corpus(
                path, cfg["source_column"], level_columns, genre_column=genre
            )
    if "train" not in splits:
        raise ConfigError("preprocess needs at least a training corpus (train = ...)")
    if cfg["tiger_two_level"]:
        if len(cfg["tasks"]) != 2:
            raise ConfigError("tiger_two_level expects exactly two tasks (core, full)")
        core, full = cfg["tasks"]
        for examples in splits.values():
            apply_tiger_two_level(examples, core, full)
    for examples in splits.values():
        segment_corpus(examples, schemas, cfg["decoding"])
    from .corpus import build_vocabulary

    vocab = build_vocabulary(splits["train"], schemas)
    out = Path(cfg["out"])
    dataset.write_dataset(out, splits, schemas, vocab, cfg["decoding"], cfg.echo_lines())
    stats = corpus_stats(splits, [s.name for s in schemas])
    report = format_stats_report(stats, [s.name for s in schemas])
    (out / "stats.txt").write_text(
        "".join(f"# {line}\n" for line in cfg.echo_lines()) + report, encoding="utf-8"
    )
    print(report, end="")
    print(f"wrote dataset to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    data_dir = cfg["data_dir"]
    if not data_dir:
        raise ConfigError("train needs --data-dir (or data_dir = ...)")
    meta = dataset.load_meta(data_dir)
    if args.decoding and args.decoding != meta["decoding"]:
        raise ConfigError(
            f"dataset was preprocessed with decoding={meta['decoding']!r}, "
            f"but --decoding {args.decoding!r} was requested"
        )
    schemas = dataset.load_schemas(data_dir)
    vocab = dataset.load_vocab(data_dir)
    tasks = [s.name for s in schemas]
    if cfg["mono_task"]:
        if cfg["mono_task"] not in tasks:
            raise ConfigError(f"unknown mono-task level {cfg['mono_task']!r}")
        schemas = [s for s in schemas if s.name == cfg["mono_task"]]
        tasks = [cfg["mono_task"]]
    cfg.values["decoding"] = meta["decoding"]
    model_cfg = cfg.model_config(tasks)
    train_examples = dataset.load_split(data_dir, "train")
    dev_examples = dataset.load_split(data_dir, "dev")

    init_params = None
    if cfg["smart_init_from"]:
        source = load_checkpoint(cfg["smart_init_from"])
        init_params, manifest = annotation.smart_init(model_cfg, schemas, vocab, source)
        log.info("smart-init: copied %d parameters, %d embedding rows",
                 len(manifest["copied"]), manifest["embedding_rows_copied"])

    result = training.train(
        model_cfg, schemas, vocab, train_examples, dev_examples, init_params=init_params
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", result.checkpoint)
    training.write_training_log(
        out / "train_log.tsv", result.log, schemas, header_lines=cfg.echo_lines()
    )
    if cfg["figures"] and result.log:
        reporting.save_training_curves(
            result.log, tasks, out / "train_log.png", cfg.echo_lines()
        )
    if result.log:
        best = result.log[result.best_epoch - 1] if result.best_epoch else result.log[-1]
        print(f"best epoch {result.best_epoch}: "
              + " ".join(f"{k}={v:.4f}" for k, v in best.dev_accuracies.items()))
    print(f"checkpoint: {out / 'model.ckpt'}")
    if result.aborted:
        print("training aborted (divergence); kept the last good checkpoint",
              file=sys.stderr)
        return EXIT_TRAINING
    return 0


def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = checkpoint.build_model()
    examples = load_column_corpus(args.input, source_column=0, level_columns={})
    segment_corpus(examples, [], model.config.decoding)
    annotated = annotation.annotate_examples(model, examples, model.schemas)
    level_columns = {s.name: i + 1 for i, s in enumerate(model.schemas)}
    header = [f"checkpoint = {args.checkpoint}"] + [
        f"{f} = {getattr(model.config, f)}" for f in ("tasks", "decoding", "seed")
    ]
    write_column_corpus(args.out, annotated, 0, level_columns, header_lines=header)
    print(f"wrote {len(annotated)} sentences to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args)
    checkpoint = load_checkpoint(args.checkpoint)
    data_vocab = dataset.load_vocab(args.data_dir)
    dataset.ensure_same_vocab(checkpoint.vocab, data_vocab,
                              "checkpoint and dataset")
    examples = dataset.load_split(args.data_dir, args.split)
    model = checkpoint.build_model()
    missing = [s.name for s in model.schemas
               if any(s.name not in ex.target_units for ex in examples)]
    if missing:
        raise SchemaError(f"dataset lacks gold units for levels {missing}")
    scores = training.evaluate_model(model, examples)
    lines = ["task\taccuracy\texact_match\tmatches\tpositions"]
    for name, ev in scores.items():
        lines.append(f"{name}\t{ev.accuracy:.6f}\t{ev.exact_match:.6f}"
                     f"\t{ev.matches}\t{ev.positions}")
    table = "\n".join(lines) + "\n"
    print(table, end="")
    out = Path(args.out) if args.out else Path(args.data_dir) / f"eval_{args.split}.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        "".join(f"# {line}\n" for line in cfg.echo_lines()) + table, encoding="utf-8"
    )
    if cfg["figures"]:
        reporting.save_accuracy_bars(
            {name: ev.accuracy for name, ev in scores.items()},
            out.with_suffix(".png"), cfg.echo_lines(),
        )
    return 0


def cmd_stats(args) -> int:
    cfg = load_run_config(args)
    if not cfg["tasks"]:
        raise ConfigError("stats needs a task list (tasks = ...)")
    level_columns = cfg.level_columns()
    splits = {}
    for split in ("train", "dev", "test"):
        if cfg[split]:
            splits[split] = load_column_corpus(cfg[split], cfg["source_column"], level_columns)
    if not splits:
        raise ConfigError("stats needs at least one corpus path")
    if cfg["tiger_two_level"]:
        core, full = cfg["tasks"]
        for examples in splits.values():
            apply_tiger_two_level(examples, core, full)
    report = format_stats_report(corpus_stats(splits, cfg["tasks"]), cfg["tasks"])
    print(report, end="")
    if args.out:
        Path(args.out).write_text(
            "".join(f"# {line}\n" for line in cfg.echo_lines()) + report, encoding="utf-8"
        )
    return 0


def cmd_tiger_convert(args) -> int:
    examples = load_column_corpus(
        args.input, source_column=0, level_columns={"label": args.label_column}
    )
    for ex in examples:
        cores_fulls = [derive_tiger_levels(lbl) for lbl in ex.targets["label"]]
        ex.targets = {
            "core": [c for c, _ in cores_fulls],
            "full": [f for _, f in cores_fulls],
        }
    write_column_corpus(
        args.out, examples, 0, {"core": 1, "full": 2},
        header_lines=[f"derived from {args.input}"],
    )
    print(f"wrote {len(examples)} sentences to {args.out}")
    return 0


def cmd_annotate_step(args) -> int:
    cfg = load_run_config(args)
    if not cfg["tasks"]:
        raise ConfigError("annotate-step needs a task list (tasks = ...)")
    loop_dir = Path(args.loop_dir)
    loop_dir.mkdir(parents=True, exist_ok=True)
    state_path = loop_dir / "loop.json"
    if state_path.exists():
        state = annotation.LoopState.load(state_path)
    else:
        state = annotation.LoopState(
            step=0,
            bootstrap=cfg["bootstrap"] or None,
            corrected=[],
            queue=list(cfg["blocks"]),
            tasks=list(cfg["tasks"]),
        )
    if state.tasks != list(cfg["tasks"]):
        raise SchemaError(
            f"loop was started with tasks {state.tasks}, config says {cfg['tasks']}"
        )
    schemas = _schemas_from_config(cfg)
    level_columns = cfg.level_columns()
    source_column = cfg["source_column"]
    fixed_labels = _fixed_labels(cfg)

    if args.corrected:
        annotation.ingest_corrected_block(
            args.corrected, schemas, source_column, level_columns, fixed_labels
        )
        state.corrected.append(args.corrected)
        print(f"ingested corrected block {args.corrected}")

    if not state.queue:
        raise DataError("no pending blocks left to annotate (queue is empty)")
    if not state.bootstrap and not state.corrected:
        raise DataError(
            "refusing to annotate with no training data: configure a bootstrap "
            "corpus (bootstrap = ...) or ingest a corrected block with --corrected"
        )

    bootstrap_block = None
    if state.bootstrap:
        bootstrap_block = annotation.load_block(
            state.bootstrap, source_column, level_columns,
            block_id="bootstrap", provenance="bootstrap",
        )
        bootstrap_block.corrected = True
    corrected_blocks = [
        annotation.ingest_corrected_block(
            path, schemas, source_column, level_columns, fixed_labels,
            block_id=Path(path).stem,
        )
        for path in state.corrected
    ]
    pending = annotation.load_block(state.queue[0], source_column, level_columns)

    smart_source = None
    if cfg["smart_init_from"]:
        smart_source = load_checkpoint(cfg["smart_init_from"])

    model_cfg = cfg.model_config()
    result = annotation.run_step(
        state, schemas, model_cfg, bootstrap_block, corrected_blocks, pending,
        dev_fraction=cfg["dev_fraction"], smart_init_source=smart_source,
        decoding=cfg["decoding"],
    )

    ckpt_dir = loop_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    ckpt_path = ckpt_dir / f"step{state.step}.ckpt"
    save_checkpoint(ckpt_path, result.train_result.checkpoint)
    if result.manifest is not None:
        import json

        (ckpt_dir / f"step{state.step}.smart_init.json").write_text(
            json.dumps(result.manifest, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    annotated_dir = loop_dir / "annotated"
    annotated_dir.mkdir(exist_ok=True)
    annotated_path = annotated_dir / f"{pending.block_id}.step{state.step}.tsv"
    annotation.write_annotated_block(
        annotated_path, result.annotated_examples, source_column, level_columns,
        pending.block_id, state.step,
        extra_header=[f"model = {ckpt_path}"] + cfg.echo_lines(),
    )

    metrics_path = loop_dir / "metrics.tsv"
    rows = _load_metrics_rows(metrics_path, cfg["tasks"]) if metrics_path.exists() else []
    rows.append(result.metrics)
    annotation.write_metrics_table(metrics_path, rows, cfg["tasks"])
    if cfg["figures"]:
        reporting.save_loop_metrics(
            annotation.read_metrics_table(metrics_path), cfg["tasks"],
            loop_dir / "metrics.png", cfg.echo_lines(),
        )

    state.step += 1
    state.queue.pop(0)
    state.save(state_path)
    acc = " ".join(f"{k}={v:.4f}" for k, v in result.metrics.accuracies.items())
    print(f"step {result.metrics.step}: train_tokens={result.metrics.train_tokens} {acc}")
    print(f"annotated block written to {annotated_path}; correct it and pass it "
          f"back with --corrected")
    return 0


def _load_metrics_rows(path, tasks) -> list[annotation.StepMetrics]:
    rows = []
    for raw in annotation.read_metrics_table(path):
        rows.append(
            annotation.StepMetrics(
                step=int(raw["step"]),
                dev_source=raw["dev_source"],
                train_tokens=int(raw["train_tokens"]),
                target_tokens=int(raw["target_tokens"]),
                accuracies={t: float(raw[t]) for t in tasks if raw.get(t, "-") != "-"},
                annotated_block=raw.get("annotated_block", ""),
            )
        )
    return rows


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "tiger-convert": cmd_tiger_convert,
    "annotate-step": cmd_annotate_step,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"seqcascade: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as e:
        print(f"seqcascade: training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (DataError, TagError, SchemaError, CheckpointError) as e:
        print(f"seqcascade: {e}", file=sys.stderr)
        return EXIT_DATA
    except CascadeError as e:
        print(f"seqcascade: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
