"""Iterative semi-automatic annotation: train on corrected blocks, annotate
the next block, ingest human corrections, retrain — with optional smart-init
parameter transfer from a bootstrap model."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint
from .config import ModelConfig
from .corpus import (
    LevelSchema,
    SequenceExample,
    build_vocabulary,
    load_column_corpus,
    segment_example,
    write_column_corpus,
)
from .errors import DataError, SchemaError
from .model import build_model
from .training import TrainResult, evaluate_model, train

log = logging.getLogger(__name__)


@dataclass
class AnnotationBlock:
    """One corpus block moving through the annotate/correct cycle."""

    block_id: str
    examples: list[SequenceExample]
    provenance: str = "target"  # "bootstrap" or "target"
    corrected: bool = False

    @property
    def token_count(self) -> int:
        return sum(len(ex.source_tokens) for ex in self.examples)


@dataclass
class LoopState:
    """Persisted progress of the annotation loop.

    Step k trains only on blocks corrected at earlier steps (plus the
    bootstrap corpus when configured); the pending block never enters
    training or dev data for the step that annotates it.
    """

    step: int = 0
    bootstrap: str | None = None
    corrected: list[str] = field(default_factory=list)
    queue: list[str] = field(default_factory=list)
    tasks: list[str] = field(default_factory=list)

    def save(self, path) -> None:
        payload = {
            "step": self.step,
            "bootstrap": self.bootstrap,
            "corrected": self.corrected,
            "queue": self.queue,
            "tasks": self.tasks,
        }
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "LoopState":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**payload)


def split_train_dev(
    examples: list[SequenceExample], fraction: float = 0.15, seed: int = 0
) -> tuple[list[SequenceExample], list[SequenceExample]]:
    """Sentence-level random split, re-drawn at every step so the dev set
    stays representative of the growing corpus."""
    n = len(examples)
    if n < 2:
        raise DataError(f"need at least 2 sentences to split, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_dev = int(round(n * fraction))
    n_dev = min(max(n_dev, 1), n - 1)
    dev_idx = set(order[:n_dev].tolist())
    train = [examples[i] for i in range(n) if i not in dev_idx]
    dev = [examples[i] for i in range(n) if i in dev_idx]
    return train, dev


def smart_init(
    config: ModelConfig,
    schemas: list[LevelSchema],
    vocab,
    source: Checkpoint,
) -> tuple[dict[str, np.ndarray], dict]:
    """Warm-start parameters from a checkpoint with a possibly different
    architecture.

    A parameter is copied when its dotted path and shape both match; the
    shared embedding transfers row by row for symbols present in both
    vocabularies.  Everything else keeps its fresh initialization.  Returns
    the parameter map and a transfer manifest (copied/skipped partition plus
    embedding row counts).
    """
    model = build_model(config, schemas, vocab)
    params = {name: t.data.copy() for name, t in model.parameters().items()}
    copied: list[str] = []
    skipped: list[dict] = []
    rows_copied = 0
    for name, target in params.items():
        if name == "embedding.table":
            continue
        src = source.params.get(name)
        if src is None:
            skipped.append({"name": name, "reason": "missing"})
        elif tuple(src.shape) != target.shape:
            skipped.append({"name": name, "reason": f"shape {src.shape} vs {target.shape}"})
        else:
            params[name] = np.asarray(src, dtype=target.dtype).copy()
            copied.append(name)
    emb_name = "embedding.table"
    target_emb = params[emb_name]
    src_emb = source.params.get(emb_name)
    if src_emb is None:
        skipped.append({"name": emb_name, "reason": "missing"})
    elif src_emb.shape[1] != target_emb.shape[1]:
        skipped.append({"name": emb_name, "reason": "embedding width differs"})
    else:
        src_index = {s: i for i, s in enumerate(source.vocab.symbols)}
        for row, symbol in enumerate(vocab.symbols):
            src_row = src_index.get(symbol)
            if src_row is not None:
                target_emb[row] = src_emb[src_row].astype(target_emb.dtype)
                rows_copied += 1
        if rows_copied:
            copied.append(emb_name)
        else:
            skipped.append({"name": emb_name, "reason": "no shared symbols"})
    manifest = {
        "copied": sorted(copied),
        "skipped": sorted(skipped, key=lambda d: d["name"]),
        "embedding_rows_copied": rows_copied,
        "embedding_rows_total": target_emb.shape[0],
        "fully_copied": not skipped and rows_copied == target_emb.shape[0],
    }
    return params, manifest


def load_block(
    path,
    source_column: int,
    level_columns: dict[str, int],
    block_id: str | None = None,
    provenance: str = "target",
) -> AnnotationBlock:
    examples = load_column_corpus(path, source_column, level_columns)
    for ex in examples:
        ex.meta["block"] = block_id or str(path)
    return AnnotationBlock(
        block_id=block_id or Path(path).stem, examples=examples, provenance=provenance
    )


def ingest_corrected_block(
    path,
    schemas: list[LevelSchema],
    source_column: int,
    level_columns: dict[str, int],
    fixed_labels: dict[str, set[str]] | None = None,
    block_id: str | None = None,
) -> AnnotationBlock:
    """Validate a human-corrected block before it may enter training data.

    Every tag must round-trip through its componentizer and every fixed-set
    label must belong to its set; any failure rejects the block atomically,
    listing the offending lines.
    """
    block = load_block(path, source_column, level_columns, block_id=block_id)
    fixed_labels = fixed_labels or {}
    problems: list[str] = []
    for ex in block.examples:
        lines = ex.meta.get("lines", [None] * len(ex.source_tokens))
        for schema in schemas:
            allowed = fixed_labels.get(schema.name)
            for token, lineno in zip(ex.targets[schema.name], lines):
                where = f"{path}:{lineno}" if lineno else str(path)
                if allowed is not None and token not in allowed:
                    problems.append(
                        f"{where}: label {token!r} outside {sorted(allowed)} "
                        f"for level {schema.name!r}"
                    )
                    continue
                try:
                    units = schema.units_for_token(token)
                    rebuilt = schema.reconstruct_token(units)
                except Exception as e:  # noqa: BLE001 - collect every failure
                    problems.append(f"{where}: level {schema.name!r}: {e}")
                    continue
                if rebuilt != token:
                    problems.append(
                        f"{where}: level {schema.name!r}: {token!r} does not round-trip"
                    )
    if problems:
        raise DataError(
            "block rejected:\n  " + "\n  ".join(problems[:20])
            + ("" if len(problems) <= 20 else f"\n  ... {len(problems) - 20} more")
        )
    block.corrected = True
    return block


@dataclass
class StepMetrics:
    step: int
    dev_source: str
    train_tokens: int
    target_tokens: int
    accuracies: dict[str, float]
    annotated_block: str


@dataclass
class StepResult:
    metrics: StepMetrics
    train_result: TrainResult
    annotated_examples: list[SequenceExample]
    manifest: dict | None = None


def run_step(
    state: LoopState,
    schemas: list[LevelSchema],
    model_config: ModelConfig,
    bootstrap_block: AnnotationBlock | None,
    corrected_blocks: list[AnnotationBlock],
    pending_block: AnnotationBlock,
    dev_fraction: float = 0.15,
    smart_init_source: Checkpoint | None = None,
    decoding: str = "char",
) -> StepResult:
    """One loop iteration: train on bootstrap + corrected blocks, evaluate on
    a freshly drawn dev split, annotate the pending block."""
    if bootstrap_block is None and not corrected_blocks:
        raise DataError(
            "nothing to train on: provide a bootstrap corpus or at least one "
            "corrected block before annotating"
        )
    for block in corrected_blocks:
        if not block.corrected:
            raise SchemaError(f"block {block.block_id!r} has not been ingested as corrected")

    target_examples = [ex for b in corrected_blocks for ex in b.examples]
    boot_examples = list(bootstrap_block.examples) if bootstrap_block else []
    split_seed = (model_config.seed + 1) * 1_000_003 + state.step
    if target_examples:
        dev_source = "target"
        tgt_train, dev = split_train_dev(target_examples, dev_fraction, split_seed)
        train_pool = boot_examples + tgt_train
    else:
        dev_source = "bootstrap"
        train_pool, dev = split_train_dev(boot_examples, dev_fraction, split_seed)

    for ex in train_pool + dev + pending_block.examples:
        segment_example(ex, schemas, decoding)
    vocab = build_vocabulary(train_pool, schemas)

    init_params = None
    manifest = None
    if smart_init_source is not None:
        init_params, manifest = smart_init(model_config, schemas, vocab, smart_init_source)

    result = train(model_config, schemas, vocab, train_pool, dev, init_params=init_params)
    model = result.checkpoint.build_model()
    scores = evaluate_model(model, dev)

    annotated = annotate_examples(model, pending_block.examples, schemas)
    ad.tape_reset()

    train_tokens = (bootstrap_block.token_count if bootstrap_block else 0) + sum(
        b.token_count for b in corrected_blocks
    )
    metrics = StepMetrics(
        step=state.step,
        dev_source=dev_source,
        train_tokens=train_tokens,
        target_tokens=sum(b.token_count for b in corrected_blocks),
        accuracies={name: ev.accuracy for name, ev in scores.items()},
        annotated_block=pending_block.block_id,
    )
    return StepResult(
        metrics=metrics,
        train_result=result,
        annotated_examples=annotated,
        manifest=manifest,
    )


def annotate_examples(
    model, examples: list[SequenceExample], schemas: list[LevelSchema]
) -> list[SequenceExample]:
    """Predict every level for raw sentences, regrouping units into one
    annotation per source token; unmatched positions are filled with '_'."""
    from .corpus import regroup_tokens
    from .training import encode_examples

    annotated = []
    for ex in examples:
        encoded = encode_examples([ex], schemas, model.vocab, with_targets=False)[0]
        pred = model.predict(encoded.source_ids, n_tokens=encoded.n_tokens)
        targets: dict[str, list[str]] = {}
        for schema in schemas:
            cells: list[str] = []
            for group, ok in regroup_tokens(pred.units[schema.name], schema):
                if len(cells) >= len(ex.source_tokens):
                    break
                if not ok:
                    cells.append("_")
                    continue
                try:
                    cells.append(schema.reconstruct_token(group) or "_")
                except Exception:  # noqa: BLE001 - ill-formed prediction
                    cells.append("_")
            cells += ["_"] * (len(ex.source_tokens) - len(cells))
            targets[schema.name] = cells
        annotated.append(
            SequenceExample(
                source_tokens=list(ex.source_tokens), targets=targets, meta=dict(ex.meta)
            )
        )
    return annotated


def write_annotated_block(
    path,
    examples: list[SequenceExample],
    source_column: int,
    level_columns: dict[str, int],
    block_id: str,
    step: int,
    extra_header: list[str] | None = None,
) -> None:
    """Correction file: the training corpus column format plus a comment
    header carrying the block id and the producing model version."""
    header = [f"block = {block_id}", f"annotated-at-step = {step}"]
    header += extra_header or []
    write_column_corpus(path, examples, source_column, level_columns, header_lines=header)


def write_metrics_table(path, rows: list[StepMetrics], tasks: list[str]) -> None:
    """Delimited per-step metrics: step, dev origin, token counts, one
    accuracy column per task ('-' when a task is absent at that step)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ["step", "dev_source", "train_tokens", "target_tokens", *tasks,
                "annotated_block"]
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            values = [str(row.step), row.dev_source, str(row.train_tokens),
                      str(row.target_tokens)]
            for task in tasks:
                acc = row.accuracies.get(task)
                values.append("-" if acc is None else f"{acc:.4f}")
            values.append(row.annotated_block)
            fh.write("\t".join(values) + "\n")


def read_metrics_table(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            if line.strip():
                rows.append(dict(zip(header, line.rstrip("\n").split("\t"))))
    return rows
