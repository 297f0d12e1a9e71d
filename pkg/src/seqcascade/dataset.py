"""Preprocessed dataset directory: unit-id JSONL splits plus the vocabulary,
schemas, and preprocessing metadata they were built with."""

from __future__ import annotations

import json
from pathlib import Path

from .corpus import LevelSchema, SequenceExample, Vocabulary
from .errors import DataError, SchemaError

META_NAME = "meta.json"
VOCAB_NAME = "vocab.tsv"
SCHEMAS_NAME = "schemas.json"


def write_dataset(
    out_dir,
    splits: dict[str, list[SequenceExample]],
    schemas: list[LevelSchema],
    vocab: Vocabulary,
    decoding: str,
    config_echo: list[str],
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / VOCAB_NAME)
    (out / SCHEMAS_NAME).write_text(
        json.dumps([s.to_dict() for s in schemas], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    meta = {
        "decoding": decoding,
        "tasks": [s.name for s in schemas],
        "splits": sorted(splits),
        "config": config_echo,
    }
    (out / META_NAME).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    eos = vocab.eos_id
    for split, examples in splits.items():
        with open(out / f"{split}.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for ex in examples:
                if ex.source_units is None:
                    raise DataError("examples must be segmented before writing")
                record = {
                    "sid": ex.meta.get("sid"),
                    "meta": {k: v for k, v in ex.meta.items() if k != "lines"},
                    "source_tokens": ex.source_tokens,
                    "source_units": ex.source_units,
                    "source_ids": vocab.encode(ex.source_units, allow_unk=True),
                    "levels": {
                        schema.name: {
                            "tokens": ex.targets[schema.name],
                            "units": ex.target_units[schema.name],
                            "ids": vocab.encode(ex.target_units[schema.name], allow_unk=True)
                            + [eos],
                        }
                        for schema in schemas
                    },
                }
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def load_meta(data_dir) -> dict:
    path = Path(data_dir) / META_NAME
    if not path.exists():
        raise DataError(f"{data_dir}: not a preprocessed dataset (missing {META_NAME})")
    return json.loads(path.read_text(encoding="utf-8"))


def load_schemas(data_dir) -> list[LevelSchema]:
    raw = json.loads((Path(data_dir) / SCHEMAS_NAME).read_text(encoding="utf-8"))
    return [LevelSchema.from_dict(d) for d in raw]


def load_vocab(data_dir) -> Vocabulary:
    return Vocabulary.load(Path(data_dir) / VOCAB_NAME)


def load_split(data_dir, split: str) -> list[SequenceExample]:
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise DataError(f"{data_dir}: split {split!r} not found")
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"bad JSON: {e}", location=f"{path}:{lineno}") from e
            ex = SequenceExample(
                source_tokens=record["source_tokens"],
                targets={k: v["tokens"] for k, v in record["levels"].items()},
                source_units=record["source_units"],
                target_units={k: v["units"] for k, v in record["levels"].items()},
                meta=record.get("meta", {}),
            )
            examples.append(ex)
    return examples


def ensure_same_vocab(a: Vocabulary, b: Vocabulary, what: str) -> None:
    if a.symbols != b.symbols:
        raise SchemaError(f"vocabulary mismatch between {what}")
